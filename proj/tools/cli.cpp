#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <set>
#include <stdexcept>

#include "dfop/can_model.hpp"
#include "dfop/dataset_io.hpp"
#include "dfop/errors.hpp"
#include "dfop/evaluation.hpp"
#include "dfop/synthetic.hpp"
#include "dfop/training.hpp"

namespace fs = std::filesystem;

namespace dfop::cli {

namespace {

// Bad flags, missing keys, or settings that fail validation.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Invocation {
  std::string command;
  KeyValueConfig config;  // config file, then `--key value` flags
  fs::path out;
};

const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys = {
      "lr_pretrain", "lr_finetune", "epochs_pretrain", "epochs_finetune",
      "batch_size",  "early_stop_patience", "input_side", "filters1",
      "filters2",    "kernel_size", "pool_window", "fc_size"};
  return keys;
}

std::set<std::string> allowed_keys(const std::string& command) {
  std::set<std::string> keys = {"seed", "threads"};
  auto add = [&](std::initializer_list<const char*> more) { keys.insert(more.begin(), more.end()); };
  if (command == "generate") {
    const KeyValueConfig defaults = DatasetOptions{}.to_config();
    for (const auto& [k, v] : defaults.entries()) keys.insert(k);
  } else if (command == "pretrain") {
    keys.insert(train_keys().begin(), train_keys().end());
    add({"manifest", "split", "dev_fraction", "split_seed"});
  } else if (command == "finetune") {
    keys.insert(train_keys().begin(), train_keys().end());
    add({"manifest", "split", "dev_fraction", "split_seed", "weights"});
  } else if (command == "score") {
    add({"weights", "container", "bbox", "threshold"});
  } else if (command == "evaluate") {
    add({"weights", "manifest", "split", "dev_fraction", "split_seed", "threshold", "window"});
  }
  return keys;
}

// Turns leftover `--key value` / `--key=value` tokens into config entries.
KeyValueConfig parse_overrides(const std::vector<std::string>& extras,
                               const std::set<std::string>& allowed) {
  KeyValueConfig overrides;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& token = extras[i];
    if (token.rfind("--", 0) != 0 || token.size() == 2) {
      throw UsageError("unexpected argument '" + token + "'");
    }
    std::string key = token.substr(2), value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw UsageError("missing value for --" + key);
      value = extras[++i];
    }
    if (!allowed.count(key)) throw UsageError("unknown option --" + key);
    overrides.set(key, value);
  }
  return overrides;
}

std::string require(const KeyValueConfig& cfg, const std::string& key) {
  auto v = cfg.get(key);
  if (!v || v->empty()) throw UsageError("missing required setting '" + key + "'");
  return *v;
}

// Reads typed settings; malformed values are usage errors.
template <typename F>
auto settings(F&& read) {
  try {
    return read();
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int threads_of(const KeyValueConfig& cfg) {
  const auto n = settings([&] { return cfg.get_int("threads", 1); });
  if (n < 1) throw UsageError("threads must be >= 1");
  return static_cast<int>(n);
}

void prepare_output(const Invocation& inv) {
  fs::create_directories(inv.out);
  KeyValueConfig resolved = inv.config;
  resolved.set("command", inv.command);
  resolved.save(inv.out / "resolved.cfg");
}

// Clips of a manifest restricted to `split` ("dev", "eval" or "all"); the
// identity split is recomputed from split_seed and dev_fraction.
std::vector<FrameSequence> load_split(const KeyValueConfig& cfg, const std::string& default_split) {
  const fs::path manifest = require(cfg, "manifest");
  const std::string split = cfg.get_string("split", default_split);
  if (split != "dev" && split != "eval" && split != "all") {
    throw UsageError("split must be dev, eval or all, got '" + split + "'");
  }
  const double dev_fraction = settings([&] { return cfg.get_double("dev_fraction", 0.7); });
  const std::uint64_t split_seed =
      settings([&] { return cfg.get_u64("split_seed", cfg.get_u64("seed", 0)); });

  std::vector<FrameSequence> clips;
  for (const auto& entry : read_manifest(manifest)) {
    clips.push_back(load_clip(entry, manifest.parent_path()));
  }
  if (split == "all") return clips;
  if (dev_fraction < 0.0 || dev_fraction > 1.0) throw UsageError("dev_fraction must be in [0, 1]");
  DatasetSplit parts = split_by_identity(std::move(clips), dev_fraction, split_seed);
  return split == "dev" ? std::move(parts.dev) : std::move(parts.eval);
}

TrainConfig train_config(const KeyValueConfig& cfg) {
  return settings([&] {
    TrainConfig tc = TrainConfig::from_config(cfg);
    tc.threads = threads_of(cfg);
    tc.validate();
    return tc;
  });
}

int cmd_generate(const Invocation& inv, std::ostream& out) {
  const auto options = settings([&] {
    DatasetOptions o = DatasetOptions::from_config(inv.config);
    o.validate();
    return o;
  });
  const std::uint64_t seed = settings([&] { return inv.config.get_u64("seed", 0); });
  prepare_output(inv);
  const auto clips = generate_dataset(options, seed);
  std::vector<ManifestEntry> manifest;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04zu.dfv", i);
    write_container(clips[i], inv.out / name);
    if (clips[i].pulse_truth) write_pulse_file(*clips[i].pulse_truth, pulse_sidecar_path(inv.out / name));
    manifest.push_back({name, clips[i].identity_id, clips[i].label, "center", ""});
  }
  write_manifest(manifest, inv.out / "manifest.csv");
  KeyValueConfig spec = options.to_config();
  spec.set("seed", std::to_string(seed));
  spec.save(inv.out / "dataset.cfg");
  out << "generated " << clips.size() << " clips in " << inv.out.string() << '\n';
  return kOk;
}

void report_log(const TrainLog& log, std::ostream& out) {
  for (const auto& e : log) {
    out << e.phase << " epoch " << e.epoch << " loss " << e.loss << " metric " << e.metric << '\n';
  }
}

int cmd_pretrain(const Invocation& inv, std::ostream& out) {
  const TrainConfig tc = train_config(inv.config);
  const auto clips = load_split(inv.config, "dev");
  prepare_output(inv);
  const TrainResult result = pretrain_hr(tc, clips);
  save_weights(result.weights, inv.out / "weights.dfw");
  write_train_log(result.log, inv.out / "train_log.csv");
  report_log(result.log, out);
  return kOk;
}

int cmd_finetune(const Invocation& inv, std::ostream& out) {
  const TrainConfig tc = train_config(inv.config);
  const CanWeights pretrained = load_weights(require(inv.config, "weights"));
  const auto clips = load_split(inv.config, "dev");
  prepare_output(inv);
  const TrainResult result = finetune_detector(tc, pretrained, clips);
  save_weights(result.weights, inv.out / "weights.dfw");
  write_train_log(result.log, inv.out / "train_log.csv");
  report_log(result.log, out);
  return kOk;
}

int cmd_score(const Invocation& inv, std::ostream& out) {
  const int threads = threads_of(inv.config);
  const double threshold = settings([&] { return inv.config.get_double("threshold", 0.5); });
  const CanWeights weights = load_weights(require(inv.config, "weights"));
  FrameSequence clip = read_container(require(inv.config, "container"));
  if (const auto bbox = inv.config.get("bbox"); bbox && !bbox->empty()) {
    clip.boxes = read_bbox_file(*bbox);
  }
  prepare_output(inv);
  const ScoreTimeline timeline = score_video(weights, clip, threads);
  export_timeline(timeline, inv.out / "timeline.csv", threshold);
  out << "scored " << timeline.scores.size() << " frames of " << timeline.video_id << '\n';
  return kOk;
}

int cmd_evaluate(const Invocation& inv, std::ostream& out) {
  const int threads = threads_of(inv.config);
  const double threshold = settings([&] { return inv.config.get_double("threshold", 0.5); });
  const auto window = settings([&] { return inv.config.get_int("window", 15); });
  if (window < 1) throw UsageError("window must be >= 1");
  const CanWeights weights = load_weights(require(inv.config, "weights"));
  const auto clips = load_split(inv.config, "eval");
  prepare_output(inv);
  const std::string split = inv.config.get_string("split", "eval");
  const Evaluation ev = evaluate_split(weights, clips, threshold, static_cast<std::size_t>(window),
                                       split, threads);
  write_report(ev.report, inv.out / "report.txt");
  export_roc(ev.frame_scores, ev.frame_labels, inv.out / "roc.csv");
  fs::create_directories(inv.out / "timelines");
  for (const auto& tl : ev.timelines) {
    export_timeline(tl, inv.out / "timelines" / (tl.video_id + ".csv"), threshold);
  }
  out << std::setprecision(6) << "frame auc " << ev.report.auc << " accuracy " << ev.report.accuracy
      << " video auc " << ev.report.video_auc << '\n';
  return kOk;
}

Invocation parse(const std::vector<std::string>& args) {
  CLI::App app{"DeepFakesON-Phys synthetic pipeline", "dfop"};
  app.require_subcommand(1);
  std::string config_path, seed, out_dir, threads;
  for (const char* name : {"generate", "pretrain", "finetune", "score", "evaluate"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->allow_extras();
    sub->add_option("--config", config_path, "key=value settings file");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--threads", threads, "worker threads");
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  app.parse(reversed);

  Invocation inv;
  CLI::App* sub = app.get_subcommands().front();
  inv.command = sub->get_name();
  inv.out = out_dir;
  if (!config_path.empty()) {
    try {
      inv.config = KeyValueConfig::load(config_path);
    } catch (const FormatError& e) {
      throw UsageError(e.what());
    }
  }
  inv.config.merge(parse_overrides(sub->remaining(), allowed_keys(inv.command)));
  if (!seed.empty()) inv.config.set("seed", seed);
  if (!threads.empty()) inv.config.set("threads", threads);
  return inv;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Invocation inv;
  try {
    inv = parse(args);
  } catch (const CLI::CallForHelp&) {
    out << "usage: dfop {generate|pretrain|finetune|score|evaluate} --out DIR [--config PATH] "
           "[--seed N] [--threads N] [--key value ...]\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "dfop: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    err << "dfop: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (inv.command == "generate") return cmd_generate(inv, out);
    if (inv.command == "pretrain") return cmd_pretrain(inv, out);
    if (inv.command == "finetune") return cmd_finetune(inv, out);
    if (inv.command == "score") return cmd_score(inv, out);
    return cmd_evaluate(inv, out);
  } catch (const UsageError& e) {
    err << "dfop " << inv.command << ": " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "dfop " << inv.command << ": numeric abort: " << e.what() << '\n';
    return kNumericAbort;
  } catch (const std::exception& e) {
    err << "dfop " << inv.command << ": " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace dfop::cli
