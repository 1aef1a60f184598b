#include "dfop/training.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "dfop/errors.hpp"
#include "dfop/evaluation.hpp"
#include "dfop/parallel.hpp"

namespace dfop {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void TrainConfig::validate() const {
  if (!(learning_rate_pretrain >= 0.0) || !(learning_rate_finetune >= 0.0)) {
    throw std::invalid_argument("learning rates must be >= 0");
  }
  if (epochs_pretrain < 0 || epochs_finetune < 0) {
    throw std::invalid_argument("epoch counts must be >= 0");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (early_stop_patience < 1) throw std::invalid_argument("early_stop_patience must be >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  model.validate();
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig c;
  c.set("lr_pretrain", format_double(learning_rate_pretrain));
  c.set("lr_finetune", format_double(learning_rate_finetune));
  c.set("epochs_pretrain", std::to_string(epochs_pretrain));
  c.set("epochs_finetune", std::to_string(epochs_finetune));
  c.set("batch_size", std::to_string(batch_size));
  c.set("seed", std::to_string(seed));
  c.set("early_stop_patience", std::to_string(early_stop_patience));
  c.set("input_side", std::to_string(model.input_side));
  c.set("filters1", std::to_string(model.filters1));
  c.set("filters2", std::to_string(model.filters2));
  c.set("kernel_size", std::to_string(model.kernel_size));
  c.set("pool_window", std::to_string(model.pool_window));
  c.set("fc_size", std::to_string(model.fc_size));
  return c;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  TrainConfig t;
  t.learning_rate_pretrain = cfg.get_double("lr_pretrain", t.learning_rate_pretrain);
  t.learning_rate_finetune = cfg.get_double("lr_finetune", t.learning_rate_finetune);
  t.epochs_pretrain = static_cast<int>(cfg.get_int("epochs_pretrain", t.epochs_pretrain));
  t.epochs_finetune = static_cast<int>(cfg.get_int("epochs_finetune", t.epochs_finetune));
  t.batch_size = static_cast<int>(cfg.get_int("batch_size", t.batch_size));
  t.seed = cfg.get_u64("seed", t.seed);
  t.early_stop_patience =
      static_cast<int>(cfg.get_int("early_stop_patience", t.early_stop_patience));
  t.threads = static_cast<int>(cfg.get_int("threads", t.threads));
  auto u32 = [&](const char* key, std::uint32_t fallback) {
    const auto v = cfg.get_int(key, fallback);
    if (v < 0 || v > 0xFFFFFFFFLL) throw FormatError(std::string("config key '") + key + "' out of range");
    return static_cast<std::uint32_t>(v);
  };
  t.model.input_side = u32("input_side", t.model.input_side);
  t.model.filters1 = u32("filters1", t.model.filters1);
  t.model.filters2 = u32("filters2", t.model.filters2);
  t.model.kernel_size = u32("kernel_size", t.model.kernel_size);
  t.model.pool_window = u32("pool_window", t.model.pool_window);
  t.model.fc_size = u32("fc_size", t.model.fc_size);
  return t;
}

void write_train_log(const TrainLog& log, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "epoch,phase,loss,metric,seconds\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.phase << ',' << format_double(e.loss) << ','
       << format_double(e.metric) << ',' << format_double(e.seconds) << '\n';
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << os.str())) throw FormatError("cannot write " + path.string());
}

std::vector<TrainingSample> pretrain_samples(std::span<const FrameSequence> clips,
                                             std::size_t side) {
  std::vector<TrainingSample> samples;
  for (const auto& clip : clips) {
    if (!clip.pulse_truth) {
      throw FormatError("clip '" + clip.video_id + "' has no pulse ground truth");
    }
    const auto& pulse = *clip.pulse_truth;
    for (auto& pair : sequence_to_inputs(clip, side)) {
      const std::size_t t = pair.frame_index;
      samples.push_back({std::move(pair), pulse[t] - pulse[t - 1], clip.video_id});
    }
  }
  return samples;
}

std::vector<TrainingSample> detection_samples(std::span<const FrameSequence> clips,
                                              std::size_t side) {
  std::vector<TrainingSample> samples;
  for (const auto& clip : clips) {
    if (clip.label == Label::unlabeled) {
      throw FormatError("clip '" + clip.video_id + "' has no real/fake label");
    }
    const double target = clip.label == Label::real ? 1.0 : 0.0;
    for (auto& pair : sequence_to_inputs(clip, side)) {
      samples.push_back({std::move(pair), target, clip.video_id});
    }
  }
  return samples;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowVector = Eigen::Map<const Eigen::RowVectorXd>;

struct SampleResult {
  double loss = 0.0;
  std::vector<Tensor> grads;  // fully-connected weight slot left empty
  Tensor fc_grad;             // d(loss)/d(fc pre-activation)
  Tensor features;            // input to the fully-connected layer
};

// Loss and d(loss)/d(head pre-activation) for one head output.
std::pair<double, double> loss_and_grad(double output, double target, LossKind kind) {
  if (kind == LossKind::mse) return {mse_loss(output, target), mse_loss_grad(output, target)};
  const int label = target > 0.5 ? 1 : 0;
  const double score = sigmoid(output);
  return {bce_loss(score, label), bce_loss_grad(score, label) * score * (1.0 - score)};
}

// Runs `evaluate(i)` for each batch element, then sums gradients in batch
// order, averages, and applies one SGD step. Returns the mean loss.
template <typename Evaluate, typename Describe>
double accumulate_and_step(CanWeights& weights, std::size_t batch_size, double learning_rate,
                           int threads, Evaluate&& evaluate, Describe&& describe) {
  if (batch_size == 0) throw std::invalid_argument("empty batch");
  for (auto& p : weights.params) p.zero_grad();
  double loss_sum = 0.0;
  const std::size_t chunk = static_cast<std::size_t>(std::max(threads, 1));
  Tensor& fc_weight_grad = weights.params[CanWeights::kFcW].grad;
  // Per-sample fc pre-activation gradients and fc inputs, one row per sample.
  RowMatrix fc_grads(static_cast<Eigen::Index>(batch_size),
                     static_cast<Eigen::Index>(fc_weight_grad.dim(0)));
  RowMatrix fc_inputs(static_cast<Eigen::Index>(batch_size),
                      static_cast<Eigen::Index>(fc_weight_grad.dim(1)));
  std::vector<SampleResult> results(std::min(chunk, batch_size));
  for (std::size_t begin = 0; begin < batch_size; begin += chunk) {
    const std::size_t count = std::min(chunk, batch_size - begin);
    parallel_for(count, threads, [&](std::size_t i) { results[i] = evaluate(begin + i); });
    for (std::size_t i = 0; i < count; ++i) {
      SampleResult& r = results[i];
      if (!std::isfinite(r.loss)) throw NumericError("non-finite loss at " + describe(begin + i));
      loss_sum += r.loss;
      for (std::size_t s = 0; s < CanWeights::kSlotCount; ++s) {
        if (!r.grads[s].empty()) weights.params[s].grad += r.grads[s];
      }
      const auto row = static_cast<Eigen::Index>(begin + i);
      fc_grads.row(row) = ConstRowVector(r.fc_grad.data(), fc_grads.cols());
      fc_inputs.row(row) = ConstRowVector(r.features.data(), fc_inputs.cols());
    }
  }
  Eigen::Map<RowMatrix>(fc_weight_grad.data(), fc_grads.cols(), fc_inputs.cols()).noalias() =
      fc_grads.transpose() * fc_inputs;
  const double scale = 1.0 / static_cast<double>(batch_size);
  for (auto& p : weights.params) p.grad *= scale;
  sgd_step(weights.params, learning_rate);
  return loss_sum * scale;
}

std::string describe_sample(const TrainingSample& s) {
  return "clip '" + s.clip + "' frame " + std::to_string(s.input.frame_index);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

double train_step(CanWeights& weights, std::span<const TrainingSample* const> batch, LossKind loss,
                  double learning_rate, int threads) {
  const bool include_trunk = !weights.trunk_frozen();
  return accumulate_and_step(
      weights, batch.size(), learning_rate, threads,
      [&](std::size_t i) {
        const TrainingSample& s = *batch[i];
        CanActivations acts;
        const double out = forward_raw(s.input.motion, s.input.appearance, weights, acts);
        const auto [l, g] = loss_and_grad(out, s.target, loss);
        SampleResult r{l, {}, {}, {}};
        r.grads = backward(acts, weights, g, include_trunk, &r.fc_grad);
        r.features = std::move(acts.features);
        return r;
      },
      [&](std::size_t i) { return describe_sample(*batch[i]); });
}

TrainResult pretrain_hr(const TrainConfig& config, std::span<const FrameSequence> dev_set) {
  config.validate();
  CanConfig model = config.model;
  model.head = HeadKind::regression;
  TrainResult result{CanWeights::initialize(model, derive_seed(config.seed, kInitStream)), {}};
  if (config.epochs_pretrain == 0) return result;

  const auto samples = pretrain_samples(dev_set, model.input_side);
  if (samples.empty()) throw std::invalid_argument("pretraining set is empty");
  std::vector<const TrainingSample*> order(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) order[i] = &samples[i];
  std::mt19937_64 rng(derive_seed(config.seed, kPretrainShuffle));
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs_pretrain; ++epoch) {
    const auto start = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double weighted_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t n = std::min(batch, order.size() - b);
      const double loss = train_step(result.weights, std::span(order).subspan(b, n), LossKind::mse,
                                     config.learning_rate_pretrain, config.threads);
      weighted_loss += loss * static_cast<double>(n);
    }
    const double mean = weighted_loss / static_cast<double>(order.size());
    result.log.push_back({epoch, "pretrain", mean, mean, seconds_since(start)});
  }
  return result;
}

TrainResult finetune_detector(const TrainConfig& config, const CanWeights& pretrained,
                              std::span<const FrameSequence> dev_set) {
  config.validate();
  if (pretrained.config.head != HeadKind::regression) {
    throw std::logic_error("finetune_detector: pretrained weights must carry a regression head");
  }
  CanWeights weights =
      freeze_for_transfer(convert_head(pretrained, derive_seed(config.seed, kHeadInit)));
  TrainResult result{weights, {}};
  if (config.epochs_finetune == 0) return result;

  // The trunk is frozen, so its output per frame is fixed for the whole run.
  std::vector<Tensor> features;
  std::vector<double> targets;
  std::vector<std::string> where;
  for (const auto& clip : dev_set) {
    const auto samples = detection_samples(std::span(&clip, 1), weights.config.input_side);
    const std::size_t base = features.size();
    features.resize(base + samples.size());
    parallel_for(samples.size(), config.threads, [&](std::size_t i) {
      features[base + i] =
          trunk_features(samples[i].input.motion, samples[i].input.appearance, weights);
    });
    for (const auto& s : samples) {
      targets.push_back(s.target);
      where.push_back(describe_sample(s));
    }
  }
  if (features.empty()) throw std::invalid_argument("fine-tuning set is empty");
  std::vector<int> labels(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) labels[i] = targets[i] > 0.5 ? 1 : 0;

  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(config.seed, kFinetuneShuffle));
  const auto batch = static_cast<std::size_t>(config.batch_size);
  double best_auc = -1.0;
  int stale_epochs = 0;

  for (int epoch = 1; epoch <= config.epochs_finetune; ++epoch) {
    const auto start = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double weighted_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t n = std::min(batch, order.size() - b);
      const double loss = accumulate_and_step(
          weights, n, config.learning_rate_finetune, config.threads,
          [&](std::size_t i) {
            const std::size_t k = order[b + i];
            CanActivations acts;
            const double out = head_output(features[k], weights, &acts);
            const auto [l, g] = loss_and_grad(out, targets[k], LossKind::bce);
            SampleResult r{l, {}, {}, {}};
            r.grads = backward(acts, weights, g, false, &r.fc_grad);
            r.features = features[k];
            return r;
          },
          [&](std::size_t i) { return where[order[b + i]]; });
      weighted_loss += loss * static_cast<double>(n);
    }

    std::vector<double> scores(features.size());
    parallel_for(features.size(), config.threads,
                 [&](std::size_t i) { scores[i] = sigmoid(head_output(features[i], weights)); });
    const double dev_auc = auc(scores, labels);
    result.log.push_back({epoch, "finetune", weighted_loss / static_cast<double>(order.size()),
                          dev_auc, seconds_since(start)});
    if (dev_auc > best_auc) {
      best_auc = dev_auc;
      result.weights = weights;
      stale_epochs = 0;
    } else if (++stale_epochs >= config.early_stop_patience) {
      break;
    }
  }
  for (auto& p : result.weights.params) p.zero_grad();
  return result;
}

}  // namespace dfop
