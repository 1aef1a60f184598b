#include "dfop/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace dfop {

void PulseParams::validate() const {
  if (heart_rate < 0.7 || heart_rate > 4.0) {
    throw std::invalid_argument("heart rate outside [0.7, 4.0] Hz");
  }
  if (amplitude < 0.0 || amplitude > 1.0) throw std::invalid_argument("amplitude outside [0, 1]");
}

std::size_t SyntheticVideoSpec::frame_count() const {
  return static_cast<std::size_t>(std::floor(duration * fps + 1e-9));
}

void SyntheticVideoSpec::validate() const {
  pulse.validate();
  if (fps < 1 || fps > 255) throw std::invalid_argument("fps must be in [1, 255]");
  if (side < 2) throw std::invalid_argument("frame side must be >= 2");
  if (frame_count() < 2) throw std::invalid_argument("duration * fps must give >= 2 frames");
  if (noise_std < 0.0) throw std::invalid_argument("noise_std must be >= 0");
  if (label == Label::unlabeled) throw std::invalid_argument("synthetic clips need a label");
}

double bvp_signal(double t, const PulseParams& p) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return std::sin(two_pi * p.heart_rate * t + p.phase) +
         0.5 * std::sin(2.0 * two_pi * p.heart_rate * t + 2.0 * p.phase);
}

bool inside_face(int x, int y, int side) {
  const double c = 0.5 * side;
  const double dx = (x + 0.5 - c) / (0.32 * side);
  const double dy = (y + 0.5 - c) / (0.42 * side);
  return dx * dx + dy * dy <= 1.0;
}

FrameSequence render_video(const SyntheticVideoSpec& spec) {
  spec.validate();
  const std::size_t frames = spec.frame_count();
  const auto side = static_cast<std::size_t>(spec.side);
  std::vector<bool> face(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      face[y * side + x] = inside_face(static_cast<int>(x), static_cast<int>(y), spec.side);
    }
  }

  FrameSequence seq;
  seq.video_id = spec.video_id;
  seq.identity_id = spec.identity_id;
  seq.label = spec.label;
  seq.fps = spec.fps;
  seq.frames.reserve(frames);
  std::vector<double> truth(frames, 0.0);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const bool pulsing = spec.label == Label::real;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  for (std::size_t t = 0; t < frames; ++t) {
    const double time = static_cast<double>(t) / spec.fps;
    const double bvp = bvp_signal(time, spec.pulse);
    if (pulsing) truth[t] = bvp;
    const double gain =
        1.0 + spec.drift_amplitude * std::sin(two_pi * spec.drift_frequency * time + spec.drift_phase);
    Rgb face_color = spec.skin;
    if (pulsing) {
      for (std::size_t c = 0; c < 3; ++c) {
        face_color[c] += spec.pulse.amplitude * bvp * kPulseChannelWeights[c];
      }
    }
    RawFrame frame(side, side);
    for (std::size_t i = 0; i < side * side; ++i) {
      const Rgb& base = face[i] ? face_color : spec.background;
      for (std::size_t c = 0; c < 3; ++c) {
        // Draw unconditionally so the noise field is identical across labels.
        const double n = noise(rng);
        const double v = 255.0 * base[c] * gain + spec.noise_std * n;
        frame.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
    seq.frames.push_back(std::move(frame));
  }
  seq.pulse_truth = std::move(truth);
  return seq;
}

void DatasetOptions::validate() const {
  if (n_identities < 2) throw std::invalid_argument("need at least 2 identities");
  if (clips_per_identity < 1) throw std::invalid_argument("clips_per_identity must be >= 1");
  if (real_fraction < 0.0 || real_fraction > 1.0) {
    throw std::invalid_argument("real_fraction must be in [0, 1]");
  }
  if (amplitude_min < 0.0 || amplitude_max < amplitude_min) {
    throw std::invalid_argument("bad amplitude range");
  }
  if (hr_min < 0.7 || hr_max > 4.0 || hr_max < hr_min) {
    throw std::invalid_argument("heart-rate range must lie in [0.7, 4.0] Hz");
  }
  if (amplitude_scale < 0.0) throw std::invalid_argument("amplitude_scale must be >= 0");
  if (fps < 1 || fps > 255) throw std::invalid_argument("fps must be in [1, 255]");
  if (side < 2) throw std::invalid_argument("frame side must be >= 2");
  if (std::floor(duration * fps + 1e-9) < 2) {
    throw std::invalid_argument("duration * fps must give >= 2 frames");
  }
  if (noise_std < 0.0) throw std::invalid_argument("noise_std must be >= 0");
}

KeyValueConfig DatasetOptions::to_config() const {
  KeyValueConfig c;
  c.set("n_identities", std::to_string(n_identities));
  c.set("clips_per_identity", std::to_string(clips_per_identity));
  c.set("real_fraction", format_double(real_fraction));
  c.set("duration", format_double(duration));
  c.set("fps", std::to_string(fps));
  c.set("frame_side", std::to_string(side));
  c.set("noise_std", format_double(noise_std));
  c.set("amplitude_min", format_double(amplitude_min));
  c.set("amplitude_max", format_double(amplitude_max));
  c.set("hr_min", format_double(hr_min));
  c.set("hr_max", format_double(hr_max));
  c.set("drift_amplitude", format_double(drift_amplitude));
  c.set("drift_frequency", format_double(drift_frequency));
  c.set("amplitude_scale", format_double(amplitude_scale));
  return c;
}

DatasetOptions DatasetOptions::from_config(const KeyValueConfig& cfg) {
  DatasetOptions o;
  o.n_identities = static_cast<int>(cfg.get_int("n_identities", o.n_identities));
  o.clips_per_identity = static_cast<int>(cfg.get_int("clips_per_identity", o.clips_per_identity));
  o.real_fraction = cfg.get_double("real_fraction", o.real_fraction);
  o.duration = cfg.get_double("duration", o.duration);
  o.fps = static_cast<int>(cfg.get_int("fps", o.fps));
  o.side = static_cast<int>(cfg.get_int("frame_side", o.side));
  o.noise_std = cfg.get_double("noise_std", o.noise_std);
  o.amplitude_min = cfg.get_double("amplitude_min", o.amplitude_min);
  o.amplitude_max = cfg.get_double("amplitude_max", o.amplitude_max);
  o.hr_min = cfg.get_double("hr_min", o.hr_min);
  o.hr_max = cfg.get_double("hr_max", o.hr_max);
  o.drift_amplitude = cfg.get_double("drift_amplitude", o.drift_amplitude);
  o.drift_frequency = cfg.get_double("drift_frequency", o.drift_frequency);
  o.amplitude_scale = cfg.get_double("amplitude_scale", o.amplitude_scale);
  return o;
}

std::vector<SyntheticVideoSpec> plan_dataset(const DatasetOptions& o, std::uint64_t seed) {
  o.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const auto n_real = static_cast<int>(std::lround(o.real_fraction * o.clips_per_identity));

  std::vector<SyntheticVideoSpec> specs;
  specs.reserve(static_cast<std::size_t>(o.n_identities * o.clips_per_identity));
  for (int i = 0; i < o.n_identities; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "id%03d", i);
    const double r = uniform(0.55, 0.85);
    const Rgb skin{r, r * uniform(0.62, 0.78), r * uniform(0.48, 0.66)};
    const double gray = uniform(0.15, 0.45);
    const Rgb background{gray + uniform(-0.05, 0.05), gray + uniform(-0.05, 0.05),
                         gray + uniform(-0.05, 0.05)};
    const double heart_rate = uniform(o.hr_min, o.hr_max);
    const double amplitude = uniform(o.amplitude_min, o.amplitude_max);
    for (int j = 0; j < o.clips_per_identity; ++j) {
      SyntheticVideoSpec s;
      char vid[48];
      std::snprintf(vid, sizeof(vid), "%s_clip%d", id, j);
      s.video_id = vid;
      s.identity_id = id;
      s.label = j < n_real ? Label::real : Label::fake;
      s.duration = o.duration;
      s.fps = o.fps;
      s.side = o.side;
      s.skin = skin;
      s.background = background;
      s.pulse = {heart_rate, amplitude * o.amplitude_scale, uniform(0.0, 2.0 * std::numbers::pi)};
      s.noise_std = o.noise_std;
      s.drift_amplitude = o.drift_amplitude;
      s.drift_frequency = o.drift_frequency;
      s.drift_phase = uniform(0.0, 2.0 * std::numbers::pi);
      s.seed = rng();
      specs.push_back(std::move(s));
    }
  }
  return specs;
}

std::vector<FrameSequence> generate_dataset(const DatasetOptions& options, std::uint64_t seed) {
  std::vector<FrameSequence> clips;
  for (const auto& spec : plan_dataset(options, seed)) clips.push_back(render_video(spec));
  return clips;
}

IdentitySplit split_identities(const std::vector<std::string>& identity_ids, double dev_fraction,
                               std::uint64_t seed) {
  const std::set<std::string> unique(identity_ids.begin(), identity_ids.end());
  if (unique.size() < 2) throw std::invalid_argument("split needs at least 2 identities");
  if (dev_fraction < 0.0 || dev_fraction > 1.0) {
    throw std::invalid_argument("dev_fraction must be in [0, 1]");
  }
  std::vector<std::string> ids(unique.begin(), unique.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  // The tolerance keeps e.g. 0.7 * 10 (= 7.000000000000001) at 7.
  const auto n_dev = static_cast<std::size_t>(
      std::ceil(dev_fraction * static_cast<double>(ids.size()) - 1e-9));
  IdentitySplit split;
  split.dev.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_dev));
  split.eval.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_dev), ids.end());
  return split;
}

DatasetSplit split_by_identity(std::vector<FrameSequence> dataset, double dev_fraction,
                               std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(dataset.size());
  for (const auto& clip : dataset) ids.push_back(clip.identity_id);
  DatasetSplit out;
  out.identities = split_identities(ids, dev_fraction, seed);
  const std::set<std::string> dev(out.identities.dev.begin(), out.identities.dev.end());
  for (auto& clip : dataset) {
    (dev.count(clip.identity_id) ? out.dev : out.eval).push_back(std::move(clip));
  }
  return out;
}

}  // namespace dfop
