#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dfop/config.hpp"
#include "dfop/preprocessing.hpp"

namespace dfop {

struct PulseParams {
  double heart_rate = 1.2;  // Hz, within [0.7, 4.0]
  double amplitude = 0.01;  // peak modulation, fraction of full scale
  double phase = 0.0;       // radians

  void validate() const;
};

using Rgb = std::array<double, 3>;  // channel values in [0,1]

// Green-weighted skin response to the pulse.
inline constexpr Rgb kPulseChannelWeights = {0.3, 1.0, 0.5};

/// Everything needed to render one clip; rendering is a pure function of it.
struct SyntheticVideoSpec {
  std::string video_id;
  std::string identity_id;
  Label label = Label::real;
  double duration = 6.0;  // seconds
  int fps = 15;
  int side = 64;
  Rgb skin{0.7, 0.5, 0.4};
  Rgb background{0.3, 0.3, 0.3};
  PulseParams pulse;
  double noise_std = 2.0;  // 8-bit pixel units
  double drift_amplitude = 0.0;
  double drift_frequency = 0.1;  // Hz
  double drift_phase = 0.0;
  std::uint64_t seed = 0;

  std::size_t frame_count() const;
  void validate() const;
};

// sin(2 pi hr t + phase) + 0.5 sin(4 pi hr t + 2 phase); amplitude is not applied.
double bvp_signal(double t, const PulseParams& p);

// Whether pixel (x, y) lies inside the face ellipse of a side x side frame.
bool inside_face(int x, int y, int side);

FrameSequence render_video(const SyntheticVideoSpec& spec);

struct DatasetOptions {
  int n_identities = 40;
  int clips_per_identity = 4;
  double real_fraction = 0.5;
  double duration = 6.0;
  int fps = 15;
  int side = 64;
  double noise_std = 2.0;
  double amplitude_min = 0.01;
  double amplitude_max = 0.02;
  double hr_min = 0.9;
  double hr_max = 2.0;
  double drift_amplitude = 0.0;
  double drift_frequency = 0.1;
  // Multiplies the pulse amplitude of every clip; 0 removes the pulse from
  // real clips while leaving every random draw unchanged.
  double amplitude_scale = 1.0;

  void validate() const;
  KeyValueConfig to_config() const;
  static DatasetOptions from_config(const KeyValueConfig& cfg);
};

// Per-clip render specs, deterministic in (options, seed).
std::vector<SyntheticVideoSpec> plan_dataset(const DatasetOptions& options, std::uint64_t seed);
std::vector<FrameSequence> generate_dataset(const DatasetOptions& options, std::uint64_t seed);

struct IdentitySplit {
  std::vector<std::string> dev;
  std::vector<std::string> eval;
};

// Sorts the distinct ids, shuffles them with `seed` and sends the first
// ceil(dev_fraction * n) to dev. Throws std::invalid_argument on < 2 ids.
IdentitySplit split_identities(const std::vector<std::string>& identity_ids, double dev_fraction,
                               std::uint64_t seed);

struct DatasetSplit {
  std::vector<FrameSequence> dev;
  std::vector<FrameSequence> eval;
  IdentitySplit identities;
};

DatasetSplit split_by_identity(std::vector<FrameSequence> dataset, double dev_fraction,
                               std::uint64_t seed);

}  // namespace dfop
