#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dfop/can_model.hpp"
#include "dfop/config.hpp"
#include "dfop/preprocessing.hpp"

namespace dfop {

struct TrainConfig {
  double learning_rate_pretrain = 1e-3;
  double learning_rate_finetune = 0.1;
  int epochs_pretrain = 15;
  int epochs_finetune = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int early_stop_patience = 3;
  int threads = 1;
  CanConfig model;

  void validate() const;
  KeyValueConfig to_config() const;
  // Keys absent from `cfg` keep their defaults.
  static TrainConfig from_config(const KeyValueConfig& cfg);
};

struct TrainLogEntry {
  int epoch = 0;
  std::string phase;  // "pretrain" or "finetune"
  double loss = 0.0;    // mean training loss over the epoch
  double metric = 0.0;  // pretrain: epoch MSE; finetune: dev-split frame AUC
  double seconds = 0.0;
};

using TrainLog = std::vector<TrainLogEntry>;

void write_train_log(const TrainLog& log, const std::filesystem::path& path);

enum class LossKind { mse, bce };

struct TrainingSample {
  ModelInputPair input;
  double target = 0.0;  // heart-rate derivative (mse) or 1 real / 0 fake (bce)
  std::string clip;
};

// One sample per frame pair, target pulse[t] - pulse[t-1]. Throws FormatError
// naming the clip when pulse truth is missing.
std::vector<TrainingSample> pretrain_samples(std::span<const FrameSequence> clips,
                                             std::size_t side);
// One sample per frame pair, target 1 for real clips and 0 for fakes.
std::vector<TrainingSample> detection_samples(std::span<const FrameSequence> clips,
                                              std::size_t side);

// Mean loss over the batch; gradients are averaged and one SGD step is
// applied. Per-sample work may run on `threads` workers; the gradient sum is
// always taken in batch order, so results do not depend on `threads`.
// Throws NumericError naming the clip and frame if a loss is not finite.
double train_step(CanWeights& weights, std::span<const TrainingSample* const> batch,
                  LossKind loss, double learning_rate, int threads = 1);

struct TrainResult {
  CanWeights weights;
  TrainLog log;
};

TrainResult pretrain_hr(const TrainConfig& config, std::span<const FrameSequence> dev_set);

// convert_head + freeze_for_transfer, then BCE training of the fully-connected
// layer and head. Early stopping on dev AUC; the best epoch's weights are returned.
TrainResult finetune_detector(const TrainConfig& config, const CanWeights& pretrained,
                              std::span<const FrameSequence> dev_set);

// Independent sub-seeds derived from the run seed, one per stream.
enum SeedStream : std::uint64_t { kInitStream = 1, kPretrainShuffle, kHeadInit, kFinetuneShuffle };
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dfop
