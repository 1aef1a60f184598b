#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dfop/errors.hpp"
#include "dfop/evaluation.hpp"
#include "dfop/training.hpp"
#include "fixtures.hpp"

using namespace dfop;

namespace {

using S = CanWeights;

std::vector<const TrainingSample*> pointers(const std::vector<TrainingSample>& samples) {
  std::vector<const TrainingSample*> out;
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

bool same_weights(const CanWeights& a, const CanWeights& b) {
  if (!(a.config == b.config)) return false;
  for (std::size_t s = 0; s < S::kSlotCount; ++s) {
    if (!bitwise_equal(a.params[s].value, b.params[s].value)) return false;
  }
  return true;
}

double mean_mse(const CanWeights& w, const std::vector<TrainingSample>& samples) {
  double s = 0.0;
  for (const auto& x : samples) s += mse_loss(forward_hr(x.input.motion, x.input.appearance, w), x.target);
  return s / static_cast<double>(samples.size());
}

const std::vector<FrameSequence>& tiny_clips() {
  static const std::vector<FrameSequence> clips = generate_dataset(fixtures::tiny_dataset(), 3);
  return clips;
}

CanWeights regression_weights(std::uint64_t seed) {
  return CanWeights::initialize(fixtures::tiny_model(), seed);
}

}  // namespace

TEST(Samples, PretrainTargetsArePulseDifferences) {
  const auto& clips = tiny_clips();
  const auto samples = pretrain_samples(std::span(clips).subspan(0, 2), 8);
  const std::size_t per_clip = clips[0].frames.size() - 1;
  ASSERT_EQ(samples.size(), 2 * per_clip);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& clip = clips[i / per_clip];
    const std::size_t t = samples[i].input.frame_index;
    EXPECT_EQ(t, i % per_clip + 1);
    EXPECT_EQ(samples[i].target, (*clip.pulse_truth)[t] - (*clip.pulse_truth)[t - 1]);
    EXPECT_EQ(samples[i].clip, clip.video_id);
  }
}

TEST(Samples, MissingPulseOrLabelIsRejected) {
  FrameSequence clip = tiny_clips()[0];
  clip.pulse_truth.reset();
  try {
    pretrain_samples(std::span(&clip, 1), 8);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(clip.video_id), std::string::npos);
  }
  clip.label = Label::unlabeled;
  EXPECT_THROW(detection_samples(std::span(&clip, 1), 8), FormatError);
}

TEST(Samples, DetectionTargetsFollowLabels) {
  const auto& clips = tiny_clips();
  for (const auto& s : detection_samples(clips, 8)) {
    const bool real = s.clip.find("clip0") != std::string::npos;  // first clip of each identity is real
    EXPECT_EQ(s.target, real ? 1.0 : 0.0) << s.clip;
  }
}

TEST(TrainStep, ZeroLearningRateReportsLossOnly) {
  const auto samples = pretrain_samples(std::span(tiny_clips()).subspan(0, 2), 8);
  CanWeights w = regression_weights(1);
  const CanWeights before = w;
  const auto batch = pointers(samples);
  const double loss = train_step(w, batch, LossKind::mse, 0.0);
  EXPECT_TRUE(same_weights(w, before));
  EXPECT_NEAR(loss, mean_mse(before, samples), 1e-12);
}

TEST(TrainStep, DuplicatedSampleGivesSameStep) {
  const auto samples = pretrain_samples(std::span(tiny_clips()).subspan(0, 1), 8);
  CanWeights a = regression_weights(2), b = regression_weights(2);
  const TrainingSample* one[] = {&samples[3]};
  const TrainingSample* two[] = {&samples[3], &samples[3]};
  train_step(a, one, LossKind::mse, 0.1);
  train_step(b, two, LossKind::mse, 0.1);
  for (std::size_t s = 0; s < S::kSlotCount; ++s) {
    for (std::size_t i = 0; i < a.params[s].value.size(); ++i) {
      EXPECT_NEAR(a.params[s].value[i], b.params[s].value[i], 1e-15) << S::slot_names()[s];
    }
  }
}

TEST(TrainStep, DescendsOnFixedBatchWithDefaultModel) {
  DatasetOptions o = fixtures::tiny_dataset();
  o.side = 48;
  o.n_identities = 2;
  const auto clips = generate_dataset(o, 4);
  const auto samples = pretrain_samples(clips, 36);
  CanWeights w = CanWeights::initialize(CanConfig{}, 5);
  const auto batch = pointers(samples);
  const double first = train_step(w, std::span(batch).subspan(0, 8), LossKind::mse, 1e-3);
  const double second = train_step(w, std::span(batch).subspan(0, 8), LossKind::mse, 1e-3);
  EXPECT_LE(second, first);
}

TEST(TrainStep, ThreadCountDoesNotChangeResult) {
  const auto samples = detection_samples(tiny_clips(), 8);
  CanConfig c = fixtures::tiny_model();
  c.head = HeadKind::classification;
  CanWeights a = CanWeights::initialize(c, 6), b = a;
  const auto batch = pointers(samples);
  for (std::size_t start = 0; start + 7 <= batch.size(); start += 7) {
    const double la = train_step(a, std::span(batch).subspan(start, 7), LossKind::bce, 0.05, 1);
    const double lb = train_step(b, std::span(batch).subspan(start, 7), LossKind::bce, 0.05, 3);
    EXPECT_EQ(la, lb);
  }
  EXPECT_TRUE(same_weights(a, b));
}

TEST(TrainStep, NonFiniteLossAbortsWithLocation) {
  auto samples = pretrain_samples(std::span(tiny_clips()).subspan(0, 1), 8);
  samples[2].input.motion[0] = std::numeric_limits<double>::quiet_NaN();
  CanWeights w = regression_weights(7);
  const CanWeights before = w;
  const auto batch = pointers(samples);
  try {
    train_step(w, batch, LossKind::mse, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(samples[2].clip), std::string::npos) << msg;
    EXPECT_NE(msg.find("frame 3"), std::string::npos) << msg;
  }
  EXPECT_TRUE(same_weights(w, before));
}

TEST(Pretrain, ZeroEpochsReturnsSeededInitialization) {
  TrainConfig t = fixtures::tiny_training();
  t.epochs_pretrain = 0;
  const TrainResult r = pretrain_hr(t, tiny_clips());
  CanConfig model = t.model;
  model.head = HeadKind::regression;
  EXPECT_TRUE(same_weights(r.weights, CanWeights::initialize(model, derive_seed(t.seed, kInitStream))));
  EXPECT_TRUE(r.log.empty());
}

TEST(Pretrain, ConstantTargetMseDoesNotIncrease) {
  std::vector<FrameSequence> clips = tiny_clips();
  for (auto& c : clips) c.pulse_truth = std::vector<double>(c.frames.size(), 0.0);
  TrainConfig t = fixtures::tiny_training();
  t.epochs_pretrain = 4;
  const auto samples = pretrain_samples(clips, 8);
  const CanWeights init = CanWeights::initialize(t.model, derive_seed(t.seed, kInitStream));
  const TrainResult r = pretrain_hr(t, clips);
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_LE(mean_mse(r.weights, samples), mean_mse(init, samples));
  for (const auto& e : r.log) {
    EXPECT_EQ(e.phase, "pretrain");
    EXPECT_EQ(e.loss, e.metric);
  }
}

TEST(Pretrain, DeterministicAcrossRunsAndThreads) {
  TrainConfig t = fixtures::tiny_training();
  const TrainResult a = pretrain_hr(t, tiny_clips());
  t.threads = 4;
  const TrainResult b = pretrain_hr(t, tiny_clips());
  EXPECT_TRUE(same_weights(a.weights, b.weights));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  t.seed += 1;
  EXPECT_FALSE(same_weights(a.weights, pretrain_hr(t, tiny_clips()).weights));
}

TEST(Finetune, TrunkStaysBitwiseFrozen) {
  const TrainConfig t = fixtures::tiny_training();
  const CanWeights pre = pretrain_hr(t, tiny_clips()).weights;
  const TrainResult r = finetune_detector(t, pre, tiny_clips());
  EXPECT_EQ(r.weights.config.head, HeadKind::classification);
  EXPECT_TRUE(r.weights.trunk_frozen());
  for (std::size_t s = 0; s < S::kFcW; ++s) {
    EXPECT_TRUE(bitwise_equal(r.weights.params[s].value, pre.params[s].value)) << S::slot_names()[s];
  }
  EXPECT_FALSE(bitwise_equal(r.weights[S::kHeadW].value, convert_head(pre, derive_seed(t.seed, kHeadInit))[S::kHeadW].value));
  for (const auto& e : r.log) {
    EXPECT_EQ(e.phase, "finetune");
    EXPECT_GE(e.metric, 0.0);
    EXPECT_LE(e.metric, 1.0);
  }
}

TEST(Finetune, ZeroEpochsReturnsConvertedHead) {
  TrainConfig t = fixtures::tiny_training();
  const CanWeights pre = regression_weights(8);
  t.epochs_finetune = 0;
  const TrainResult r = finetune_detector(t, pre, tiny_clips());
  EXPECT_TRUE(same_weights(r.weights, freeze_for_transfer(convert_head(pre, derive_seed(t.seed, kHeadInit)))));
}

TEST(Finetune, RequiresRegressionWeights) {
  CanConfig c = fixtures::tiny_model();
  c.head = HeadKind::classification;
  EXPECT_THROW(finetune_detector(fixtures::tiny_training(), CanWeights::zeros(c), tiny_clips()),
               std::logic_error);
}

TEST(Finetune, ReturnsBestEpochAndIsDeterministic) {
  TrainConfig t = fixtures::tiny_training();
  t.epochs_finetune = 6;
  t.early_stop_patience = 2;
  const CanWeights pre = pretrain_hr(t, tiny_clips()).weights;
  const TrainResult a = finetune_detector(t, pre, tiny_clips());
  t.threads = 3;
  const TrainResult b = finetune_detector(t, pre, tiny_clips());
  EXPECT_TRUE(same_weights(a.weights, b.weights));

  // The returned weights reproduce the best logged dev AUC.
  double best = -1.0;
  for (const auto& e : a.log) best = std::max(best, e.metric);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : detection_samples(tiny_clips(), 8)) {
    scores.push_back(forward(s.input.motion, s.input.appearance, a.weights));
    labels.push_back(s.target > 0.5);
  }
  EXPECT_EQ(auc(scores, labels), best);
}

TEST(Finetune, EarlyStopsAfterPatienceEpochsWithoutImprovement) {
  TrainConfig t = fixtures::tiny_training();
  t.epochs_finetune = 30;
  t.early_stop_patience = 1;
  t.learning_rate_finetune = 0.0;  // dev AUC never improves after epoch 1
  const TrainResult r = finetune_detector(t, regression_weights(9), tiny_clips());
  EXPECT_EQ(r.log.size(), 2u);
}

TEST(Finetune, SwappedLabelsMirrorTheDetector) {
  // Training on swapped labels from a head with negated output weights
  // mirrors every score, so AUC against the true labels becomes 1 - a.
  const TrainConfig t = fixtures::tiny_training();
  const CanWeights pre = pretrain_hr(t, tiny_clips()).weights;
  CanWeights a = freeze_for_transfer(convert_head(pre, 11));
  CanWeights b = a;
  b[S::kHeadW].value *= -1.0;
  b[S::kHeadB].value *= -1.0;
  auto samples = detection_samples(tiny_clips(), 8);
  auto swapped = samples;
  for (auto& s : swapped) s.target = 1.0 - s.target;
  const auto pa = pointers(samples), pb = pointers(swapped);
  for (int epoch = 0; epoch < 5; ++epoch) {
    for (std::size_t i = 0; i + 6 <= pa.size(); i += 6) {
      train_step(a, std::span(pa).subspan(i, 6), LossKind::bce, 0.2);
      train_step(b, std::span(pb).subspan(i, 6), LossKind::bce, 0.2);
    }
  }
  std::vector<double> sa, sb;
  std::vector<int> labels;
  for (const auto& s : samples) {
    sa.push_back(forward(s.input.motion, s.input.appearance, a));
    sb.push_back(forward(s.input.motion, s.input.appearance, b));
    labels.push_back(s.target > 0.5);
    EXPECT_NEAR(sa.back(), 1.0 - sb.back(), 1e-9);
  }
  EXPECT_NEAR(auc(sb, labels), 1.0 - auc(sa, labels), 1e-12);
}

TEST(TrainConfig, ConfigRoundTripAndValidation) {
  TrainConfig t;
  t.learning_rate_finetune = 0.03;
  t.seed = 12345678901234ULL;
  t.model.fc_size = 64;
  const TrainConfig back = TrainConfig::from_config(t.to_config());
  EXPECT_EQ(back.learning_rate_finetune, 0.03);
  EXPECT_EQ(back.seed, t.seed);
  EXPECT_EQ(back.model, t.model);
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

TEST(TrainLog, CsvLayout) {
  const auto path = std::filesystem::temp_directory_path() / "dfop_train_log.csv";
  write_train_log({{1, "pretrain", 0.5, 0.5, 1.25}, {2, "pretrain", 0.25, 0.25, 1.0}}, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,phase,loss,metric,seconds");
  EXPECT_EQ(row.rfind("1,pretrain,0.5,0.5,", 0), 0u) << row;
}

TEST(DeriveSeed, StreamsDiffer) {
  EXPECT_NE(derive_seed(1, kInitStream), derive_seed(1, kHeadInit));
  EXPECT_NE(derive_seed(1, kInitStream), derive_seed(2, kInitStream));
  EXPECT_EQ(derive_seed(5, kFinetuneShuffle), derive_seed(5, kFinetuneShuffle));
}
