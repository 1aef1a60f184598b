#pragma once

#include <string>
#include <vector>

#include "dfop/can_model.hpp"
#include "dfop/preprocessing.hpp"
#include "dfop/synthetic.hpp"
#include "dfop/training.hpp"

namespace fixtures {

// 8x8 clip. Real clips brighten their left half every frame; fakes are static.
inline dfop::FrameSequence step_clip(const std::string& id, const std::string& identity, dfop::Label label,
                                     std::size_t frames = 5) {
  dfop::FrameSequence seq;
  seq.video_id = id;
  seq.identity_id = identity;
  seq.label = label;
  for (std::size_t t = 0; t < frames; ++t) {
    dfop::RawFrame f(8, 8, 100);
    if (label == dfop::Label::real) {
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 4; ++x)
          for (std::size_t c = 0; c < 3; ++c) f.at(y, x, c) = static_cast<std::uint8_t>(40 + 20 * t);
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

// Scores above 0.5 exactly when the motion input has a brighter left half;
// zero motion scores below 0.5.
inline dfop::CanWeights step_detector() {
  using S = dfop::CanWeights;
  dfop::CanConfig c;
  c.input_side = 8;
  c.filters1 = 1;
  c.filters2 = 1;
  c.fc_size = 1;
  c.head = dfop::HeadKind::classification;
  dfop::CanWeights w = S::zeros(c);
  w[S::kMotionConv1W].value.at(0, 0, 1, 1) = 1.0;
  w[S::kMotionConv2W].value.at(0, 0, 1, 1) = 1.0;
  // pooled features are [1,2,2]: left column positive, right column negative
  for (std::size_t y = 0; y < 2; ++y) {
    w[S::kFcW].value.at(0, y * 2 + 0) = 1.0;
    w[S::kFcW].value.at(0, y * 2 + 1) = -1.0;
  }
  w[S::kHeadW].value[0] = 5.0;
  w[S::kHeadB].value[0] = -0.05;
  return w;
}

inline dfop::CanConfig tiny_model() {
  dfop::CanConfig c;
  c.input_side = 8;
  c.filters1 = 2;
  c.filters2 = 2;
  c.fc_size = 4;
  return c;
}

inline dfop::DatasetOptions tiny_dataset() {
  dfop::DatasetOptions o;
  o.n_identities = 4;
  o.clips_per_identity = 2;
  o.duration = 0.6;
  o.side = 16;
  o.amplitude_min = 0.05;
  o.amplitude_max = 0.08;
  return o;
}

inline dfop::TrainConfig tiny_training() {
  dfop::TrainConfig t;
  t.model = tiny_model();
  t.epochs_pretrain = 3;
  t.epochs_finetune = 4;
  t.batch_size = 5;
  t.seed = 17;
  return t;
}

}  // namespace fixtures
