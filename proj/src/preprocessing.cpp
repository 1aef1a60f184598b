#include "dfop/preprocessing.hpp"

#include <algorithm>
#include <cmath>

#include "dfop/errors.hpp"

namespace dfop {

RawFrame::RawFrame(std::size_t h, std::size_t w, std::uint8_t fill)
    : height(h), width(w), pixels(h * w * 3, fill) {}

std::string label_name(Label label) {
  switch (label) {
    case Label::real:
      return "real";
    case Label::fake:
      return "fake";
    case Label::unlabeled:
      break;
  }
  return "unlabeled";
}

Label parse_label(const std::string& text) {
  if (text == "real") return Label::real;
  if (text == "fake") return Label::fake;
  throw FormatError("label must be 'real' or 'fake', got '" + text + "'");
}

void FrameSequence::validate() const {
  if (frames.size() < 2) {
    throw FormatError("clip '" + video_id + "' has " + std::to_string(frames.size()) +
                      " frames; at least 2 are required");
  }
  const auto& first = frames.front();
  if (first.height == 0 || first.width == 0) throw FormatError("clip '" + video_id + "' has empty frames");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.height != first.height || f.width != first.width ||
        f.pixels.size() != f.height * f.width * 3) {
      throw FormatError("clip '" + video_id + "': frame " + std::to_string(i) +
                        " has inconsistent extents");
    }
  }
  if (pulse_truth && pulse_truth->size() != frames.size()) {
    throw FormatError("clip '" + video_id + "': pulse truth length does not match frame count");
  }
  if (boxes && boxes->size() != frames.size()) {
    throw FormatError("clip '" + video_id + "': " + std::to_string(boxes->size()) +
                      " boxes for " + std::to_string(frames.size()) + " frames");
  }
}

RawFrame crop_and_resize(const RawFrame& frame, const BBox& box, std::size_t side,
                         std::size_t frame_index) {
  if (box.w < 1 || box.h < 1 || box.x < 0 || box.y < 0 ||
      static_cast<std::size_t>(box.x + box.w) > frame.width ||
      static_cast<std::size_t>(box.y + box.h) > frame.height) {
    throw FormatError("frame " + std::to_string(frame_index) + ": box (" + std::to_string(box.x) +
                      "," + std::to_string(box.y) + "," + std::to_string(box.w) + "," +
                      std::to_string(box.h) + ") outside " + std::to_string(frame.width) + "x" +
                      std::to_string(frame.height) + " frame");
  }
  if (side == 0) throw std::invalid_argument("crop_and_resize: side must be positive");

  RawFrame out(side, side);
  const double sy = static_cast<double>(box.h) / static_cast<double>(side);
  const double sx = static_cast<double>(box.w) / static_cast<double>(side);
  for (std::size_t oy = 0; oy < side; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(box.h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min<std::size_t>(y0 + 1, static_cast<std::size_t>(box.h - 1));
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < side; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(box.w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min<std::size_t>(x0 + 1, static_cast<std::size_t>(box.w - 1));
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        auto px = [&](std::size_t y, std::size_t x) {
          return static_cast<double>(frame.at(box.y + y, box.x + x, c));
        };
        const double top = px(y0, x0) * (1.0 - wx) + px(y0, x1) * wx;
        const double bottom = px(y1, x0) * (1.0 - wx) + px(y1, x1) * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        out.at(oy, ox, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

BBox centered_square(std::size_t height, std::size_t width) {
  const auto s = static_cast<int>(std::min(height, width));
  return {static_cast<int>((width - s) / 2), static_cast<int>((height - s) / 2), s, s};
}

namespace {

// RawFrame (HWC) -> [3,H,W] scaled to [0,1].
Tensor to_unit_chw(const RawFrame& f) {
  Tensor t({3, f.height, f.width});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < f.height; ++y) {
      for (std::size_t x = 0; x < f.width; ++x) t.at(c, y, x) = f.at(y, x, c) / 255.0;
    }
  }
  return t;
}

}  // namespace

Tensor raw_motion_frame(const RawFrame& current, const RawFrame& previous) {
  if (current.height != previous.height || current.width != previous.width) {
    throw ShapeError("motion_frame: frames differ in extents");
  }
  Tensor d = to_unit_chw(current);
  const Tensor prev = to_unit_chw(previous);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = normalized_difference(d[i], prev[i]);
  return d;
}

void standardize(Tensor& t) {
  const auto n = static_cast<double>(t.size());
  double mean = 0.0;
  for (double v : t.values()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : t.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd < kStdFloor) {
    t.fill(0.0);
    return;
  }
  for (double& v : t.values()) v = (v - mean) / sd;
}

Tensor motion_frame(const RawFrame& current, const RawFrame& previous) {
  Tensor d = raw_motion_frame(current, previous);
  standardize(d);
  return d;
}

Tensor appearance_frame(const RawFrame& current) {
  Tensor a = to_unit_chw(current);
  standardize(a);
  return a;
}

std::vector<ModelInputPair> sequence_to_inputs(const FrameSequence& seq, std::size_t side,
                                               const std::optional<std::vector<BBox>>& boxes) {
  seq.validate();
  const auto& use_boxes = boxes ? boxes : seq.boxes;
  if (use_boxes && use_boxes->size() != seq.frames.size()) {
    throw FormatError("clip '" + seq.video_id + "': " + std::to_string(use_boxes->size()) +
                      " boxes for " + std::to_string(seq.frames.size()) + " frames");
  }
  const BBox fallback = centered_square(seq.frames[0].height, seq.frames[0].width);
  auto crop = [&](std::size_t t) {
    return crop_and_resize(seq.frames[t], use_boxes ? (*use_boxes)[t] : fallback, side, t);
  };

  std::vector<ModelInputPair> pairs;
  pairs.reserve(seq.frames.size() - 1);
  RawFrame previous = crop(0);
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    RawFrame current = crop(t);
    pairs.push_back({motion_frame(current, previous), appearance_frame(current), t});
    previous = std::move(current);
  }
  return pairs;
}

}  // namespace dfop
