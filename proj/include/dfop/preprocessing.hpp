#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfop/tensor.hpp"

namespace dfop {

/// 8-bit RGB image, row-major H x W x 3.
struct RawFrame {
  RawFrame() = default;
  RawFrame(std::size_t height, std::size_t width, std::uint8_t fill = 0);

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const RawFrame&) const = default;
};

enum class Label { real, fake, unlabeled };

std::string label_name(Label label);
// Accepts "real" / "fake"; throws FormatError otherwise.
Label parse_label(const std::string& text);

struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const BBox&) const = default;
};

/// A labeled clip. `boxes`, when present, holds one face box per frame;
/// otherwise a centered square crop is used.
struct FrameSequence {
  std::string video_id;
  std::vector<RawFrame> frames;
  int fps = 15;
  std::string identity_id;
  Label label = Label::unlabeled;
  std::optional<std::vector<double>> pulse_truth;
  std::optional<std::vector<BBox>> boxes;

  // Throws FormatError on fewer than two frames or inconsistent extents.
  void validate() const;
};

struct ModelInputPair {
  Tensor motion;      // [3,L,L]
  Tensor appearance;  // [3,L,L]
  std::size_t frame_index = 0;
};

inline constexpr double kMotionEpsilon = 1e-6;
inline constexpr double kStdFloor = 1e-8;

// Bilinear resize of the box contents to L x L (pixel-center alignment),
// rounded back to 8 bits. Throws FormatError naming `frame_index` when the
// box leaves the frame.
RawFrame crop_and_resize(const RawFrame& frame, const BBox& box, std::size_t side,
                         std::size_t frame_index = 0);

BBox centered_square(std::size_t height, std::size_t width);

// (c - p) / (c + p + eps) on [0,1]-scaled values.
inline double normalized_difference(double current, double previous) {
  return (current - previous) / (current + previous + kMotionEpsilon);
}

// Per-channel normalized difference as [3,H,W], before standardization.
Tensor raw_motion_frame(const RawFrame& current, const RawFrame& previous);
// Zero mean / unit std over all values; all zeros when std < kStdFloor.
void standardize(Tensor& t);

Tensor motion_frame(const RawFrame& current, const RawFrame& previous);
Tensor appearance_frame(const RawFrame& current);

// One pair per frame index t in [1, T-1]. `boxes` overrides seq.boxes when given.
std::vector<ModelInputPair> sequence_to_inputs(const FrameSequence& seq, std::size_t side,
                                               const std::optional<std::vector<BBox>>& boxes =
                                                   std::nullopt);

}  // namespace dfop
