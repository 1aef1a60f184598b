#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dfop/errors.hpp"
#include "dfop/layers.hpp"
#include "dfop/tensor.hpp"

namespace dfop {

enum class HeadKind : std::uint32_t { regression = 0, classification = 1 };

/// Geometry of the two-branch attention network.
///
/// Both branches run conv(k, same padding) + tanh twice with a pool between
/// the blocks; the motion branch pools again after block 2 and feeds the
/// flattened result into a tanh fully-connected layer and a single-unit head.
struct CanConfig {
  std::uint32_t input_side = 36;
  std::uint32_t input_channels = 3;
  std::uint32_t filters1 = 32;
  std::uint32_t filters2 = 64;
  std::uint32_t kernel_size = 3;
  std::uint32_t pool_window = 2;
  std::uint32_t fc_size = 128;
  HeadKind head = HeadKind::regression;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  std::size_t padding() const { return kernel_size / 2; }
  std::size_t block2_side() const { return input_side / pool_window; }
  std::size_t pooled_side() const { return block2_side() / pool_window; }
  std::size_t flat_features() const {
    return static_cast<std::size_t>(filters2) * pooled_side() * pooled_side();
  }

  bool operator==(const CanConfig&) const = default;
};

/// Full parameter set, stored in a fixed order (see Slot).
struct CanWeights {
  enum Slot : std::size_t {
    kAppearanceConv1W,
    kAppearanceConv1B,
    kAppearanceConv2W,
    kAppearanceConv2B,
    kAttention1W,
    kAttention1B,
    kAttention2W,
    kAttention2B,
    kMotionConv1W,
    kMotionConv1B,
    kMotionConv2W,
    kMotionConv2B,
    kFcW,
    kFcB,
    kHeadW,
    kHeadB,
    kSlotCount
  };

  CanConfig config;
  std::vector<Parameter> params;

  static const std::vector<std::string>& slot_names();
  static std::vector<Shape> slot_shapes(const CanConfig& config);

  // Glorot-uniform weights and zero biases, deterministic in `seed`.
  static CanWeights initialize(const CanConfig& config, std::uint64_t seed);
  static CanWeights zeros(const CanConfig& config);

  Parameter& operator[](Slot s) { return params[s]; }
  const Parameter& operator[](Slot s) const { return params[s]; }
  const Parameter* find(std::string_view name) const;

  // Slots trained after transfer: the last fully-connected layer and the head.
  static bool is_head_slot(std::size_t slot) { return slot >= kFcW; }
  bool trunk_frozen() const;
  std::size_t trainable_scalars() const;
  std::size_t total_scalars() const;
};

/// Spatial attention mask broadcast over channels; sums to H*W/2.
struct AttentionMask {
  Tensor values;   // [1,H,W]
  Tensor sigmoid;  // sigma(z), kept for the backward pass
};

AttentionMask attention_mask(const Tensor& features, const Tensor& conv_weight,
                             const Tensor& conv_bias, Conv2dCache* cache = nullptr);
// Gradient w.r.t. the 1x1 convolution pre-activation z given d(loss)/d(mask).
Tensor attention_mask_backward(const Tensor& grad_mask, const AttentionMask& mask);

// Everything retained by a forward pass that backward() consumes.
struct CanActivations {
  Conv2dCache appearance_conv1, appearance_conv2, attention1, attention2, motion_conv1,
      motion_conv2;
  Tensor appearance1, appearance2;  // post-tanh
  AttentionMask mask1, mask2;
  Tensor motion1, motion2;  // post-tanh, pre-mask
  Tensor gated1, gated2;    // motion * mask
  Tensor features;          // pooled gated2, flattened
  Tensor fc_out;            // post-tanh
  double output = 0.0;      // head pre-activation
};

// Trunk: both branches up to the flattened motion features.
Tensor trunk_features(const Tensor& motion_input, const Tensor& appearance_input,
                      const CanWeights& weights, CanActivations* acts = nullptr);
// Fully-connected layer + linear head unit on trunk features.
double head_output(const Tensor& features, const CanWeights& weights,
                   CanActivations* acts = nullptr);

// Probability that the face is real; requires a classification head.
double forward(const Tensor& motion_input, const Tensor& appearance_input,
               const CanWeights& weights);
// Heart-rate derivative estimate; requires a regression head.
double forward_hr(const Tensor& motion_input, const Tensor& appearance_input,
                  const CanWeights& weights);
// Head pre-activation regardless of head kind, filling `acts` for backward().
double forward_raw(const Tensor& motion_input, const Tensor& appearance_input,
                   const CanWeights& weights, CanActivations& acts);

/// Gradients of a scalar loss given d(loss)/d(head pre-activation).
/// Returns one tensor per slot; slots are left empty when `include_trunk`
/// is false and the slot is not part of the head. When `fc_preactivation`
/// is given, the fully-connected weight slot is left empty and the gradient
/// w.r.t. that layer's pre-activation is stored there instead, so callers can
/// form the outer product with acts.features for a whole batch at once.
std::vector<Tensor> backward(const CanActivations& acts, const CanWeights& weights,
                             double grad_output, bool include_trunk = true,
                             Tensor* fc_preactivation = nullptr);

// Replaces the regression head with a freshly initialized classification
// head. The fully-connected layer is re-initialized too when `fc_size`
// differs from the current one.
CanWeights convert_head(const CanWeights& weights, std::uint64_t seed,
                        std::optional<std::uint32_t> fc_size = std::nullopt);

CanWeights freeze_for_transfer(CanWeights weights);

class WeightFileError : public FormatError {
 public:
  enum class Kind { io, bad_magic, bad_version, bad_config, truncated, unexpected_parameter,
                    shape_mismatch, non_finite, trailing_data };

  WeightFileError(Kind kind, std::string message, std::string parameter = {})
      : FormatError(std::move(message)), kind_(kind), parameter_(std::move(parameter)) {}

  Kind kind() const { return kind_; }
  const std::string& parameter() const { return parameter_; }

 private:
  Kind kind_;
  std::string parameter_;
};

void save_weights(const CanWeights& weights, const std::filesystem::path& path);
CanWeights load_weights(const std::filesystem::path& path);

}  // namespace dfop
