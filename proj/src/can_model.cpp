#include "dfop/can_model.hpp"

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dfop {

void CanConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("CanConfig: " + what); };
  if (input_channels != 3) fail("input_channels must be 3");
  if (input_side == 0 || filters1 == 0 || filters2 == 0 || fc_size == 0) {
    fail("extents and filter counts must be positive");
  }
  if (kernel_size == 0 || kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (input_side < kernel_size) fail("input_side must be >= kernel_size");
  if (pool_window == 0 || input_side % pool_window != 0) {
    fail("pool_window must divide input_side");
  }
  if (block2_side() % pool_window != 0) fail("pool_window must divide the block-2 extent");
  if (head != HeadKind::regression && head != HeadKind::classification) fail("unknown head kind");
}

const std::vector<std::string>& CanWeights::slot_names() {
  static const std::vector<std::string> names = {
      "appearance.conv1.weight", "appearance.conv1.bias", "appearance.conv2.weight",
      "appearance.conv2.bias",   "attention1.weight",     "attention1.bias",
      "attention2.weight",       "attention2.bias",       "motion.conv1.weight",
      "motion.conv1.bias",       "motion.conv2.weight",   "motion.conv2.bias",
      "fc.weight",               "fc.bias",               "head.weight",
      "head.bias"};
  return names;
}

std::vector<Shape> CanWeights::slot_shapes(const CanConfig& c) {
  const std::size_t ch = c.input_channels, f1 = c.filters1, f2 = c.filters2, k = c.kernel_size,
                    fc = c.fc_size;
  return {{f1, ch, k, k}, {f1},     {f2, f1, k, k}, {f2},
          {1, f1, 1, 1},  {1},      {1, f2, 1, 1},  {1},
          {f1, ch, k, k}, {f1},     {f2, f1, k, k}, {f2},
          {fc, c.flat_features()}, {fc}, {1, fc},   {1}};
}

namespace {

// Fan-in / fan-out of a weight tensor: conv [O,C,k,k] or dense [m,n].
std::pair<double, double> fans(const Shape& shape) {
  if (shape.size() == 4) {
    const double area = static_cast<double>(shape[2] * shape[3]);
    return {static_cast<double>(shape[1]) * area, static_cast<double>(shape[0]) * area};
  }
  return {static_cast<double>(shape[1]), static_cast<double>(shape[0])};
}

Tensor glorot_uniform(const Shape& shape, std::mt19937_64& rng) {
  const auto [fan_in, fan_out] = fans(shape);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

bool is_weight_slot(std::size_t slot) { return slot % 2 == 0; }

}  // namespace

CanWeights CanWeights::initialize(const CanConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  CanWeights w;
  w.config = config;
  const auto shapes = slot_shapes(config);
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    Tensor value = is_weight_slot(s) ? glorot_uniform(shapes[s], rng) : Tensor(shapes[s]);
    w.params.emplace_back(slot_names()[s], std::move(value));
  }
  return w;
}

CanWeights CanWeights::zeros(const CanConfig& config) {
  config.validate();
  CanWeights w;
  w.config = config;
  const auto shapes = slot_shapes(config);
  for (std::size_t s = 0; s < kSlotCount; ++s) w.params.emplace_back(slot_names()[s], Tensor(shapes[s]));
  return w;
}

const Parameter* CanWeights::find(std::string_view name) const {
  for (const auto& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

bool CanWeights::trunk_frozen() const {
  for (std::size_t s = 0; s < kFcW; ++s) {
    if (!params[s].frozen) return false;
  }
  return true;
}

std::size_t CanWeights::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params) {
    if (!p.frozen) n += p.value.size();
  }
  return n;
}

std::size_t CanWeights::total_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

AttentionMask attention_mask(const Tensor& features, const Tensor& conv_weight,
                             const Tensor& conv_bias, Conv2dCache* cache) {
  if (features.rank() != 3) {
    throw ShapeError("attention_mask: features must be [C,H,W], got " +
                     shape_string(features.shape()));
  }
  if (conv_weight.rank() != 4 || conv_weight.dim(0) != 1 || conv_weight.dim(2) != 1 ||
      conv_weight.dim(3) != 1) {
    throw ShapeError("attention_mask: expected a 1x1 convolution to one channel, got " +
                     shape_string(conv_weight.shape()));
  }
  const Tensor z = conv2d_forward(features, conv_weight, conv_bias, 0, 1, cache);
  AttentionMask mask;
  mask.sigmoid = activation_forward(z, Activation::sigmoid);
  const double total = mask.sigmoid.sum();
  const double half_area = 0.5 * static_cast<double>(z.size());
  mask.values = mask.sigmoid;
  for (double& v : mask.values.values()) v = half_area * v / total;
  return mask;
}

Tensor attention_mask_backward(const Tensor& grad_mask, const AttentionMask& mask) {
  if (!same_shape(grad_mask, mask.sigmoid)) {
    throw ShapeError("attention_mask_backward: gradient " + shape_string(grad_mask.shape()) +
                     " vs mask " + shape_string(mask.sigmoid.shape()));
  }
  const Tensor& s = mask.sigmoid;
  const double total = s.sum();
  const double half_area = 0.5 * static_cast<double>(s.size());
  double weighted = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) weighted += grad_mask[i] * s[i];
  Tensor grad_z(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double grad_s = half_area * (grad_mask[i] / total - weighted / (total * total));
    grad_z[i] = grad_s * s[i] * (1.0 - s[i]);
  }
  return grad_z;
}

namespace {

// features [C,H,W] * mask [1,H,W]
Tensor apply_mask(const Tensor& features, const Tensor& mask) {
  Tensor out = features;
  const std::size_t area = mask.size();
  for (std::size_t c = 0; c < features.dim(0); ++c) {
    double* row = out.data() + c * area;
    for (std::size_t i = 0; i < area; ++i) row[i] *= mask[i];
  }
  return out;
}

// Splits d(gated)/d(.) into the feature gradient and the mask gradient.
std::pair<Tensor, Tensor> apply_mask_backward(const Tensor& grad_gated, const Tensor& features,
                                              const Tensor& mask) {
  Tensor grad_features = apply_mask(grad_gated, mask);
  Tensor grad_mask(mask.shape());
  const std::size_t area = mask.size();
  for (std::size_t c = 0; c < features.dim(0); ++c) {
    const double* g = grad_gated.data() + c * area;
    const double* f = features.data() + c * area;
    for (std::size_t i = 0; i < area; ++i) grad_mask[i] += g[i] * f[i];
  }
  return {std::move(grad_features), std::move(grad_mask)};
}

void check_inputs(const Tensor& motion, const Tensor& appearance, const CanConfig& config) {
  const Shape expected{config.input_channels, config.input_side, config.input_side};
  if (motion.shape() != expected || appearance.shape() != expected) {
    throw ShapeError("CAN inputs must be " + shape_string(expected) + ", got motion " +
                     shape_string(motion.shape()) + " and appearance " +
                     shape_string(appearance.shape()));
  }
}

}  // namespace

Tensor trunk_features(const Tensor& motion_input, const Tensor& appearance_input,
                      const CanWeights& w, CanActivations* acts) {
  const CanConfig& c = w.config;
  check_inputs(motion_input, appearance_input, c);
  const std::size_t pad = c.padding(), pool = c.pool_window;
  using S = CanWeights;

  CanActivations local;
  CanActivations& a = acts ? *acts : local;

  a.appearance1 = activation_forward(
      conv2d_forward(appearance_input, w[S::kAppearanceConv1W].value, w[S::kAppearanceConv1B].value,
                     pad, 1, &a.appearance_conv1),
      Activation::tanh);
  a.mask1 = attention_mask(a.appearance1, w[S::kAttention1W].value, w[S::kAttention1B].value,
                           &a.attention1);
  a.appearance2 = activation_forward(
      conv2d_forward(avgpool2d_forward(a.appearance1, pool), w[S::kAppearanceConv2W].value,
                     w[S::kAppearanceConv2B].value, pad, 1, &a.appearance_conv2),
      Activation::tanh);
  a.mask2 = attention_mask(a.appearance2, w[S::kAttention2W].value, w[S::kAttention2B].value,
                           &a.attention2);

  a.motion1 = activation_forward(conv2d_forward(motion_input, w[S::kMotionConv1W].value,
                                                w[S::kMotionConv1B].value, pad, 1, &a.motion_conv1),
                                 Activation::tanh);
  a.gated1 = apply_mask(a.motion1, a.mask1.values);
  a.motion2 = activation_forward(
      conv2d_forward(avgpool2d_forward(a.gated1, pool), w[S::kMotionConv2W].value,
                     w[S::kMotionConv2B].value, pad, 1, &a.motion_conv2),
      Activation::tanh);
  a.gated2 = apply_mask(a.motion2, a.mask2.values);
  a.features = avgpool2d_forward(a.gated2, pool).reshaped({c.flat_features()});
  return a.features;
}

double head_output(const Tensor& features, const CanWeights& w, CanActivations* acts) {
  using S = CanWeights;
  Tensor fc = activation_forward(dense_forward(features, w[S::kFcW].value, w[S::kFcB].value),
                                 Activation::tanh);
  const double out = dense_forward(fc, w[S::kHeadW].value, w[S::kHeadB].value)[0];
  if (acts) {
    if (&acts->features != &features) acts->features = features;
    acts->fc_out = std::move(fc);
    acts->output = out;
  }
  return out;
}

double forward_raw(const Tensor& motion_input, const Tensor& appearance_input,
                   const CanWeights& weights, CanActivations& acts) {
  trunk_features(motion_input, appearance_input, weights, &acts);
  return head_output(acts.features, weights, &acts);
}

double forward(const Tensor& motion_input, const Tensor& appearance_input,
               const CanWeights& weights) {
  if (weights.config.head != HeadKind::classification) {
    throw std::logic_error("forward: weights carry a regression head");
  }
  const Tensor features = trunk_features(motion_input, appearance_input, weights);
  return sigmoid(head_output(features, weights));
}

double forward_hr(const Tensor& motion_input, const Tensor& appearance_input,
                  const CanWeights& weights) {
  if (weights.config.head != HeadKind::regression) {
    throw std::logic_error("forward_hr: weights carry a classification head");
  }
  const Tensor features = trunk_features(motion_input, appearance_input, weights);
  return head_output(features, weights);
}

std::vector<Tensor> backward(const CanActivations& a, const CanWeights& w, double grad_output,
                             bool include_trunk, Tensor* fc_preactivation) {
  using S = CanWeights;
  const CanConfig& c = w.config;
  const std::size_t pool = c.pool_window;
  std::vector<Tensor> g(S::kSlotCount);

  const Tensor grad_out({1}, std::vector<double>{grad_output});
  DenseGrads head = dense_backward(grad_out, a.fc_out, w[S::kHeadW].value);
  g[S::kHeadW] = std::move(head.weights);
  g[S::kHeadB] = std::move(head.bias);
  Tensor grad_fc = activation_backward(head.input, a.fc_out, Activation::tanh);
  Tensor grad_features;
  if (fc_preactivation) {
    if (include_trunk) {
      grad_features = Tensor(a.features.shape());
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> wm(
          w[S::kFcW].value.data(), static_cast<Eigen::Index>(w[S::kFcW].value.dim(0)),
          static_cast<Eigen::Index>(w[S::kFcW].value.dim(1)));
      Eigen::Map<Eigen::VectorXd>(grad_features.data(), static_cast<Eigen::Index>(grad_features.size()))
          .noalias() = wm.transpose() *
                       Eigen::Map<const Eigen::VectorXd>(grad_fc.data(),
                                                         static_cast<Eigen::Index>(grad_fc.size()));
    }
    g[S::kFcB] = grad_fc;
    *fc_preactivation = std::move(grad_fc);
  } else {
    DenseGrads fc = dense_backward(grad_fc, a.features, w[S::kFcW].value);
    g[S::kFcW] = std::move(fc.weights);
    g[S::kFcB] = std::move(fc.bias);
    grad_features = std::move(fc.input);
  }
  if (!include_trunk) return g;

  // Motion branch, block 2.
  const std::size_t s3 = c.pooled_side();
  Tensor grad_gated2 = avgpool2d_backward(std::move(grad_features).reshaped({c.filters2, s3, s3}), pool);
  auto [grad_motion2, grad_mask2] = apply_mask_backward(grad_gated2, a.motion2, a.mask2.values);
  Conv2dGrads mc2 = conv2d_backward(activation_backward(grad_motion2, a.motion2, Activation::tanh),
                                    a.motion_conv2, w[S::kMotionConv2W].value);
  g[S::kMotionConv2W] = std::move(mc2.kernel);
  g[S::kMotionConv2B] = std::move(mc2.bias);

  // Motion branch, block 1.
  Tensor grad_gated1 = avgpool2d_backward(mc2.input, pool);
  auto [grad_motion1, grad_mask1] = apply_mask_backward(grad_gated1, a.motion1, a.mask1.values);
  Conv2dGrads mc1 = conv2d_backward(activation_backward(grad_motion1, a.motion1, Activation::tanh),
                                    a.motion_conv1, w[S::kMotionConv1W].value, false);
  g[S::kMotionConv1W] = std::move(mc1.kernel);
  g[S::kMotionConv1B] = std::move(mc1.bias);

  // Appearance branch through the second mask.
  Conv2dGrads at2 = conv2d_backward(attention_mask_backward(grad_mask2, a.mask2), a.attention2,
                                    w[S::kAttention2W].value);
  g[S::kAttention2W] = std::move(at2.kernel);
  g[S::kAttention2B] = std::move(at2.bias);
  Conv2dGrads ac2 = conv2d_backward(activation_backward(at2.input, a.appearance2, Activation::tanh),
                                    a.appearance_conv2, w[S::kAppearanceConv2W].value);
  g[S::kAppearanceConv2W] = std::move(ac2.kernel);
  g[S::kAppearanceConv2B] = std::move(ac2.bias);

  // First mask plus the pooled path into block 2.
  Conv2dGrads at1 = conv2d_backward(attention_mask_backward(grad_mask1, a.mask1), a.attention1,
                                    w[S::kAttention1W].value);
  g[S::kAttention1W] = std::move(at1.kernel);
  g[S::kAttention1B] = std::move(at1.bias);
  Tensor grad_appearance1 = avgpool2d_backward(ac2.input, pool);
  grad_appearance1 += at1.input;
  Conv2dGrads ac1 =
      conv2d_backward(activation_backward(grad_appearance1, a.appearance1, Activation::tanh),
                      a.appearance_conv1, w[S::kAppearanceConv1W].value, false);
  g[S::kAppearanceConv1W] = std::move(ac1.kernel);
  g[S::kAppearanceConv1B] = std::move(ac1.bias);
  return g;
}

CanWeights convert_head(const CanWeights& weights, std::uint64_t seed,
                        std::optional<std::uint32_t> fc_size) {
  if (weights.config.head != HeadKind::regression) {
    throw std::logic_error("convert_head: weights already carry a classification head");
  }
  CanWeights out = weights;
  out.config.head = HeadKind::classification;
  std::mt19937_64 rng(seed);
  using S = CanWeights;
  if (fc_size && *fc_size != weights.config.fc_size) {
    out.config.fc_size = *fc_size;
    out.config.validate();
    const auto shapes = S::slot_shapes(out.config);
    out[S::kFcW] = Parameter(S::slot_names()[S::kFcW], glorot_uniform(shapes[S::kFcW], rng));
    out[S::kFcB] = Parameter(S::slot_names()[S::kFcB], Tensor(shapes[S::kFcB]));
  }
  const auto shapes = S::slot_shapes(out.config);
  out[S::kHeadW] = Parameter(S::slot_names()[S::kHeadW], glorot_uniform(shapes[S::kHeadW], rng));
  out[S::kHeadB] = Parameter(S::slot_names()[S::kHeadB], Tensor(shapes[S::kHeadB]));
  return out;
}

CanWeights freeze_for_transfer(CanWeights weights) {
  if (weights.config.head != HeadKind::classification) {
    throw std::logic_error("freeze_for_transfer: convert the head to classification first");
  }
  for (std::size_t s = 0; s < CanWeights::kSlotCount; ++s) {
    weights.params[s].frozen = !CanWeights::is_head_slot(s);
  }
  return weights;
}

}  // namespace dfop
