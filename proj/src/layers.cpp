#include "dfop/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dfop/errors.hpp"

namespace dfop {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

// Unfold input [C,H,W] into [C*k*k, H'*W'].
Tensor im2col(const Tensor& input, std::size_t k, std::size_t padding, std::size_t stride,
              std::size_t out_h, std::size_t out_w) {
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  Tensor cols({channels * k * k, out_h * out_w});
  double* dst = cols.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(padding);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(height) &&
                                ix < static_cast<std::ptrdiff_t>(width);
            *dst++ = inside ? input.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))
                            : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add columns back into an input-shaped tensor.
Tensor col2im(const Tensor& cols, const Shape& input_shape, std::size_t k, std::size_t padding,
              std::size_t stride, std::size_t out_h, std::size_t out_w) {
  Tensor out(input_shape);
  const std::size_t channels = input_shape[0], height = input_shape[1], width = input_shape[2];
  const double* src = cols.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(padding);
          for (std::size_t ox = 0; ox < out_w; ++ox, ++src) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(padding);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(height) &&
                ix < static_cast<std::ptrdiff_t>(width)) {
              out.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += *src;
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

std::size_t conv2d_output_extent(std::size_t extent, std::size_t kernel, std::size_t padding,
                                 std::size_t stride) {
  return (extent + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      std::size_t padding, std::size_t stride, Conv2dCache* cache) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_rank(bias, 1, "conv2d bias");
  const std::size_t out_channels = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(1)) + " input channels, input is " +
                     shape_string(input.shape()));
  }
  if (kernel.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (bias.dim(0) != out_channels) {
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(out_channels) + " output channels");
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (k > input.dim(1) + 2 * padding || k > input.dim(2) + 2 * padding) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_string(input.shape()));
  }

  const std::size_t out_h = conv2d_output_extent(input.dim(1), k, padding, stride);
  const std::size_t out_w = conv2d_output_extent(input.dim(2), k, padding, stride);
  const std::size_t rows = input.dim(0) * k * k, positions = out_h * out_w;

  Tensor cols = im2col(input, k, padding, stride, out_h, out_w);
  Tensor out({out_channels, out_h, out_w});
  MatrixMap out_m(out.data(), static_cast<Eigen::Index>(out_channels),
                  static_cast<Eigen::Index>(positions));
  ConstMatrixMap kernel_m(kernel.data(), static_cast<Eigen::Index>(out_channels),
                          static_cast<Eigen::Index>(rows));
  ConstMatrixMap cols_m(cols.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(positions));
  out_m.noalias() = kernel_m * cols_m;
  for (std::size_t o = 0; o < out_channels; ++o) {
    out_m.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  }

  if (cache) {
    cache->input = input;
    cache->columns = std::move(cols);
    cache->kernel_size = k;
    cache->padding = padding;
    cache->stride = stride;
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Conv2dCache& cache, const Tensor& kernel,
                            bool need_input_grad) {
  if (!cache.valid()) throw std::logic_error("conv2d_backward: no forward cache available");
  require_rank(grad_out, 3, "conv2d grad_out");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t out_channels = kernel.dim(0), k = cache.kernel_size;
  const std::size_t out_h = conv2d_output_extent(cache.input.dim(1), k, cache.padding, cache.stride);
  const std::size_t out_w = conv2d_output_extent(cache.input.dim(2), k, cache.padding, cache.stride);
  if (grad_out.shape() != Shape{out_channels, out_h, out_w} || kernel.dim(2) != k ||
      kernel.dim(1) != cache.input.dim(0)) {
    throw ShapeError("conv2d_backward: grad_out " + shape_string(grad_out.shape()) +
                     " inconsistent with cached forward");
  }
  const std::size_t rows = cache.columns.dim(0), positions = out_h * out_w;

  ConstMatrixMap grad_m(grad_out.data(), static_cast<Eigen::Index>(out_channels),
                        static_cast<Eigen::Index>(positions));
  ConstMatrixMap cols_m(cache.columns.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(positions));
  ConstMatrixMap kernel_m(kernel.data(), static_cast<Eigen::Index>(out_channels),
                          static_cast<Eigen::Index>(rows));

  Conv2dGrads grads;
  grads.kernel = Tensor(kernel.shape());
  MatrixMap gk(grads.kernel.data(), static_cast<Eigen::Index>(out_channels),
               static_cast<Eigen::Index>(rows));
  gk.noalias() = grad_m * cols_m.transpose();

  grads.bias = Tensor({out_channels});
  for (std::size_t o = 0; o < out_channels; ++o) {
    double s = 0.0;
    const double* g = grad_out.data() + o * positions;
    for (std::size_t p = 0; p < positions; ++p) s += g[p];
    grads.bias[o] = s;
  }

  if (need_input_grad) {
    Tensor grad_cols({rows, positions});
    MatrixMap gc(grad_cols.data(), static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(positions));
    gc.noalias() = kernel_m.transpose() * grad_m;
    grads.input = col2im(grad_cols, cache.input.shape(), k, cache.padding, cache.stride, out_h, out_w);
  }
  return grads;
}

Tensor avgpool2d_forward(const Tensor& input, std::size_t window) {
  require_rank(input, 3, "avgpool2d input");
  if (window == 0 || input.dim(1) % window != 0 || input.dim(2) % window != 0) {
    throw ShapeError("avgpool2d: window " + std::to_string(window) + " does not divide " +
                     shape_string(input.shape()));
  }
  const std::size_t channels = input.dim(0), out_h = input.dim(1) / window,
                    out_w = input.dim(2) / window;
  const double scale = 1.0 / static_cast<double>(window * window);
  Tensor out({channels, out_h, out_w});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            s += input.at(c, oy * window + dy, ox * window + dx);
          }
        }
        out.at(c, oy, ox) = s * scale;
      }
    }
  }
  return out;
}

Tensor avgpool2d_backward(const Tensor& grad_out, std::size_t window) {
  require_rank(grad_out, 3, "avgpool2d grad_out");
  if (window == 0) throw ShapeError("avgpool2d: window must be positive");
  const std::size_t channels = grad_out.dim(0), out_h = grad_out.dim(1), out_w = grad_out.dim(2);
  const double scale = 1.0 / static_cast<double>(window * window);
  Tensor grad_in({channels, out_h * window, out_w * window});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < out_h * window; ++y) {
      for (std::size_t x = 0; x < out_w * window; ++x) {
        grad_in.at(c, y, x) = grad_out.at(c, y / window, x / window) * scale;
      }
    }
  }
  return grad_in;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(weights, 2, "dense weights");
  require_rank(bias, 1, "dense bias");
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (input.size() != n || bias.dim(0) != m) {
    throw ShapeError("dense: input " + shape_string(input.shape()) + ", weights " +
                     shape_string(weights.shape()) + ", bias " + shape_string(bias.shape()));
  }
  Tensor out({m});
  ConstMatrixMap w(weights.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  ConstVectorMap x(input.data(), static_cast<Eigen::Index>(n));
  ConstVectorMap b(bias.data(), static_cast<Eigen::Index>(m));
  VectorMap y(out.data(), static_cast<Eigen::Index>(m));
  y.noalias() = w * x;
  y += b;
  return out;
}

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weights) {
  require_rank(weights, 2, "dense weights");
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (grad_out.size() != m || input.size() != n) {
    throw ShapeError("dense_backward: grad_out " + shape_string(grad_out.shape()) + ", input " +
                     shape_string(input.shape()) + ", weights " + shape_string(weights.shape()));
  }
  DenseGrads grads;
  grads.input = Tensor(input.shape());
  grads.weights = Tensor(weights.shape());
  grads.bias = Tensor({m}, std::vector<double>(grad_out.values().begin(), grad_out.values().end()));

  ConstMatrixMap w(weights.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  ConstVectorMap g(grad_out.data(), static_cast<Eigen::Index>(m));
  ConstVectorMap x(input.data(), static_cast<Eigen::Index>(n));
  VectorMap gx(grads.input.data(), static_cast<Eigen::Index>(n));
  MatrixMap gw(grads.weights.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  gx.noalias() = w.transpose() * g;
  gw.noalias() = g * x.transpose();
  return grads;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor activation_forward(const Tensor& input, Activation kind) {
  Tensor out = input;
  if (kind == Activation::sigmoid) {
    for (double& v : out.values()) v = sigmoid(v);
    return out;
  }
  // tanh(x) = sign(x) * (1 - 2 / (exp(2|x|) + 1)), vectorized through Eigen's exp.
  Eigen::Map<Eigen::ArrayXd> a(out.data(), static_cast<Eigen::Index>(out.size()));
  const Eigen::ArrayXd e = (2.0 * a.abs()).exp();
  a = a.sign() * (1.0 - 2.0 / (e + 1.0));
  return out;
}

Tensor activation_backward(const Tensor& grad_out, const Tensor& output, Activation kind) {
  if (!same_shape(grad_out, output)) {
    throw ShapeError("activation_backward: grad " + shape_string(grad_out.shape()) +
                     " vs output " + shape_string(output.shape()));
  }
  Tensor grad = grad_out;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double y = output[i];
    grad[i] *= kind == Activation::tanh ? 1.0 - y * y : y * (1.0 - y);
  }
  return grad;
}

namespace {
void check_label(int label) {
  if (label != 0 && label != 1) {
    throw std::invalid_argument("bce_loss: label must be 0 or 1, got " + std::to_string(label));
  }
}
}  // namespace

double bce_loss(double score, int label) {
  check_label(label);
  const double s = std::clamp(score, kBceEpsilon, 1.0 - kBceEpsilon);
  return label == 1 ? -std::log(s) : -std::log(1.0 - s);
}

double bce_loss_grad(double score, int label) {
  check_label(label);
  if (score < kBceEpsilon || score > 1.0 - kBceEpsilon) return 0.0;
  return label == 1 ? -1.0 / score : 1.0 / (1.0 - score);
}

double mse_loss(double prediction, double target) {
  const double d = prediction - target;
  return d * d;
}

double mse_loss_grad(double prediction, double target) { return 2.0 * (prediction - target); }

void sgd_step(std::span<Parameter> params, double learning_rate) {
  for (const auto& p : params) {
    if (p.grad.shape() != p.value.shape()) {
      throw ShapeError("sgd_step: gradient of '" + p.name + "' has shape " +
                       shape_string(p.grad.shape()) + ", value " + shape_string(p.value.shape()));
    }
    if (!p.grad.all_finite()) {
      throw NumericError("sgd_step: non-finite gradient in parameter '" + p.name + "'");
    }
  }
  for (auto& p : params) {
    if (!p.frozen) {
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= learning_rate * p.grad[i];
    }
    p.grad.fill(0.0);
  }
}

std::vector<Tensor> finite_diff_grad(const std::function<double()>& loss_fn,
                                     std::span<Tensor* const> values, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  std::vector<Tensor> grads;
  grads.reserve(values.size());
  for (Tensor* t : values) {
    Tensor g(t->shape());
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = (*t)[i];
      (*t)[i] = saved + h;
      const double plus = loss_fn();
      (*t)[i] = saved - h;
      const double minus = loss_fn();
      (*t)[i] = saved;
      g[i] = (plus - minus) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace dfop
