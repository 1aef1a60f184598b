#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dfop/tensor.hpp"

namespace dfop {

// Values retained by conv2d_forward for the backward pass. `columns` is the
// unfolded input (rows = C_in*k*k, columns = output positions).
struct Conv2dCache {
  Tensor input;
  Tensor columns;
  std::size_t kernel_size = 0;
  std::size_t padding = 0;
  std::size_t stride = 1;

  bool valid() const { return !input.empty() && !columns.empty(); }
};

struct Conv2dGrads {
  Tensor input;  // empty when not requested
  Tensor kernel;
  Tensor bias;
};

std::size_t conv2d_output_extent(std::size_t extent, std::size_t kernel, std::size_t padding,
                                 std::size_t stride);

// Cross-correlation of input [C_in,H,W] with kernel [C_out,C_in,k,k] plus bias [C_out].
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      std::size_t padding, std::size_t stride, Conv2dCache* cache = nullptr);

// Throws std::logic_error when the cache was not filled by a forward call.
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Conv2dCache& cache, const Tensor& kernel,
                            bool need_input_grad = true);

Tensor avgpool2d_forward(const Tensor& input, std::size_t window);
Tensor avgpool2d_backward(const Tensor& grad_out, std::size_t window);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

// output_i = sum_j weights[i,j] * input[j] + bias[i]
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weights);

enum class Activation { tanh, sigmoid };

double sigmoid(double x);
Tensor activation_forward(const Tensor& input, Activation kind);
// Derivative expressed through the forward output (tanh: 1-y^2, sigmoid: y(1-y)).
Tensor activation_backward(const Tensor& grad_out, const Tensor& output, Activation kind);

inline constexpr double kBceEpsilon = 1e-7;

double bce_loss(double score, int label);
// d(bce)/d(score); zero where the clamp to [eps, 1-eps] is active.
double bce_loss_grad(double score, int label);

double mse_loss(double prediction, double target);
double mse_loss_grad(double prediction, double target);

// value -= lr * grad for every non-frozen parameter, then all grads are zeroed.
// Throws NumericError if any gradient is not finite; no parameter is touched then.
void sgd_step(std::span<Parameter> params, double learning_rate);

// Central differences (L(p+h) - L(p-h)) / 2h for every element of every tensor.
// Each element is restored bitwise after probing.
std::vector<Tensor> finite_diff_grad(const std::function<double()>& loss_fn,
                                     std::span<Tensor* const> values, double h = 1e-5);

}  // namespace dfop
