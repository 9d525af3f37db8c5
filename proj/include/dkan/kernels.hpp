#pragma once

#include <span>

#include "dkan/tensor.hpp"

// Dense compute kernels used by the detector.
//
// dkan::kernels holds the OpenMP-parallel versions used in training and
// inference. dkan::kernels::reference holds straightforward serial loops kept
// as the ground truth for tests and benchmarks. Both produce bitwise-identical
// results: the parallel versions partition work by output element, so every
// sum is accumulated in the same order regardless of thread count.
namespace dkan::kernels {

struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

/// ceil-style output size for the usual (n + 2p - k) / s + 1 rule.
int conv_output_size(int n, const ConvShape& shape);

// Weights are laid out [out][in][ky][kx]. `out` is resized as needed.
void conv2d_forward(const Tensor3& in, std::span<const double> weight, std::span<const double> bias,
                    const ConvShape& shape, Tensor3& out);

// Accumulates into grad_weight / grad_bias; overwrites *grad_in when non-null.
void conv2d_backward(const Tensor3& in, std::span<const double> weight, const ConvShape& shape,
                     const Tensor3& grad_out, Tensor3* grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias);

// y = W x + b with W laid out [out][in].
void linear_forward(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
                    std::span<double> y);
// Accumulates into grad_weight / grad_bias / grad_x (grad_x may be empty).
void linear_backward(std::span<const double> x, std::span<const double> weight, std::span<const double> grad_y,
                     std::span<double> grad_x, std::span<double> grad_weight, std::span<double> grad_bias);

void relu_inplace(std::span<double> x);
// grad *= (activation > 0)
void relu_backward(std::span<const double> activation, std::span<double> grad);

namespace reference {

void conv2d_forward(const Tensor3& in, std::span<const double> weight, std::span<const double> bias,
                    const ConvShape& shape, Tensor3& out);
void conv2d_backward(const Tensor3& in, std::span<const double> weight, const ConvShape& shape,
                     const Tensor3& grad_out, Tensor3* grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias);
void linear_forward(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
                    std::span<double> y);
void linear_backward(std::span<const double> x, std::span<const double> weight, std::span<const double> grad_y,
                     std::span<double> grad_x, std::span<double> grad_weight, std::span<double> grad_bias);

}  // namespace reference

}  // namespace dkan::kernels
