#include <algorithm>

#include "dkan/kernels.hpp"

namespace dkan::kernels {

namespace {

// Output index range [lo, hi) whose input tap (o * stride - pad + k) lands in [0, n).
inline void valid_range(int n, int out_n, int stride, int pad, int k, int& lo, int& hi) {
  const int offset = k - pad;
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = (n - 1 - offset) >= 0 ? (n - 1 - offset) / stride + 1 : 0;
  hi = std::min(hi, out_n);
  if (hi < lo) hi = lo;
}

constexpr long kParallelThreshold = 1L << 14;

}  // namespace

void conv2d_forward(const Tensor3& in, std::span<const double> weight, std::span<const double> bias,
                    const ConvShape& s, Tensor3& out) {
  const int oh = conv_output_size(in.height, s);
  const int ow = conv_output_size(in.width, s);
  if (out.channels != s.out_channels || out.height != oh || out.width != ow) out = Tensor3(s.out_channels, oh, ow);
  const long work = static_cast<long>(s.out_channels) * oh * ow * s.in_channels * s.kernel * s.kernel;

#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (int oc = 0; oc < s.out_channels; ++oc) {
    double* dst = out.data.data() + static_cast<std::size_t>(oc) * oh * ow;
    std::fill(dst, dst + static_cast<std::size_t>(oh) * ow, bias.empty() ? 0.0 : bias[oc]);
    for (int ic = 0; ic < s.in_channels; ++ic) {
      const double* src = in.data.data() + static_cast<std::size_t>(ic) * in.height * in.width;
      const double* w = weight.data() + (static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel * s.kernel;
      for (int ky = 0; ky < s.kernel; ++ky) {
        int oy0, oy1;
        valid_range(in.height, oh, s.stride, s.padding, ky, oy0, oy1);
        for (int kx = 0; kx < s.kernel; ++kx) {
          int ox0, ox1;
          valid_range(in.width, ow, s.stride, s.padding, kx, ox0, ox1);
          const double wv = w[ky * s.kernel + kx];
          for (int oy = oy0; oy < oy1; ++oy) {
            const double* row = src + static_cast<std::size_t>(oy * s.stride - s.padding + ky) * in.width;
            double* orow = dst + static_cast<std::size_t>(oy) * ow;
            const int xoff = kx - s.padding;
            if (s.stride == 1) {
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox + xoff];
            } else {
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox * s.stride + xoff];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward(const Tensor3& in, std::span<const double> weight, const ConvShape& s,
                     const Tensor3& grad_out, Tensor3* grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const int oh = grad_out.height;
  const int ow = grad_out.width;
  const long work = static_cast<long>(s.out_channels) * oh * ow * s.in_channels * s.kernel * s.kernel;

#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (int oc = 0; oc < s.out_channels; ++oc) {
    const double* g = grad_out.data.data() + static_cast<std::size_t>(oc) * oh * ow;
    if (!grad_bias.empty()) {
      double acc = 0.0;
      for (int i = 0; i < oh * ow; ++i) acc += g[i];
      grad_bias[oc] += acc;
    }
    for (int ic = 0; ic < s.in_channels; ++ic) {
      const double* src = in.data.data() + static_cast<std::size_t>(ic) * in.height * in.width;
      double* gw = grad_weight.data() + (static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel * s.kernel;
      for (int ky = 0; ky < s.kernel; ++ky) {
        int oy0, oy1;
        valid_range(in.height, oh, s.stride, s.padding, ky, oy0, oy1);
        for (int kx = 0; kx < s.kernel; ++kx) {
          int ox0, ox1;
          valid_range(in.width, ow, s.stride, s.padding, kx, ox0, ox1);
          const int xoff = kx - s.padding;
          double acc = 0.0;
          for (int oy = oy0; oy < oy1; ++oy) {
            const double* row = src + static_cast<std::size_t>(oy * s.stride - s.padding + ky) * in.width;
            const double* grow = g + static_cast<std::size_t>(oy) * ow;
            for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * row[ox * s.stride + xoff];
          }
          gw[ky * s.kernel + kx] += acc;
        }
      }
    }
  }

  if (grad_in == nullptr) return;
  if (!grad_in->same_shape(in)) *grad_in = Tensor3(in.channels, in.height, in.width);

#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (int ic = 0; ic < s.in_channels; ++ic) {
    double* dst = grad_in->data.data() + static_cast<std::size_t>(ic) * in.height * in.width;
    std::fill(dst, dst + static_cast<std::size_t>(in.height) * in.width, 0.0);
    for (int oc = 0; oc < s.out_channels; ++oc) {
      const double* g = grad_out.data.data() + static_cast<std::size_t>(oc) * oh * ow;
      const double* w = weight.data() + (static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel * s.kernel;
      for (int ky = 0; ky < s.kernel; ++ky) {
        int oy0, oy1;
        valid_range(in.height, oh, s.stride, s.padding, ky, oy0, oy1);
        for (int kx = 0; kx < s.kernel; ++kx) {
          int ox0, ox1;
          valid_range(in.width, ow, s.stride, s.padding, kx, ox0, ox1);
          const double wv = w[ky * s.kernel + kx];
          const int xoff = kx - s.padding;
          for (int oy = oy0; oy < oy1; ++oy) {
            double* row = dst + static_cast<std::size_t>(oy * s.stride - s.padding + ky) * in.width;
            const double* grow = g + static_cast<std::size_t>(oy) * ow;
            for (int ox = ox0; ox < ox1; ++ox) row[ox * s.stride + xoff] += grow[ox] * wv;
          }
        }
      }
    }
  }
}

void linear_forward(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
                    std::span<double> y) {
  const std::size_t n_in = x.size();
  const long n_out = static_cast<long>(y.size());
#pragma omp parallel for schedule(static) if (n_out * static_cast<long>(n_in) > kParallelThreshold)
  for (long o = 0; o < n_out; ++o) {
    double acc = bias.empty() ? 0.0 : bias[o];
    const double* w = weight.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

void linear_backward(std::span<const double> x, std::span<const double> weight, std::span<const double> grad_y,
                     std::span<double> grad_x, std::span<double> grad_weight, std::span<double> grad_bias) {
  const std::size_t n_in = x.size();
  const long n_out = static_cast<long>(grad_y.size());
  const bool big = n_out * static_cast<long>(n_in) > kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (long o = 0; o < n_out; ++o) {
    const double gy = grad_y[o];
    if (!grad_bias.empty()) grad_bias[o] += gy;
    double* gw = grad_weight.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) gw[i] += gy * x[i];
  }
  if (grad_x.empty()) return;
#pragma omp parallel for schedule(static) if (big)
  for (long i = 0; i < static_cast<long>(n_in); ++i) {
    double acc = 0.0;
    for (long o = 0; o < n_out; ++o) acc += grad_y[o] * weight[o * n_in + i];
    grad_x[i] += acc;
  }
}

void relu_inplace(std::span<double> x) {
  for (double& v : x) v = v > 0.0 ? v : 0.0;
}

void relu_backward(std::span<const double> activation, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activation[i] > 0.0)) grad[i] = 0.0;
}

}  // namespace dkan::kernels
