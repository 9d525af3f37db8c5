#include "dkan/kernels.hpp"

namespace dkan::kernels {

int conv_output_size(int n, const ConvShape& shape) {
  return (n + 2 * shape.padding - shape.kernel) / shape.stride + 1;
}

namespace reference {

void conv2d_forward(const Tensor3& in, std::span<const double> weight, std::span<const double> bias,
                    const ConvShape& s, Tensor3& out) {
  const int oh = conv_output_size(in.height, s);
  const int ow = conv_output_size(in.width, s);
  out = Tensor3(s.out_channels, oh, ow);
  for (int oc = 0; oc < s.out_channels; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[oc];
        for (int ic = 0; ic < s.in_channels; ++ic) {
          for (int ky = 0; ky < s.kernel; ++ky) {
            const int iy = oy * s.stride - s.padding + ky;
            if (iy < 0 || iy >= in.height) continue;
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int ix = ox * s.stride - s.padding + kx;
              if (ix < 0 || ix >= in.width) continue;
              acc += weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel + ky) * s.kernel + kx] *
                     in.at(ic, iy, ix);
            }
          }
        }
        out.at(oc, oy, ox) = acc;
      }
    }
  }
}

void conv2d_backward(const Tensor3& in, std::span<const double> weight, const ConvShape& s,
                     const Tensor3& grad_out, Tensor3* grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const int oh = grad_out.height;
  const int ow = grad_out.width;
  for (int oc = 0; oc < s.out_channels; ++oc) {
    if (!grad_bias.empty()) {
      double acc = 0.0;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) acc += grad_out.at(oc, oy, ox);
      grad_bias[oc] += acc;
    }
    for (int ic = 0; ic < s.in_channels; ++ic) {
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s.stride - s.padding + ky;
            if (iy < 0 || iy >= in.height) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s.stride - s.padding + kx;
              if (ix < 0 || ix >= in.width) continue;
              acc += grad_out.at(oc, oy, ox) * in.at(ic, iy, ix);
            }
          }
          grad_weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel + ky) * s.kernel + kx] += acc;
        }
      }
    }
  }
  if (grad_in == nullptr) return;
  *grad_in = Tensor3(in.channels, in.height, in.width);
  for (int ic = 0; ic < s.in_channels; ++ic) {
    for (int iy = 0; iy < in.height; ++iy) {
      for (int ix = 0; ix < in.width; ++ix) {
        double acc = 0.0;
        for (int oc = 0; oc < s.out_channels; ++oc) {
          for (int ky = 0; ky < s.kernel; ++ky) {
            const int ny = iy + s.padding - ky;
            if (ny < 0 || ny % s.stride != 0) continue;
            const int oy = ny / s.stride;
            if (oy >= oh) continue;
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int nx = ix + s.padding - kx;
              if (nx < 0 || nx % s.stride != 0) continue;
              const int ox = nx / s.stride;
              if (ox >= ow) continue;
              acc += grad_out.at(oc, oy, ox) *
                     weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel + ky) * s.kernel + kx];
            }
          }
        }
        grad_in->at(ic, iy, ix) = acc;
      }
    }
  }
}

void linear_forward(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
                    std::span<double> y) {
  const std::size_t n_in = x.size();
  for (std::size_t o = 0; o < y.size(); ++o) {
    double acc = bias.empty() ? 0.0 : bias[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += weight[o * n_in + i] * x[i];
    y[o] = acc;
  }
}

void linear_backward(std::span<const double> x, std::span<const double> weight, std::span<const double> grad_y,
                     std::span<double> grad_x, std::span<double> grad_weight, std::span<double> grad_bias) {
  const std::size_t n_in = x.size();
  for (std::size_t o = 0; o < grad_y.size(); ++o) {
    if (!grad_bias.empty()) grad_bias[o] += grad_y[o];
    for (std::size_t i = 0; i < n_in; ++i) grad_weight[o * n_in + i] += grad_y[o] * x[i];
  }
  if (grad_x.empty()) return;
  for (std::size_t i = 0; i < n_in; ++i) {
    double acc = 0.0;
    for (std::size_t o = 0; o < grad_y.size(); ++o) acc += grad_y[o] * weight[o * n_in + i];
    grad_x[i] += acc;
  }
}

}  // namespace reference
}  // namespace dkan::kernels
