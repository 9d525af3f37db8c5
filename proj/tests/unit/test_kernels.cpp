#include <gtest/gtest.h>

#include <cmath>

#include "dkan/kernels.hpp"
#include "dkan/util.hpp"

namespace dkan::kernels {
namespace {

Tensor3 random_tensor(int c, int h, int w, Rng& r) {
  Tensor3 t(c, h, w);
  for (auto& v : t.data) v = r.uniform(-1, 1);
  return t;
}

std::vector<double> random_vec(std::size_t n, Rng& r) {
  std::vector<double> v(n);
  for (auto& x : v) x = r.uniform(-1, 1);
  return v;
}

struct Case {
  int c_in, c_out, h, w, k, s, p;
};

const Case kCases[] = {{3, 5, 9, 7, 3, 1, 1}, {4, 6, 16, 16, 3, 2, 1}, {2, 3, 5, 5, 1, 1, 0}, {5, 2, 7, 11, 3, 2, 1}};

TEST(Kernels, ConvOutputSizeIsCeilOfStride) {
  const ConvShape s{1, 1, 3, 2, 1};
  EXPECT_EQ(conv_output_size(64, s), 32);
  EXPECT_EQ(conv_output_size(7, s), 4);
  EXPECT_EQ(conv_output_size(800, s), 400);
  EXPECT_EQ(conv_output_size(25, s), 13);
}

TEST(Kernels, ParallelConvMatchesReferenceBitwise) {
  Rng r(1);
  for (const auto& c : kCases) {
    const ConvShape shape{c.c_in, c.c_out, c.k, c.s, c.p};
    const Tensor3 in = random_tensor(c.c_in, c.h, c.w, r);
    const auto w = random_vec(shape.weight_count(), r);
    const auto b = random_vec(c.c_out, r);
    Tensor3 o1, o2;
    conv2d_forward(in, w, b, shape, o1);
    reference::conv2d_forward(in, w, b, shape, o2);
    ASSERT_TRUE(o1.same_shape(o2));
    EXPECT_EQ(o1.data, o2.data);

    const Tensor3 g = random_tensor(o1.channels, o1.height, o1.width, r);
    Tensor3 gi1, gi2;
    std::vector<double> gw1(w.size(), 0.5), gw2(w.size(), 0.5), gb1(b.size(), 0.25), gb2(b.size(), 0.25);
    conv2d_backward(in, w, shape, g, &gi1, gw1, gb1);
    reference::conv2d_backward(in, w, shape, g, &gi2, gw2, gb2);
    EXPECT_EQ(gi1.data, gi2.data);
    EXPECT_EQ(gw1, gw2);
    EXPECT_EQ(gb1, gb2);
  }
}

TEST(Kernels, ConvMatchesDirectSum) {
  Rng r(2);
  const ConvShape shape{2, 3, 3, 2, 1};
  const Tensor3 in = random_tensor(2, 6, 5, r);
  const auto w = random_vec(shape.weight_count(), r);
  const auto b = random_vec(3, r);
  Tensor3 out;
  conv2d_forward(in, w, b, shape, out);
  for (int o = 0; o < 3; ++o)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        double s = b[o];
        for (int i = 0; i < 2; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y * 2 - 1 + ky, ix = x * 2 - 1 + kx;
              if (iy < 0 || ix < 0 || iy >= 6 || ix >= 5) continue;
              s += w[((o * 2 + i) * 3 + ky) * 3 + kx] * in.at(i, iy, ix);
            }
        EXPECT_NEAR(out.at(o, y, x), s, 1e-12);
      }
}

TEST(Kernels, ConvBackwardMatchesFiniteDifferences) {
  Rng r(3);
  const ConvShape shape{2, 3, 3, 2, 1};
  Tensor3 in = random_tensor(2, 7, 6, r);
  auto w = random_vec(shape.weight_count(), r);
  const auto b = random_vec(3, r);
  Tensor3 out;
  conv2d_forward(in, w, b, shape, out);
  const Tensor3 g = random_tensor(out.channels, out.height, out.width, r);
  auto objective = [&] {
    Tensor3 o;
    conv2d_forward(in, w, b, shape, o);
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o.data[i] * g.data[i];
    return s;
  };
  Tensor3 gi;
  std::vector<double> gw(w.size(), 0.0), gb(3, 0.0);
  conv2d_backward(in, w, shape, g, &gi, gw, gb);
  const double h = 1e-6;
  for (std::size_t k = 0; k < in.size(); k += 5) {
    const double s = in.data[k];
    in.data[k] = s + h;
    const double up = objective();
    in.data[k] = s - h;
    const double dn = objective();
    in.data[k] = s;
    EXPECT_NEAR(gi.data[k], (up - dn) / (2 * h), 1e-7);
  }
  for (std::size_t k = 0; k < w.size(); k += 3) {
    const double s = w[k];
    w[k] = s + h;
    const double up = objective();
    w[k] = s - h;
    const double dn = objective();
    w[k] = s;
    EXPECT_NEAR(gw[k], (up - dn) / (2 * h), 1e-7);
  }
}

TEST(Kernels, ParallelLinearMatchesReferenceBitwise) {
  Rng r(4);
  const int in = 37, out = 13;
  const auto x = random_vec(in, r), w = random_vec(in * out, r), b = random_vec(out, r), gy = random_vec(out, r);
  std::vector<double> y1(out), y2(out);
  linear_forward(x, w, b, y1);
  reference::linear_forward(x, w, b, y2);
  EXPECT_EQ(y1, y2);
  std::vector<double> gx1(in, 0.1), gx2(in, 0.1), gw1(w.size(), 0.0), gw2(w.size(), 0.0), gb1(out, 0.0), gb2(out, 0.0);
  linear_backward(x, w, gy, gx1, gw1, gb1);
  reference::linear_backward(x, w, gy, gx2, gw2, gb2);
  EXPECT_EQ(gx1, gx2);
  EXPECT_EQ(gw1, gw2);
  EXPECT_EQ(gb1, gb2);
  for (int o = 0; o < out; ++o) {
    double s = b[o];
    for (int i = 0; i < in; ++i) s += w[o * in + i] * x[i];
    EXPECT_NEAR(y1[o], s, 1e-12);
  }
}

TEST(Kernels, Relu) {
  std::vector<double> v{-1, 0, 2, -0.5, 3};
  relu_inplace(v);
  EXPECT_EQ(v, (std::vector<double>{0, 0, 2, 0, 3}));
  std::vector<double> g{1, 1, 1, 1, 1};
  relu_backward(v, g);
  EXPECT_EQ(g, (std::vector<double>{0, 0, 1, 0, 1}));
}

}  // namespace
}  // namespace dkan::kernels
