#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dkan {

/// Dense channels x height x width tensor of doubles, row-major within a channel.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  std::span<double> channel(int c) { return {data.data() + c * plane(), plane()}; }
  std::span<const double> channel(int c) const { return {data.data() + c * plane(), plane()}; }

  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  std::string shape_string() const;
  void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

inline constexpr int kPyramidLevels = 4;
inline constexpr std::array<int, kPyramidLevels> kPyramidStrides{4, 8, 16, 32};
inline constexpr std::array<const char*, kPyramidLevels> kPyramidNames{"P2", "P3", "P4", "P5"};

/// Class-agnostic multi-scale features {P2, P3, P4, P5} at strides 4/8/16/32.
struct FeaturePyramid {
  std::array<Tensor3, kPyramidLevels> levels;
  std::array<int, kPyramidLevels> strides = kPyramidStrides;

  int channels() const { return levels[0].channels; }
  bool empty() const { return levels[0].size() == 0; }
};

}  // namespace dkan
