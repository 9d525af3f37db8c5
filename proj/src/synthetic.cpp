#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "dkan/dataset.hpp"
#include "dkan/error.hpp"
#include "dkan/evaluation.hpp"
#include "dkan/util.hpp"

namespace dkan {

namespace {

constexpr int kMinImageSize = 32;
constexpr int kPrimitiveKinds = 10;
constexpr double kBackground = 0.35;

enum class Primitive {
  horizontal_bar,
  vertical_bar,
  disk,
  ring,
  checker,
  dark_disk,
  cross,
  diagonal_bar,
  dark_bar,
  dark_ring,
};

struct Canvas {
  int size;
  std::vector<float> mask;
  explicit Canvas(int s) : size(s), mask(static_cast<std::size_t>(s) * s, 0.0f) {}
  void set(int x, int y, float v) {
    if (x >= 0 && y >= 0 && x < size && y < size) mask[static_cast<std::size_t>(y) * size + x] = v;
  }
};

void fill_rect(Canvas& c, int x0, int y0, int w, int h, float v) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) c.set(x, y, v);
}

// Pixels whose centres lie within [r_in, r_out] of (cx, cy).
void fill_annulus(Canvas& c, double cx, double cy, double r_in, double r_out, float v) {
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (d <= r_out && d >= r_in) c.set(x, y, v);
    }
  }
}

// Draws the primitive with its top-left extent at (ox, oy); returns the analytic box.
BoundingBox draw(Primitive kind, Canvas& c, Rng& rng, double ox, double oy, double w, double h) {
  const float bright = 0.4f;
  const float dark = -0.3f;
  switch (kind) {
    case Primitive::horizontal_bar:
    case Primitive::vertical_bar:
    case Primitive::dark_bar: {
      const int x0 = static_cast<int>(ox), y0 = static_cast<int>(oy);
      const int iw = static_cast<int>(w), ih = static_cast<int>(h);
      fill_rect(c, x0, y0, iw, ih, kind == Primitive::dark_bar ? dark : bright);
      return {double(x0), double(y0), double(x0 + iw), double(y0 + ih)};
    }
    case Primitive::disk:
    case Primitive::dark_disk: {
      const double r = w / 2;
      fill_annulus(c, ox + r, oy + r, 0.0, r, kind == Primitive::disk ? bright : dark);
      return {ox, oy, ox + 2 * r, oy + 2 * r};
    }
    case Primitive::ring:
    case Primitive::dark_ring: {
      const double r = w / 2;
      fill_annulus(c, ox + r, oy + r, r * 0.6, r, kind == Primitive::ring ? bright : dark);
      return {ox, oy, ox + 2 * r, oy + 2 * r};
    }
    case Primitive::checker: {
      const int x0 = static_cast<int>(ox), y0 = static_cast<int>(oy), side = static_cast<int>(w);
      const int cell = std::max(2, side / 4);
      for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x)
          c.set(x, y, (((x - x0) / cell + (y - y0) / cell) % 2) ? bright : -0.2f);
      return {double(x0), double(y0), double(x0 + side), double(y0 + side)};
    }
    case Primitive::cross: {
      const int x0 = static_cast<int>(ox), y0 = static_cast<int>(oy), side = static_cast<int>(w);
      const int t = std::max(2, side / 4);
      fill_rect(c, x0, y0 + (side - t) / 2, side, t, bright);
      fill_rect(c, x0 + (side - t) / 2, y0, t, side, bright);
      return {double(x0), double(y0), double(x0 + side), double(y0 + side)};
    }
    case Primitive::diagonal_bar: {
      const double t = std::max(2.0, w / 6);
      const bool flip = rng.uniform() < 0.5;
      const double ax = ox + t / 2, bx = ox + w - t / 2;
      const double ay = flip ? oy + h - t / 2 : oy + t / 2, by = flip ? oy + t / 2 : oy + h - t / 2;
      double minx = 1e9, miny = 1e9, maxx = -1e9, maxy = -1e9;
      for (int y = 0; y < c.size; ++y) {
        for (int x = 0; x < c.size; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          const double vx = bx - ax, vy = by - ay;
          const double u = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
          if (std::hypot(px - (ax + u * vx), py - (ay + u * vy)) <= t / 2) {
            c.set(x, y, bright);
            minx = std::min(minx, px - 0.5), miny = std::min(miny, py - 0.5);
            maxx = std::max(maxx, px + 0.5), maxy = std::max(maxy, py + 0.5);
          }
        }
      }
      return {std::min(minx, ox), std::min(miny, oy), std::max(maxx, ox + w), std::max(maxy, oy + h)};
    }
  }
  return {};
}

// Extent (w, h) drawn for a primitive at the given image size.
std::pair<double, double> extent(Primitive kind, int size, Rng& rng) {
  const double s = size;
  switch (kind) {
    case Primitive::horizontal_bar:
    case Primitive::dark_bar:
      return {std::floor(rng.uniform(0.25, 0.42) * s), std::max(3.0, std::floor(rng.uniform(0.07, 0.11) * s))};
    case Primitive::vertical_bar:
      return {std::max(3.0, std::floor(rng.uniform(0.07, 0.11) * s)), std::floor(rng.uniform(0.25, 0.42) * s)};
    case Primitive::disk:
    case Primitive::dark_disk:
    case Primitive::ring:
    case Primitive::dark_ring: {
      const double d = rng.uniform(0.18, 0.34) * s;
      return {d, d};
    }
    case Primitive::checker:
    case Primitive::cross: {
      const double d = std::floor(rng.uniform(0.2, 0.34) * s);
      return {d, d};
    }
    case Primitive::diagonal_bar: {
      const double d = rng.uniform(0.22, 0.36) * s;
      return {d, d};
    }
  }
  return {0, 0};
}

}  // namespace

std::vector<CategoryId> synthetic_categories(int num_categories) {
  if (num_categories < 2) throw UsageError("synthetic dataset needs at least 2 categories");
  if (num_categories > kPrimitiveKinds)
    throw UsageError("synthetic dataset supports at most " + std::to_string(kPrimitiveKinds) + " categories");
  auto neu = neu_det_categories();
  std::vector<CategoryId> out;
  for (int i = 0; i < num_categories; ++i)
    out.push_back(i < static_cast<int>(neu.size()) ? neu[i] : CategoryId{"D" + std::to_string(i), i});
  return out;
}

SyntheticSample render_synthetic_image(const CategoryId& category, const SyntheticConfig& config,
                                       const std::string& id, std::uint64_t seed) {
  const int size = config.image_size;
  if (size < kMinImageSize)
    throw UsageError("image_size " + std::to_string(size) + " is too small to place the largest primitive (min " +
                     std::to_string(kMinImageSize) + ")");
  const auto kind = static_cast<Primitive>(category.index % kPrimitiveKinds);
  Rng rng(seed);

  SyntheticSample sample;
  DefectImage& img = sample.image;
  img.id = id;
  img.width = img.height = size;
  img.pixels.assign(static_cast<std::size_t>(size) * size, 0.0f);

  // Background: flat level, a faint low-frequency ripple and white noise.
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  const double freq = rng.uniform(1.0, 3.0) * 2 * std::numbers::pi / size;
  const double angle = rng.uniform(0.0, std::numbers::pi);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double t = (x * std::cos(angle) + y * std::sin(angle)) * freq + phase;
      img.pixels[static_cast<std::size_t>(y) * size + x] =
          static_cast<float>(kBackground + 0.04 * std::sin(t) + config.noise * rng.normal());
    }
  }

  const int count = 1 + static_cast<int>(rng.uniform_index(std::max(1, config.max_instances)));
  for (int n = 0; n < count; ++n) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const auto [w, h] = extent(kind, size, rng);
      const double ox = rng.uniform(1.0, size - 1.0 - w);
      const double oy = rng.uniform(1.0, size - 1.0 - h);
      const BoundingBox candidate{ox, oy, ox + w, oy + h};
      const bool overlaps = std::any_of(img.instances.begin(), img.instances.end(), [&](const Instance& i) {
        return iou(i.box, candidate) > 0.0;
      });
      if (overlaps) continue;
      Canvas canvas(size);
      BoundingBox box = draw(kind, canvas, rng, ox, oy, w, h).clamped(size, size);
      img.instances.push_back({category, box});
      sample.instance_masks.push_back(std::move(canvas.mask));
      break;
    }
  }
  if (img.instances.empty()) throw Error("failed to place a primitive in " + id);

  for (const auto& mask : sample.instance_masks)
    for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] += mask[i];
  for (float& p : img.pixels) p = std::clamp(p, 0.0f, 1.0f);
  return sample;
}

std::vector<DefectImage> generate_synthetic_dataset(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.images_per_category < 1) throw UsageError("images_per_category must be positive");
  if (config.image_size < kMinImageSize)
    throw UsageError("image_size " + std::to_string(config.image_size) +
                     " is too small to place the largest primitive (min " + std::to_string(kMinImageSize) + ")");
  const auto categories = synthetic_categories(config.num_categories);
  std::vector<DefectImage> images(static_cast<std::size_t>(config.num_categories) * config.images_per_category);

#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(images.size()); ++i) {
    const auto& cat = categories[i / config.images_per_category];
    char id[64];
    std::snprintf(id, sizeof id, "%s_%04ld", cat.name.c_str(), i % config.images_per_category);
    images[i] = render_synthetic_image(cat, config, id, mix_seed(seed, static_cast<std::uint64_t>(i))).image;
  }
  return images;
}

}  // namespace dkan
