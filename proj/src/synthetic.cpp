#include "bellcnn/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "bellcnn/error.hpp"

namespace bellcnn {
namespace {

double jitter(Rng& rng, double spread) { return (2.0 * uniform01(rng) - 1.0) * spread; }

bool inside(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

std::vector<std::uint8_t> synthetic_slice_pixels(std::size_t label, std::size_t width, std::size_t height, Rng& rng) {
  if (label > 1) throw Error(ErrorKind::OutOfRange, "synthetic slices have labels 0 and 1");
  if (width == 0 || height == 0) throw Error(ErrorKind::BadDimensions, "slice extents must be >= 1");
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  const double cx = w / 2.0 + jitter(rng, 0.03 * w), cy = h / 2.0 + jitter(rng, 0.03 * h);
  const double brain_rx = w * (0.38 + jitter(rng, 0.02)), brain_ry = h * (0.44 + jitter(rng, 0.02));
  const double tissue = 0.62 + jitter(rng, 0.05);

  // Ventricles: a mirrored pair either side of the midline.
  const double scale = label == 1 ? 0.11 : 0.04;
  const double vent_rx = w * (scale * 0.6 + jitter(rng, 0.005)), vent_ry = h * (scale * 1.4 + jitter(rng, 0.01));
  const double vent_dx = w * (label == 1 ? 0.09 : 0.05);

  std::vector<std::uint8_t> pixels(width * height);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
      double v = 0.02;
      if (inside(x, y, cx, cy, brain_rx, brain_ry)) {
        v = tissue;
        if (inside(x, y, cx - vent_dx, cy, vent_rx, vent_ry) || inside(x, y, cx + vent_dx, cy, vent_rx, vent_ry))
          v = 0.12;
      }
      v += 0.04 * standard_normal(rng);
      pixels[r * width + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return pixels;
}

Tensor synthetic_slice(std::size_t label, std::size_t width, std::size_t height, Rng& rng) {
  const auto pixels = synthetic_slice_pixels(label, width, height, rng);
  Tensor t(Shape{height, width, 1});
  for (std::size_t i = 0; i < pixels.size(); ++i) t[i] = pixels[i] / 255.0;
  return t;
}

std::vector<LabeledFeatures> gaussian_clusters(std::size_t count, std::size_t dimension, double separation, Rng& rng) {
  if (dimension == 0) throw Error(ErrorKind::BadDimensions, "feature dimension must be >= 1");
  const double offset = separation / 2.0 / std::sqrt(static_cast<double>(dimension));
  std::vector<LabeledFeatures> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % 2;
    Tensor f(Shape{dimension});
    for (double& v : f.data()) v = (label == 1 ? offset : -offset) + standard_normal(rng);
    out.push_back({std::move(f), label});
  }
  return out;
}

}  // namespace bellcnn
