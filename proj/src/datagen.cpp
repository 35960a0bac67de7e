#include "diffedit/datagen.hpp"

#include <algorithm>
#include <cmath>

#include "diffedit/error.hpp"

namespace diffedit {

Tensor ToyDataset::batch() const { return stack_rows(images); }

Tensor ToyDataset::batch(std::size_t first, std::size_t count) const {
  if (first + count > images.size()) throw ConfigError("dataset batch out of range");
  return stack_rows(std::span<const Tensor>(images).subspan(first, count));
}

Tensor render_blob(const BlobParams& p, std::size_t side) {
  Tensor img({1, side * side});
  const double two_r2 = 2.0 * p.radius * p.radius;
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      const double di = static_cast<double>(i) - p.cx;
      const double dj = static_cast<double>(j) - p.cy;
      const double v = p.intensity * std::exp(-(di * di + dj * dj) / two_r2) * 2.0 - 1.0;
      img[i * side + j] = std::clamp(v, -1.0, 1.0);
    }
  }
  return img;
}

ToyDataset generate_dataset(std::size_t n, std::size_t side, Pcg32& rng) {
  if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  if (side < 8) throw ConfigError("generate_dataset: side must be >= 8");
  const double s = static_cast<double>(side);
  ToyDataset ds;
  ds.side = side;
  while (ds.images.size() < n) {
    BlobParams p;
    p.cx = rng.uniform(0.3 * s, 0.7 * s);
    p.cy = rng.uniform(0.3 * s, 0.7 * s);
    p.radius = rng.uniform(0.12 * s, 0.25 * s);
    p.intensity = rng.uniform(0.5, 0.9);
    Tensor img = render_blob(p, side);
    if (!blob_validity(img, side)) continue;
    ds.images.push_back(std::move(img));
    ds.params.push_back(p);
  }
  return ds;
}

Attribute parse_attribute(const std::string& name) {
  if (name == "brightness") return Attribute::kBrightness;
  if (name == "size") return Attribute::kSize;
  throw ConfigError("unknown attribute '" + name + "'; known: brightness, size");
}

std::string attribute_name(Attribute a) {
  return a == Attribute::kBrightness ? "brightness" : "size";
}

std::string polarity_name(Polarity p) { return p == Polarity::kIncrease ? "increase" : "decrease"; }

double attribute_measure(Attribute a, const Tensor& x) {
  if (x.size() == 0) throw ShapeError("attribute_measure: empty image");
  const double n = static_cast<double>(x.size());
  if (a == Attribute::kBrightness) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return total / n;
  }
  const auto positive = std::count_if(x.data().begin(), x.data().end(),
                                      [](double v) { return v > 0.0; });
  return static_cast<double>(positive) / n;
}

double attribute_measure(const std::string& name, const Tensor& x) {
  return attribute_measure(parse_attribute(name), x);
}

AttributeLabels attribute_direction(Attribute a, Polarity polarity, const ToyDataset& dataset,
                                    Embedder& e) {
  if (dataset.size() == 0) throw ConfigError("attribute_direction: empty dataset");
  if (dataset.image_dim() != e.image_dim()) {
    throw ShapeError("attribute_direction: dataset image_dim " +
                     std::to_string(dataset.image_dim()) + " vs embedder " +
                     std::to_string(e.image_dim()));
  }
  const std::size_t d = dataset.image_dim();
  const double step = a == Attribute::kBrightness ? 1e-3 : 1e-3 * static_cast<double>(dataset.side);
  Tensor mean_diff({1, d});
  for (const BlobParams& p : dataset.params) {
    BlobParams q = p;
    if (a == Attribute::kBrightness) {
      q.intensity += step;
    } else {
      q.radius += step;
    }
    const Tensor hi = render_blob(q, dataset.side);
    const Tensor lo = render_blob(p, dataset.side);
    for (std::size_t i = 0; i < d; ++i) mean_diff[i] += (hi[i] - lo[i]) / step;
  }
  for (double& v : mean_diff.data()) v /= static_cast<double>(dataset.size());

  Tensor dir = e.embed_image(mean_diff);
  double norm = 0.0;
  for (double v : dir.data()) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    throw DegenerateDirectionError("attribute_direction: '" + attribute_name(a) +
                                   "' has a zero embedded direction");
  }
  const double sign = polarity == Polarity::kIncrease ? 1.0 : -1.0;
  for (double& v : dir.data()) v *= sign / norm;

  AttributeLabels labels{attribute_name(a) + ":base",
                         attribute_name(a) + ":" + polarity_name(polarity)};
  e.register_attribute(labels.y_ref, Tensor({e.dim()}));
  e.register_attribute(labels.y_tar, std::move(dir));
  return labels;
}

bool blob_validity(const Tensor& x, std::size_t side) {
  if (x.size() != side * side || side < 4) {
    throw ShapeError("blob_validity: " + shape_string(x.shape()) + " is not a " +
                     std::to_string(side) + "x" + std::to_string(side) + " image");
  }
  auto px = [&](std::size_t i, std::size_t j) { return x[i * side + j]; };

  const double peak = *std::max_element(x.data().begin(), x.data().end());
  if (!(peak > 0.0)) return false;

  double ring = 0.0;
  std::size_t ring_count = 0;
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      if (i == 0 || j == 0 || i == side - 1 || j == side - 1) {
        ring += px(i, j);
        ++ring_count;
      }
    }
  }
  ring /= static_cast<double>(ring_count);

  const std::size_t c = side / 2;
  double centre = 0.0;
  for (std::size_t i = c - 1; i <= c + 1; ++i) {
    for (std::size_t j = c - 1; j <= c + 1; ++j) centre += px(i, j);
  }
  centre /= 9.0;
  if (!(ring < centre)) return false;

  double tv = 0.0;
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      if (i + 1 < side) tv += std::fabs(px(i + 1, j) - px(i, j));
      if (j + 1 < side) tv += std::fabs(px(i, j + 1) - px(i, j));
    }
  }
  return tv < static_cast<double>(side * side) * 0.5;
}

}  // namespace diffedit
