#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "diffedit/guidance.hpp"
#include "diffedit/rng.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

struct BlobParams {
  double cx = 0.0;  // row coordinate of the centre
  double cy = 0.0;  // column coordinate of the centre
  double radius = 0.0;
  double intensity = 0.0;
};

// Synthetic grayscale blobs, pixels in [-1, 1]. Images are rows {1, side^2}.
struct ToyDataset {
  std::size_t side = 16;
  std::vector<Tensor> images;
  std::vector<BlobParams> params;

  std::size_t size() const { return images.size(); }
  std::size_t image_dim() const { return side * side; }
  // All images stacked into {n, side^2}.
  Tensor batch() const;
  // Images [first, first + count) stacked.
  Tensor batch(std::size_t first, std::size_t count) const;
};

// pixel(i, j) = clamp(2 b exp(-((i - cx)^2 + (j - cy)^2) / (2 r^2)) - 1, -1, 1)
Tensor render_blob(const BlobParams& p, std::size_t side);

// cx, cy ~ U[0.3 S, 0.7 S], r ~ U[0.12 S, 0.25 S], b ~ U[0.5, 0.9]; draws
// that fail blob_validity are redrawn.
ToyDataset generate_dataset(std::size_t n, std::size_t side, Pcg32& rng);

enum class Attribute { kBrightness, kSize };
enum class Polarity { kIncrease, kDecrease };

Attribute parse_attribute(const std::string& name);
std::string attribute_name(Attribute a);
std::string polarity_name(Polarity p);

// brightness: mean pixel value. size: fraction of pixels > 0.
double attribute_measure(Attribute a, const Tensor& x);
double attribute_measure(const std::string& name, const Tensor& x);

struct AttributeLabels {
  std::string y_ref;
  std::string y_tar;
};

// Builds the text direction for an attribute from finite-difference pairs of
// the generator (intensity for brightness, radius for size), averaged over
// the dataset and embedded. Registers "<name>:base" as the zero vector and
// "<name>:<polarity>" as the signed unit direction.
AttributeLabels attribute_direction(Attribute a, Polarity polarity, const ToyDataset& dataset,
                                    Embedder& e);

// max pixel > 0, boundary-ring mean < centre 3x3 mean, and anisotropic total
// variation < side^2 / 2.
bool blob_validity(const Tensor& x, std::size_t side);

}  // namespace diffedit
