#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "diffedit/autodiff.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

// Stand-in for a joint image/text encoder: a fixed random linear map from
// flattened images into a d-dimensional space, plus a table of attribute
// label embeddings in the same space.
class Embedder {
 public:
  static constexpr std::size_t kDefaultDim = 64;

  // Projection rows are i.i.d. Gaussian, normalised to unit length.
  Embedder(std::size_t image_dim, std::size_t dim, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  std::size_t image_dim() const { return image_dim_; }
  std::uint64_t seed() const { return seed_; }
  // {image_dim, dim}: the transpose of the projection, ready for matmul.
  const Tensor& projection_t() const { return proj_t_; }

  // x: {1, image_dim} or {image_dim}. Returns {dim}.
  Tensor embed_image(const Tensor& x) const;
  // x: {1, image_dim} on a tape. Returns {1, dim}.
  Var embed_image(Tape& tape, Var x) const;

  const Tensor& embed_attribute(const std::string& label) const;
  bool has_attribute(const std::string& label) const;
  std::vector<std::string> attribute_labels() const;

  // Labels are either unit vectors or the zero vector (an attribute's
  // reference point); anything else is rejected.
  void register_attribute(const std::string& label, Tensor embedding);

  const std::map<std::string, Tensor>& attribute_table() const { return table_; }

  // {label: [f64; d]}
  std::string attribute_table_json() const;
  void load_attribute_table_json(const std::string& text);
  void save_attribute_table(const std::filesystem::path& path) const;
  void load_attribute_table(const std::filesystem::path& path);

 private:
  std::size_t image_dim_;
  std::size_t dim_;
  std::uint64_t seed_;
  Tensor proj_t_;
  std::map<std::string, Tensor> table_;
};

inline constexpr double kCosineEps = 1e-8;

// E(tar) - E(ref); throws DegenerateDirectionError when it vanishes.
Tensor text_direction(const Embedder& e, const std::string& y_tar, const std::string& y_ref);

struct LossTerms {
  Var directional;
  Var identity;
  Var total;
};

// Recorded objective: L_dir + lambda * L_id, differentiable in x_edit.
//   L_dir = 1 - <dT, dI> / (|dT| |dI| + 1e-8),  dI = E(x_edit) - E(x_src)
//   L_id  = sum |x_edit - x_src|
// A zero dI is allowed here: the epsilon keeps the loss finite.
LossTerms total_loss(Tape& tape, Var x_edit, const Tensor& x_src, const std::string& y_tar,
                     const std::string& y_ref, double lambda, const Embedder& e);
Var directional_loss(Tape& tape, Var x_edit, const Tensor& x_src, const std::string& y_tar,
                     const std::string& y_ref, const Embedder& e);
Var identity_loss(Tape& tape, Var x_edit, const Tensor& x_src);

// Standalone evaluation. These additionally reject a zero image direction.
double directional_loss(const Tensor& x_edit, const Tensor& x_src, const std::string& y_tar,
                        const std::string& y_ref, const Embedder& e);
double identity_loss(const Tensor& x_edit, const Tensor& x_src);
double total_loss(const Tensor& x_edit, const Tensor& x_src, const std::string& y_tar,
                  const std::string& y_ref, double lambda, const Embedder& e);

// The cosine-distance core on raw directions (used by evaluation and tests).
double cosine_distance(const Tensor& text_dir, const Tensor& image_dir);

}  // namespace diffedit
