#include "diffedit/guidance.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "diffedit/error.hpp"
#include "diffedit/rng.hpp"
#include "diffedit/simd/kernels.hpp"

namespace diffedit {

Embedder::Embedder(std::size_t image_dim, std::size_t dim, std::uint64_t seed)
    : image_dim_(image_dim), dim_(dim), seed_(seed), proj_t_({image_dim, dim}) {
  if (image_dim == 0 || dim == 0) throw ConfigError("embedder: dimensions must be positive");
  Pcg32 rng(seed);
  std::vector<double> row(image_dim);
  for (std::size_t i = 0; i < dim; ++i) {
    double sq = 0.0;
    for (double& v : row) {
      v = rng.normal();
      sq += v * v;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < image_dim; ++j) proj_t_[j * dim + i] = row[j] * inv;
  }
}

Var Embedder::embed_image(Tape& tape, Var x) const {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[0] != 1 || s[1] != image_dim_) {
    throw ShapeError("embed_image: expected {1, " + std::to_string(image_dim_) + "}, got " +
                     shape_string(s));
  }
  return matmul(x, tape.constant_ref(proj_t_));
}

Tensor Embedder::embed_image(const Tensor& x) const {
  if (x.size() != image_dim_ || (x.rank() != 1 && x.rank() != 2)) {
    throw ShapeError("embed_image: expected " + std::to_string(image_dim_) + " pixels, got " +
                     shape_string(x.shape()));
  }
  Tape tape;
  const Tensor row = x.reshaped({1, image_dim_});
  return embed_image(tape, tape.constant_ref(row)).value().reshaped({dim_});
}

bool Embedder::has_attribute(const std::string& label) const { return table_.contains(label); }

std::vector<std::string> Embedder::attribute_labels() const {
  std::vector<std::string> labels;
  for (const auto& [label, _] : table_) labels.push_back(label);
  return labels;
}

const Tensor& Embedder::embed_attribute(const std::string& label) const {
  const auto it = table_.find(label);
  if (it == table_.end()) {
    std::string known;
    for (const auto& [name, _] : table_) known += (known.empty() ? "" : ", ") + name;
    throw ConfigError("unknown attribute label '" + label + "'; known labels: [" + known + "]");
  }
  return it->second;
}

void Embedder::register_attribute(const std::string& label, Tensor embedding) {
  if (embedding.size() != dim_) {
    throw ShapeError("register_attribute: '" + label + "' has " +
                     std::to_string(embedding.size()) + " components, embedder dim is " +
                     std::to_string(dim_));
  }
  embedding = embedding.reshaped({dim_});
  if (!embedding.all_finite()) throw NumericError("register_attribute: non-finite embedding");
  const double norm = std::sqrt(simd::kernels().dot(embedding.data().data(),
                                                    embedding.data().data(), dim_));
  if (norm != 0.0 && std::fabs(norm - 1.0) > 1e-9) {
    throw ConfigError("register_attribute: '" + label + "' must be unit norm or zero, norm is " +
                      std::to_string(norm));
  }
  table_[label] = std::move(embedding);
}

std::string Embedder::attribute_table_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [label, v] : table_) j[label] = v.values();
  return j.dump(2);
}

void Embedder::load_attribute_table_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("attribute table: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("attribute table: expected a JSON object");
  for (const auto& [label, arr] : j.items()) {
    if (!arr.is_array()) throw FormatError("attribute table: '" + label + "' is not an array");
    register_attribute(label, Tensor::vector(arr.get<std::vector<double>>()));
  }
}

void Embedder::save_attribute_table(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << attribute_table_json() << '\n';
}

void Embedder::load_attribute_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_attribute_table_json(ss.str());
}

namespace {

double norm2(const Tensor& v) {
  return std::sqrt(simd::kernels().dot(v.data().data(), v.data().data(), v.size()));
}

}  // namespace

Tensor text_direction(const Embedder& e, const std::string& y_tar, const std::string& y_ref) {
  const Tensor& tar = e.embed_attribute(y_tar);
  const Tensor& ref = e.embed_attribute(y_ref);
  Tensor dir(tar.shape());
  simd::kernels().sub(tar.data().data(), ref.data().data(), dir.data().data(), dir.size());
  if (norm2(dir) == 0.0) {
    throw DegenerateDirectionError("text direction '" + y_ref + "' -> '" + y_tar +
                                   "' has zero length");
  }
  return dir;
}

Var directional_loss(Tape& tape, Var x_edit, const Tensor& x_src, const std::string& y_tar,
                     const std::string& y_ref, const Embedder& e) {
  const Tensor text_dir = text_direction(e, y_tar, y_ref);
  const double text_norm = norm2(text_dir);
  const Tensor src_embedding = e.embed_image(x_src).reshaped({1, e.dim()});

  Var image_dir = sub(e.embed_image(tape, x_edit), tape.constant(src_embedding));
  Var cosine = div(dot(tape.constant(text_dir.reshaped({1, e.dim()})), image_dir),
                   add(scale(l2_norm(image_dir), text_norm),
                       tape.constant(Tensor::scalar(kCosineEps))));
  return sub(tape.constant(Tensor::scalar(1.0)), cosine);
}

Var identity_loss(Tape& tape, Var x_edit, const Tensor& x_src) {
  return l1_norm(sub(x_edit, tape.constant_ref(x_src)));
}

LossTerms total_loss(Tape& tape, Var x_edit, const Tensor& x_src, const std::string& y_tar,
                     const std::string& y_ref, double lambda, const Embedder& e) {
  if (!(lambda >= 0.0)) throw ConfigError("total_loss: lambda must be >= 0");
  LossTerms terms;
  terms.directional = directional_loss(tape, x_edit, x_src, y_tar, y_ref, e);
  terms.identity = identity_loss(tape, x_edit, x_src);
  terms.total = add(terms.directional, scale(terms.identity, lambda));
  return terms;
}

namespace {

Tensor as_row(const Tensor& x) { return x.reshaped({1, x.size()}); }

void require_image_direction(const Tensor& x_edit, const Tensor& x_src, const Embedder& e) {
  const Tensor a = e.embed_image(x_edit);
  const Tensor b = e.embed_image(x_src);
  if (a == b) {
    throw DegenerateDirectionError("image direction is zero: edited and source embeddings coincide");
  }
}

}  // namespace

double directional_loss(const Tensor& x_edit, const Tensor& x_src, const std::string& y_tar,
                        const std::string& y_ref, const Embedder& e) {
  require_image_direction(x_edit, x_src, e);
  Tape tape;
  const Tensor row = as_row(x_edit);
  return directional_loss(tape, tape.constant_ref(row), as_row(x_src), y_tar, y_ref, e)
      .value()
      .item();
}

double identity_loss(const Tensor& x_edit, const Tensor& x_src) {
  Tape tape;
  return identity_loss(tape, tape.constant_ref(x_edit), x_src).value().item();
}

double total_loss(const Tensor& x_edit, const Tensor& x_src, const std::string& y_tar,
                  const std::string& y_ref, double lambda, const Embedder& e) {
  require_image_direction(x_edit, x_src, e);
  Tape tape;
  const Tensor row = as_row(x_edit);
  return total_loss(tape, tape.constant_ref(row), as_row(x_src), y_tar, y_ref, lambda, e)
      .total.value()
      .item();
}

double cosine_distance(const Tensor& text_dir, const Tensor& image_dir) {
  if (text_dir.size() != image_dir.size()) {
    throw ShapeError("cosine_distance: " + shape_string(text_dir.shape()) + " vs " +
                     shape_string(image_dir.shape()));
  }
  const double tn = norm2(text_dir);
  if (tn == 0.0) throw DegenerateDirectionError("cosine_distance: zero text direction");
  const double in = norm2(image_dir);
  if (in == 0.0) throw DegenerateDirectionError("cosine_distance: zero image direction");
  const double d =
      simd::kernels().dot(text_dir.data().data(), image_dir.data().data(), text_dir.size());
  return 1.0 - d / (tn * in + kCosineEps);
}

}  // namespace diffedit
