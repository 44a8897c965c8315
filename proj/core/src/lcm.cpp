#include "cldl/lcm.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cldl {

namespace {

constexpr double kProbFloor = 1e-12;

Tensor xavier(Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(std::move(shape), -a, a, rng);
}

void add_param(LabelConfusionModel& m, std::string name, Tensor t) {
  t.set_requires_grad(true);
  m.params.emplace_back(std::move(name), std::move(t));
}

Tensor as_rows(const Tensor& t, int64_t width, const char* what) {
  if (t.rank() == 1 && t.shape()[0] == width)
    return reshape(t, {1, width});
  if (t.rank() == 2 && t.shape()[1] == width) return t;
  throw std::invalid_argument(std::string(what) + ": shape " +
                              shape_str(t.shape()) + " does not match width " +
                              std::to_string(width));
}

void check_one_hot(const Tensor& y, int64_t n_classes) {
  Tensor rows = as_rows(y, n_classes, "simulated_label_distribution: y_onehot");
  auto v = rows.data();
  int64_t b = rows.shape()[0];
  for (int64_t r = 0; r < b; ++r) {
    int ones_seen = 0;
    for (int64_t c = 0; c < n_classes; ++c) {
      double x = v[r * n_classes + c];
      if (x == 1.0)
        ++ones_seen;
      else if (x != 0.0)
        throw std::invalid_argument(
            "simulated_label_distribution: y_onehot row " + std::to_string(r) +
            " has entry " + std::to_string(x) + ", expected 0 or 1");
    }
    if (ones_seen != 1)
      throw std::invalid_argument("simulated_label_distribution: y_onehot row " +
                                  std::to_string(r) + " has " +
                                  std::to_string(ones_seen) + " ones");
  }
}

}  // namespace

const Tensor& LabelConfusionModel::param(std::string_view name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw std::out_of_range("LabelConfusionModel: no parameter named " +
                          std::string(name));
}

Tensor& LabelConfusionModel::param(std::string_view name) {
  for (auto& [n, t] : params)
    if (n == name) return t;
  throw std::out_of_range("LabelConfusionModel: no parameter named " +
                          std::string(name));
}

std::vector<Tensor> LabelConfusionModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [n, t] : params) out.push_back(t);
  return out;
}

int64_t LabelConfusionModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

LabelConfusionModel make_lcm(int64_t n_classes, int64_t embed_dim,
                             int64_t repr_dim, double gamma, Rng& rng) {
  if (n_classes < 2 || embed_dim < 1 || repr_dim < 1)
    throw std::invalid_argument("make_lcm: invalid dimensions");
  if (gamma < 0)
    throw std::invalid_argument("make_lcm: gamma must be nonnegative, got " +
                                std::to_string(gamma));
  LabelConfusionModel m;
  m.n_classes = n_classes;
  m.embed_dim = embed_dim;
  m.repr_dim = repr_dim;
  m.gamma = gamma;
  add_param(m, "label_table",
            xavier({n_classes, embed_dim}, n_classes, embed_dim, rng));
  add_param(m, "net.w1", xavier({embed_dim, embed_dim}, embed_dim, embed_dim, rng));
  add_param(m, "net.b1", zeros({1, embed_dim}));
  add_param(m, "net.w2", xavier({embed_dim, repr_dim}, embed_dim, repr_dim, rng));
  add_param(m, "net.b2", zeros({1, repr_dim}));
  add_param(m, "sim.w", xavier({n_classes, n_classes}, n_classes, n_classes, rng));
  add_param(m, "sim.b", zeros({1, n_classes}));
  return m;
}

Tensor label_representations(const LabelConfusionModel& lcm) {
  std::vector<int64_t> all(lcm.n_classes);
  std::iota(all.begin(), all.end(), 0);
  Tensor rows = embedding_lookup(lcm.param("label_table"), all);
  Tensor h = relu(add(matmul(rows, lcm.param("net.w1")), lcm.param("net.b1")));
  return add(matmul(h, lcm.param("net.w2")), lcm.param("net.b2"));
}

Tensor confusion_vector(const LabelConfusionModel& lcm, const Tensor& v) {
  Tensor vb = as_rows(v, lcm.repr_dim, "confusion_vector: v");
  Tensor sims = matmul(vb, transpose(label_representations(lcm)));  // B x C
  Tensor logits = add(matmul(sims, lcm.param("sim.w")), lcm.param("sim.b"));
  Tensor c = softmax(logits, 1);
  return v.rank() == 1 ? reshape(c, {lcm.n_classes}) : c;
}

SoftLabel simulated_label_distribution(const LabelConfusionModel& lcm,
                                       const Tensor& v, const Tensor& y_onehot,
                                       int64_t model_index) {
  check_one_hot(y_onehot, lcm.n_classes);
  Tensor vb = as_rows(v, lcm.repr_dim, "simulated_label_distribution: v");
  Tensor yb = as_rows(y_onehot, lcm.n_classes,
                      "simulated_label_distribution: y_onehot");
  if (vb.shape()[0] != yb.shape()[0])
    throw std::invalid_argument(
        "simulated_label_distribution: v has " +
        std::to_string(vb.shape()[0]) + " rows but y_onehot has " +
        std::to_string(yb.shape()[0]));
  Tensor lcv = confusion_vector(lcm, vb);
  Tensor sld = softmax(add(mul(scalar(lcm.gamma), yb), lcv), 1);
  bool single = v.rank() == 1 && y_onehot.rank() == 1;
  SoftLabel out;
  out.sld = single ? reshape(sld, {lcm.n_classes}) : sld;
  out.lcv = single ? reshape(lcv, {lcm.n_classes}) : lcv;
  out.model_index = model_index;
  return out;
}

Tensor kl_rows(const Tensor& sld, const Tensor& p) {
  if (sld.shape() != p.shape())
    throw std::invalid_argument("kl_rows: shapes " + shape_str(sld.shape()) +
                                " and " + shape_str(p.shape()) + " differ");
  Tensor s = clamp_min(sld, kProbFloor);
  Tensor q = clamp_min(p, kProbFloor);
  Tensor terms = mul(sld, sub(log(s), log(q)));
  return sum(terms, terms.rank() - 1, false);
}

Tensor kl_training_loss(const Tensor& sld, const Tensor& p) {
  if (sld.rank() != 1)
    throw std::invalid_argument("kl_training_loss: expects vectors, got " +
                                shape_str(sld.shape()));
  return sum(kl_rows(sld, p));
}

}  // namespace cldl
