#include "cldl/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace cldl {

namespace {

Tensor xavier(Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(std::move(shape), -a, a, rng);
}

void add_param(SubModel& m, std::string name, Tensor t) {
  t.set_requires_grad(true);
  m.params.emplace_back(std::move(name), std::move(t));
}

// Returns x as a batch, remembering whether a batch dim was added.
Tensor as_batch(const SubModel& m, const Tensor& x, bool& was_single) {
  const Shape& in = m.input_shape;
  const Shape& xs = x.shape();
  if (xs == in) {
    was_single = true;
    Shape batched = in;
    batched.insert(batched.begin(), 1);
    return reshape(x, batched);
  }
  if (xs.size() == in.size() + 1 &&
      std::equal(in.begin(), in.end(), xs.begin() + 1)) {
    was_single = false;
    return x;
  }
  throw std::invalid_argument("encode: input shape " + shape_str(xs) +
                              " does not match model input " + shape_str(in));
}

Tensor drop_batch(const Tensor& t, bool was_single) {
  if (!was_single) return t;
  Shape s(t.shape().begin() + 1, t.shape().end());
  return reshape(t, s);
}

}  // namespace

const Tensor& SubModel::param(std::string_view name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw std::out_of_range("SubModel: no parameter named " + std::string(name));
}

Tensor& SubModel::param(std::string_view name) {
  for (auto& [n, t] : params)
    if (n == name) return t;
  throw std::out_of_range("SubModel: no parameter named " + std::string(name));
}

std::vector<Tensor> SubModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [n, t] : params) out.push_back(t);
  return out;
}

int64_t SubModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

SubModel make_mlp(int64_t input_dim, int64_t hidden, int64_t repr_dim,
                  int64_t n_classes, Rng& rng) {
  if (input_dim < 1 || hidden < 1 || repr_dim < 1 || n_classes < 2)
    throw std::invalid_argument("make_mlp: invalid dimensions");
  SubModel m;
  m.arch = "mlp";
  m.input_shape = {input_dim};
  m.repr_dim = repr_dim;
  m.n_classes = n_classes;
  add_param(m, "fc1.w", xavier({input_dim, hidden}, input_dim, hidden, rng));
  add_param(m, "fc1.b", zeros({1, hidden}));
  add_param(m, "fc2.w", xavier({hidden, repr_dim}, hidden, repr_dim, rng));
  add_param(m, "fc2.b", zeros({1, repr_dim}));
  add_param(m, "cls.w", xavier({repr_dim, n_classes}, repr_dim, n_classes, rng));
  add_param(m, "cls.b", zeros({1, n_classes}));
  return m;
}

SubModel make_cnn_small(int64_t in_channels, int64_t height, int64_t width,
                        int64_t repr_dim, int64_t n_classes, Rng& rng) {
  // Two conv3x3+pool2 stages need at least 10 pixels per side to leave a
  // nonempty feature map.
  if (in_channels < 1 || height < 10 || width < 10 || repr_dim < 1 ||
      n_classes < 2)
    throw std::invalid_argument("make_cnn_small: invalid dimensions");
  SubModel m;
  m.arch = "cnn-small";
  m.input_shape = {in_channels, height, width};
  m.repr_dim = repr_dim;
  m.n_classes = n_classes;
  int64_t h1 = (height - 2) / 2, w1 = (width - 2) / 2;    // conv 3x3 then pool2
  int64_t h2 = (h1 - 2) / 2, w2 = (w1 - 2) / 2;
  int64_t flat = 16 * h2 * w2;
  add_param(m, "conv1.k",
            xavier({8, in_channels, 3, 3}, in_channels * 9, 8 * 9, rng));
  add_param(m, "conv1.b", zeros({1, 8, 1, 1}));
  add_param(m, "conv2.k", xavier({16, 8, 3, 3}, 8 * 9, 16 * 9, rng));
  add_param(m, "conv2.b", zeros({1, 16, 1, 1}));
  add_param(m, "fc.w", xavier({flat, repr_dim}, flat, repr_dim, rng));
  add_param(m, "fc.b", zeros({1, repr_dim}));
  add_param(m, "cls.w", xavier({repr_dim, n_classes}, repr_dim, n_classes, rng));
  add_param(m, "cls.b", zeros({1, n_classes}));
  return m;
}

SubModel make_submodel(const std::string& arch, const Shape& input_shape,
                       int64_t repr_dim, int64_t n_classes, Rng& rng) {
  if (arch == "mlp") {
    if (input_shape.size() != 1)
      throw std::invalid_argument("make_submodel: mlp wants a flat input shape");
    return make_mlp(input_shape[0], 128, repr_dim, n_classes, rng);
  }
  if (arch == "cnn-small") {
    if (input_shape.size() != 3)
      throw std::invalid_argument(
          "make_submodel: cnn-small wants a CxHxW input shape");
    return make_cnn_small(input_shape[0], input_shape[1], input_shape[2],
                          repr_dim, n_classes, rng);
  }
  throw std::invalid_argument("make_submodel: unknown architecture '" + arch +
                              "' (expected mlp or cnn-small)");
}

Tensor encode(const SubModel& m, const Tensor& x) {
  bool single = false;
  Tensor xb = as_batch(m, x, single);
  Tensor v;
  if (m.arch == "mlp") {
    Tensor h = relu(add(matmul(xb, m.param("fc1.w")), m.param("fc1.b")));
    v = add(matmul(h, m.param("fc2.w")), m.param("fc2.b"));
  } else if (m.arch == "cnn-small") {
    Tensor h = avg_pool2(relu(add(conv2d(xb, m.param("conv1.k"), 1, 0),
                                  m.param("conv1.b"))));
    h = avg_pool2(relu(add(conv2d(h, m.param("conv2.k"), 1, 0),
                           m.param("conv2.b"))));
    int64_t b = h.shape()[0];
    h = reshape(h, {b, h.size() / b});
    v = add(matmul(h, m.param("fc.w")), m.param("fc.b"));
  } else {
    throw std::logic_error("encode: unknown architecture '" + m.arch + "'");
  }
  return drop_batch(v, single);
}

Tensor classify(const SubModel& m, const Tensor& v) {
  Tensor vb = v.rank() == 1 ? reshape(v, {1, v.size()}) : v;
  if (vb.rank() != 2 || vb.shape()[1] != m.repr_dim)
    throw std::invalid_argument("classify: representation shape " +
                                shape_str(v.shape()) + " does not match d=" +
                                std::to_string(m.repr_dim));
  Tensor p = softmax(add(matmul(vb, m.param("cls.w")), m.param("cls.b")), 1);
  return v.rank() == 1 ? reshape(p, {m.n_classes}) : p;
}

Tensor predict(const SubModel& m, const Tensor& x) {
  bool single = false;
  Tensor xb = as_batch(m, x, single);
  return drop_batch(classify(m, encode(m, xb)), single);
}

int64_t Ensemble::n_classes() const {
  if (members.empty()) throw std::logic_error("Ensemble: no members");
  return members.front().n_classes;
}

int64_t Ensemble::repr_dim() const {
  if (members.empty()) throw std::logic_error("Ensemble: no members");
  return members.front().repr_dim;
}

std::vector<Tensor> Ensemble::parameters() const {
  std::vector<Tensor> out;
  for (const SubModel& m : members) {
    auto p = m.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

Ensemble make_ensemble(int64_t n_members, const std::string& arch,
                       const Shape& input_shape, int64_t repr_dim,
                       int64_t n_classes, Rng& rng) {
  if (n_members < 2)
    throw std::invalid_argument("make_ensemble: need at least 2 members, got " +
                                std::to_string(n_members));
  Ensemble e;
  e.members.reserve(n_members);
  for (int64_t i = 0; i < n_members; ++i) {
    Rng member_rng = rng.child("member", i);
    e.members.push_back(
        make_submodel(arch, input_shape, repr_dim, n_classes, member_rng));
  }
  return e;
}

Tensor ensemble_predict(const Ensemble& e, const Tensor& x) {
  if (e.members.empty())
    throw std::invalid_argument("ensemble_predict: empty ensemble");
  Tensor acc = predict(e.members[0], x);
  for (size_t i = 1; i < e.members.size(); ++i)
    acc = add(acc, predict(e.members[i], x));
  return div(acc, scalar(static_cast<double>(e.members.size())));
}

Tensor one_hot(const std::vector<int64_t>& labels, int64_t n_classes) {
  std::vector<double> v(labels.size() * n_classes, 0.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes)
      throw std::out_of_range("one_hot: label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(n_classes) + ")");
    v[i * n_classes + labels[i]] = 1.0;
  }
  return tensor_of(std::move(v),
                   {static_cast<int64_t>(labels.size()), n_classes});
}

}  // namespace cldl
