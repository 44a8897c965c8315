#include "cldl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <unordered_set>

namespace cldl {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

// Grads for each parent given the upstream gradient; entries whose need flag
// is false may be returned default-constructed.
using GradFn =
    std::function<std::vector<Tensor>(const Tensor&, const std::vector<char>&)>;

struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  uint64_t id = 0;
  const char* op = "leaf";
  std::vector<Tensor> parents;
  GradFn grad_fn;
};

struct Access {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor make(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }
  static std::unordered_map<const Node*, Tensor>& grads(GradMap& g) {
    return g.grads_;
  }
  static const std::unordered_map<const Node*, Tensor>& grads(const GradMap& g) {
    return g.grads_;
  }
};

}  // namespace detail

using detail::Access;
using detail::GradFn;
using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<uint64_t> g_next_id{1};

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

Tensor make_leaf(Shape shape, std::vector<double> values) {
  if (numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " wants " +
                                std::to_string(numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  return Access::make(new_node(std::move(shape), std::move(values)));
}

// Registers an op node. Graph attachment happens only when recording is
// enabled and at least one parent requires grad.
Tensor make_op(Shape shape, std::vector<double> values, const char* op,
               std::vector<Tensor> parents, GradFn grad_fn) {
  auto n = new_node(std::move(shape), std::move(values));
  n->op = op;
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad();
  if (g_grad_enabled && any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->grad_fn = std::move(grad_fn);
  }
  return Access::make(n);
}

const Node& node_of(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("tensor: undefined tensor");
  return *Access::node(t);
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) +
                                  " and " + shape_str(b) + " do not broadcast");
    out[i] = std::max(ea, eb);
  }
  return out;
}

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides of `s` aligned to the (right-aligned) broadcast shape `out`,
// zeroed where s broadcasts.
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  auto own = row_major_strides(s);
  size_t off = out.size() - s.size();
  for (size_t i = 0; i < s.size(); ++i)
    if (s[i] != 1) st[off + i] = own[i];
  return st;
}

template <class F>
std::vector<double> ew_binary(const Node& a, const Node& b, const Shape& out,
                              F f) {
  int64_t n = numel(out);
  std::vector<double> r(n);
  if (a.shape == b.shape) {
    for (int64_t i = 0; i < n; ++i) r[i] = f(a.values[i], b.values[i]);
    return r;
  }
  if (b.values.size() == 1) {
    double bv = b.values[0];
    for (int64_t i = 0; i < n; ++i) r[i] = f(a.values[i], bv);
    return r;
  }
  if (a.values.size() == 1) {
    double av = a.values[0];
    for (int64_t i = 0; i < n; ++i) r[i] = f(av, b.values[i]);
    return r;
  }
  auto sa = broadcast_strides(a.shape, out);
  auto sb = broadcast_strides(b.shape, out);
  std::vector<int64_t> counter(out.size(), 0);
  int64_t offa = 0, offb = 0;
  for (int64_t lin = 0; lin < n; ++lin) {
    r[lin] = f(a.values[offa], b.values[offb]);
    for (size_t d = out.size(); d-- > 0;) {
      ++counter[d];
      offa += sa[d];
      offb += sb[d];
      if (counter[d] < out[d]) break;
      counter[d] = 0;
      offa -= sa[d] * out[d];
      offb -= sb[d] * out[d];
    }
  }
  return r;
}

// Sums g down to `target` (the pre-broadcast shape of one operand).
Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  Tensor r = g;
  while (r.rank() > static_cast<int64_t>(target.size())) r = sum(r, 0, false);
  for (size_t i = 0; i < target.size(); ++i)
    if (target[i] == 1 && r.shape()[i] != 1)
      r = sum(r, static_cast<int64_t>(i), true);
  return r;
}

void check_axis(const Shape& s, int64_t axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
    throw std::invalid_argument(std::string(op) + ": axis " +
                                std::to_string(axis) + " out of range for " +
                                shape_str(s));
}

}  // namespace

// --- Tensor members -----------------------------------------------------

const Shape& Tensor::shape() const { return node_of(*this).shape; }
int64_t Tensor::rank() const { return static_cast<int64_t>(shape().size()); }
int64_t Tensor::size() const { return numel(shape()); }

std::span<const double> Tensor::data() const {
  const Node& n = node_of(*this);
  return {n.values.data(), n.values.size()};
}

std::span<double> Tensor::raw_data() {
  Node& n = *Access::node(*this);
  return {n.values.data(), n.values.size()};
}

bool Tensor::requires_grad() const {
  return defined() && Access::node(*this)->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool v) {
  Node& n = *Access::node(*this);
  if (!n.parents.empty())
    throw std::logic_error("set_requires_grad: only valid on leaf tensors");
  n.requires_grad = v;
  return *this;
}

double Tensor::item() const {
  const Node& n = node_of(*this);
  if (n.values.size() != 1)
    throw std::invalid_argument("item: tensor has " +
                                std::to_string(n.values.size()) + " elements");
  return n.values[0];
}

double Tensor::at(std::span<const int64_t> index) const {
  const Node& n = node_of(*this);
  if (index.size() != n.shape.size())
    throw std::invalid_argument("at: rank mismatch");
  int64_t off = 0;
  auto st = row_major_strides(n.shape);
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n.shape[i])
      throw std::out_of_range("at: index out of range");
    off += index[i] * st[i];
  }
  return n.values[off];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  return at(std::span<const int64_t>(index.begin(), index.size()));
}

Tensor Tensor::detach() const {
  const Node& n = node_of(*this);
  return make_leaf(n.shape, n.values);
}

const char* Tensor::op_tag() const { return node_of(*this).op; }

// --- GradMap --------------------------------------------------------------

bool GradMap::contains(const Tensor& t) const {
  return grads_.count(Access::node(t).get()) != 0;
}

const Tensor& GradMap::at(const Tensor& t) const {
  auto it = grads_.find(Access::node(t).get());
  if (it == grads_.end())
    throw std::out_of_range("GradMap: tensor was not in the wrt list");
  return it->second;
}

// --- grad mode --------------------------------------------------------------

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// --- factories ---------------------------------------------------------------

Tensor zeros(Shape shape) {
  int64_t n = numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor ones(Shape shape) {
  int64_t n = numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, 1.0));
}

Tensor full(Shape shape, double value) {
  int64_t n = numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, value));
}

Tensor scalar(double value) { return make_leaf({}, {value}); }

Tensor tensor_of(std::vector<double> values, Shape shape) {
  return make_leaf(std::move(shape), std::move(values));
}

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  int64_t n = numel(shape);
  std::vector<double> v(n);
  for (int64_t i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return make_leaf(std::move(shape), std::move(v));
}

Tensor zeros_like(const Tensor& t) { return zeros(t.shape()); }

// --- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const Node &na = node_of(a), &nb = node_of(b);
  Shape out = broadcast_shape(na.shape, nb.shape, "add");
  auto vals = ew_binary(na, nb, out, [](double x, double y) { return x + y; });
  Shape as = na.shape, bs = nb.shape;
  return make_op(std::move(out), std::move(vals), "add", {a, b},
                 [as, bs](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(2);
                   if (need[0]) r[0] = reduce_to_shape(g, as);
                   if (need[1]) r[1] = reduce_to_shape(g, bs);
                   return r;
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Node &na = node_of(a), &nb = node_of(b);
  Shape out = broadcast_shape(na.shape, nb.shape, "sub");
  auto vals = ew_binary(na, nb, out, [](double x, double y) { return x - y; });
  Shape as = na.shape, bs = nb.shape;
  return make_op(std::move(out), std::move(vals), "sub", {a, b},
                 [as, bs](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(2);
                   if (need[0]) r[0] = reduce_to_shape(g, as);
                   if (need[1]) r[1] = reduce_to_shape(neg(g), bs);
                   return r;
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Node &na = node_of(a), &nb = node_of(b);
  Shape out = broadcast_shape(na.shape, nb.shape, "mul");
  auto vals = ew_binary(na, nb, out, [](double x, double y) { return x * y; });
  Shape as = na.shape, bs = nb.shape;
  return make_op(std::move(out), std::move(vals), "mul", {a, b},
                 [a, b, as, bs](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(2);
                   if (need[0]) r[0] = reduce_to_shape(mul(g, b), as);
                   if (need[1]) r[1] = reduce_to_shape(mul(g, a), bs);
                   return r;
                 });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const Node &na = node_of(a), &nb = node_of(b);
  Shape out = broadcast_shape(na.shape, nb.shape, "div");
  auto vals = ew_binary(na, nb, out, [](double x, double y) { return x / y; });
  Shape as = na.shape, bs = nb.shape;
  return make_op(std::move(out), std::move(vals), "div", {a, b},
                 [a, b, as, bs](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(2);
                   if (need[0]) r[0] = reduce_to_shape(div(g, b), as);
                   if (need[1])
                     r[1] = reduce_to_shape(neg(div(mul(g, a), mul(b, b))), bs);
                   return r;
                 });
}

Tensor neg(const Tensor& t) {
  const Node& n = node_of(t);
  std::vector<double> v(n.values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = -n.values[i];
  return make_op(n.shape, std::move(v), "neg", {t},
                 [](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = neg(g);
                   return r;
                 });
}

// --- structure --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Node &na = node_of(a), &nb = node_of(b);
  if (na.shape.size() != 2 || nb.shape.size() != 2)
    throw std::invalid_argument("matmul: expects 2-D operands, got " +
                                shape_str(na.shape) + " and " +
                                shape_str(nb.shape));
  int64_t n = na.shape[0], k = na.shape[1], m = nb.shape[1];
  if (nb.shape[0] != k)
    throw std::invalid_argument("matmul: inner dimensions mismatch " +
                                shape_str(na.shape) + " x " +
                                shape_str(nb.shape));
  std::vector<double> out(static_cast<size_t>(n * m), 0.0);
  const double* A = na.values.data();
  const double* B = nb.values.data();
  double* C = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* arow = A + i * k;
    double* crow = C + i * m;
    for (int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = B + p * m;
      for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return make_op({n, m}, std::move(out), "matmul", {a, b},
                 [a, b](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(2);
                   if (need[0]) r[0] = matmul(g, transpose(b));
                   if (need[1]) r[1] = matmul(transpose(a), g);
                   return r;
                 });
}

Tensor transpose(const Tensor& t) {
  const Node& n = node_of(t);
  if (n.shape.size() != 2)
    throw std::invalid_argument("transpose: expects 2-D, got " +
                                shape_str(n.shape));
  int64_t r = n.shape[0], c = n.shape[1];
  std::vector<double> v(n.values.size());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) v[j * r + i] = n.values[i * c + j];
  return make_op({c, r}, std::move(v), "transpose", {t},
                 [](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r2(1);
                   if (need[0]) r2[0] = transpose(g);
                   return r2;
                 });
}

Tensor permute(const Tensor& t, const std::vector<int64_t>& axes) {
  const Node& n = node_of(t);
  size_t r = n.shape.size();
  if (axes.size() != r)
    throw std::invalid_argument("permute: axes size mismatch");
  std::vector<char> seen(r, 0);
  for (int64_t a : axes) {
    if (a < 0 || a >= static_cast<int64_t>(r) || seen[a])
      throw std::invalid_argument("permute: invalid axes");
    seen[a] = 1;
  }
  Shape out(r);
  for (size_t i = 0; i < r; ++i) out[i] = n.shape[axes[i]];
  auto sin = row_major_strides(n.shape);
  std::vector<int64_t> step(r);
  for (size_t i = 0; i < r; ++i) step[i] = sin[axes[i]];
  int64_t total = numel(out);
  std::vector<double> v(total);
  std::vector<int64_t> counter(r, 0);
  int64_t off = 0;
  for (int64_t lin = 0; lin < total; ++lin) {
    v[lin] = n.values[off];
    for (size_t d = r; d-- > 0;) {
      ++counter[d];
      off += step[d];
      if (counter[d] < out[d]) break;
      counter[d] = 0;
      off -= step[d] * out[d];
    }
  }
  std::vector<int64_t> inverse(r);
  for (size_t i = 0; i < r; ++i) inverse[axes[i]] = static_cast<int64_t>(i);
  return make_op(std::move(out), std::move(v), "permute", {t},
                 [inverse](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r2(1);
                   if (need[0]) r2[0] = permute(g, inverse);
                   return r2;
                 });
}

Tensor reshape(const Tensor& t, Shape shape) {
  const Node& n = node_of(t);
  if (numel(shape) != static_cast<int64_t>(n.values.size()))
    throw std::invalid_argument("reshape: cannot view " + shape_str(n.shape) +
                                " as " + shape_str(shape));
  Shape orig = n.shape;
  return make_op(std::move(shape), n.values, "reshape", {t},
                 [orig](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = reshape(g, orig);
                   return r;
                 });
}

Tensor broadcast_to(const Tensor& t, const Shape& shape) {
  const Node& n = node_of(t);
  Shape chk = broadcast_shape(n.shape, shape, "broadcast_to");
  if (chk != shape)
    throw std::invalid_argument("broadcast_to: " + shape_str(n.shape) +
                                " does not broadcast to " + shape_str(shape));
  int64_t total = numel(shape);
  std::vector<double> v(total);
  if (n.values.size() == 1) {
    std::fill(v.begin(), v.end(), n.values[0]);
  } else {
    auto st = broadcast_strides(n.shape, shape);
    std::vector<int64_t> counter(shape.size(), 0);
    int64_t off = 0;
    for (int64_t lin = 0; lin < total; ++lin) {
      v[lin] = n.values[off];
      for (size_t d = shape.size(); d-- > 0;) {
        ++counter[d];
        off += st[d];
        if (counter[d] < shape[d]) break;
        counter[d] = 0;
        off -= st[d] * shape[d];
      }
    }
  }
  Shape orig = n.shape;
  return make_op(shape, std::move(v), "broadcast_to", {t},
                 [orig](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = reduce_to_shape(g, orig);
                   return r;
                 });
}

Tensor concat(std::span<const Tensor> parts, int64_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Node& first = node_of(parts[0]);
  check_axis(first.shape, axis, "concat");
  Shape out = first.shape;
  int64_t total_axis = 0;
  for (const Tensor& p : parts) {
    const Node& np = node_of(p);
    if (np.shape.size() != first.shape.size())
      throw std::invalid_argument("concat: rank mismatch");
    for (size_t i = 0; i < out.size(); ++i)
      if (static_cast<int64_t>(i) != axis && np.shape[i] != out[i])
        throw std::invalid_argument("concat: shape mismatch at axis " +
                                    std::to_string(i));
    total_axis += np.shape[axis];
  }
  out[axis] = total_axis;
  int64_t inner = 1;
  for (size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
  int64_t outer = numel(out) / (total_axis * inner);
  std::vector<double> v(numel(out));
  int64_t written = 0;
  for (const Tensor& p : parts) {
    const Node& np = node_of(p);
    int64_t ext = np.shape[axis];
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(v.data() + (o * total_axis + written) * inner,
                  np.values.data() + o * ext * inner,
                  sizeof(double) * ext * inner);
    written += ext;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  std::vector<int64_t> extents;
  for (const Tensor& p : parts) extents.push_back(node_of(p).shape[axis]);
  return make_op(std::move(out), std::move(v), "concat", parents,
                 [axis, extents](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(extents.size());
                   int64_t start = 0;
                   for (size_t i = 0; i < extents.size(); ++i) {
                     if (need[i]) r[i] = slice(g, axis, start, extents[i]);
                     start += extents[i];
                   }
                   return r;
                 });
}

Tensor slice(const Tensor& t, int64_t axis, int64_t start, int64_t length) {
  const Node& n = node_of(t);
  check_axis(n.shape, axis, "slice");
  int64_t ext = n.shape[axis];
  if (start < 0 || length < 0 || start + length > ext)
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(start + length) +
                                ") out of bounds for extent " +
                                std::to_string(ext));
  Shape out = n.shape;
  out[axis] = length;
  int64_t inner = 1;
  for (size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
  int64_t outer = numel(n.shape) / (ext * inner);
  std::vector<double> v(numel(out));
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(v.data() + o * length * inner,
                n.values.data() + (o * ext + start) * inner,
                sizeof(double) * length * inner);
  int64_t after = ext - start - length;
  return make_op(std::move(out), std::move(v), "slice", {t},
                 [axis, start, after](const Tensor& g,
                                      const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = pad_axis(g, axis, start, after);
                   return r;
                 });
}

Tensor pad_axis(const Tensor& t, int64_t axis, int64_t before, int64_t after) {
  const Node& n = node_of(t);
  check_axis(n.shape, axis, "pad_axis");
  if (before < 0 || after < 0) throw std::invalid_argument("pad_axis: negative pad");
  int64_t ext = n.shape[axis];
  Shape out = n.shape;
  out[axis] = ext + before + after;
  int64_t inner = 1;
  for (size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
  int64_t outer = numel(n.shape) / (ext * inner);
  std::vector<double> v(numel(out), 0.0);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(v.data() + (o * out[axis] + before) * inner,
                n.values.data() + o * ext * inner, sizeof(double) * ext * inner);
  return make_op(std::move(out), std::move(v), "pad_axis", {t},
                 [axis, before, ext](const Tensor& g,
                                     const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = slice(g, axis, before, ext);
                   return r;
                 });
}

Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_rows: no inputs");
  std::vector<Tensor> rows;
  rows.reserve(parts.size());
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    rows.push_back(reshape(p, s));
  }
  return concat(rows, 0);
}

// --- pointwise nonlinear ---------------------------------------------------

namespace {

Tensor constant_mask(const Tensor& src, double threshold, bool strict) {
  const Node& n = node_of(src);
  std::vector<double> m(n.values.size());
  for (size_t i = 0; i < m.size(); ++i)
    m[i] = (strict ? n.values[i] > threshold : n.values[i] >= threshold) ? 1.0
                                                                         : 0.0;
  return make_leaf(n.shape, std::move(m));
}

}  // namespace

Tensor relu(const Tensor& t) {
  const Node& n = node_of(t);
  std::vector<double> v(n.values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = n.values[i] > 0 ? n.values[i] : 0.0;
  return make_op(n.shape, std::move(v), "relu", {t},
                 [t](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = mul(g, constant_mask(t, 0.0, true));
                   return r;
                 });
}

Tensor abs(const Tensor& t) {
  const Node& n = node_of(t);
  std::vector<double> v(n.values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(n.values[i]);
  return make_op(n.shape, std::move(v), "abs", {t},
                 [t](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = mul(g, sign_values(t));
                   return r;
                 });
}

Tensor sqrt(const Tensor& t) {
  const Node& n = node_of(t);
  std::vector<double> v(n.values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(n.values[i]);
  Tensor out = make_op(n.shape, std::move(v), "sqrt", {t}, nullptr);
  std::weak_ptr<Node> self = Access::node(out);
  Node& on = *Access::node(out);
  if (on.requires_grad)
    on.grad_fn = [self](const Tensor& g, const std::vector<char>& need) {
      std::vector<Tensor> r(1);
      if (need[0]) {
        Tensor y = Access::make(self.lock());  // alive while backward runs
        r[0] = div(mul(g, scalar(0.5)), y);
      }
      return r;
    };
  return out;
}

Tensor log(const Tensor& t) {
  const Node& n = node_of(t);
  std::vector<double> v(n.values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::log(n.values[i]);
  return make_op(n.shape, std::move(v), "log", {t},
                 [t](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = div(g, t);
                   return r;
                 });
}

Tensor exp(const Tensor& t) {
  const Node& n = node_of(t);
  std::vector<double> v(n.values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::exp(n.values[i]);
  Tensor out = make_op(n.shape, std::move(v), "exp", {t}, nullptr);
  std::weak_ptr<Node> self = Access::node(out);
  Node& on = *Access::node(out);
  if (on.requires_grad)
    on.grad_fn = [self](const Tensor& g, const std::vector<char>& need) {
      std::vector<Tensor> r(1);
      if (need[0]) r[0] = mul(g, Access::make(self.lock()));
      return r;
    };
  return out;
}

Tensor clamp_min(const Tensor& t, double lo) {
  const Node& n = node_of(t);
  std::vector<double> v(n.values.size());
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = n.values[i] < lo ? lo : n.values[i];
  return make_op(n.shape, std::move(v), "clamp_min", {t},
                 [t, lo](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = mul(g, constant_mask(t, lo, false));
                   return r;
                 });
}

Tensor softmax(const Tensor& t, int64_t axis) {
  const Node& n = node_of(t);
  check_axis(n.shape, axis, "softmax");
  if (n.shape[axis] == 0)
    throw std::invalid_argument("softmax: empty axis " + std::to_string(axis));
  // Shift by the detached row max; softmax is shift-invariant so values and
  // every derivative order are unaffected.
  Tensor m = max_values(t, axis, true);
  Tensor e = exp(sub(t, m));
  return div(e, sum(e, axis, true));
}

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& t) {
  const Node& n = node_of(t);
  double acc = 0.0;
  for (double x : n.values) acc += x;
  Shape orig = n.shape;
  return make_op({}, {acc}, "sum", {t},
                 [orig](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = broadcast_to(g, orig);
                   return r;
                 });
}

Tensor sum(const Tensor& t, int64_t axis, bool keepdims) {
  const Node& n = node_of(t);
  check_axis(n.shape, axis, "sum");
  int64_t ext = n.shape[axis];
  int64_t inner = 1;
  for (size_t i = axis + 1; i < n.shape.size(); ++i) inner *= n.shape[i];
  int64_t outer = numel(n.shape) / std::max<int64_t>(ext * inner, 1);
  Shape out = n.shape;
  if (keepdims)
    out[axis] = 1;
  else
    out.erase(out.begin() + axis);
  std::vector<double> v(std::max<int64_t>(outer * inner, 0), 0.0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < ext; ++j) {
      const double* src = n.values.data() + (o * ext + j) * inner;
      double* dst = v.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  Shape orig = n.shape;
  Shape keep = n.shape;
  keep[axis] = 1;
  return make_op(std::move(out), std::move(v), "sum_axis", {t},
                 [orig, keep](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = broadcast_to(reshape(g, keep), orig);
                   return r;
                 });
}

Tensor mean(const Tensor& t) {
  return div(sum(t), scalar(static_cast<double>(t.size())));
}

Tensor mean(const Tensor& t, int64_t axis, bool keepdims) {
  const Node& n = node_of(t);
  check_axis(n.shape, axis, "mean");
  return div(sum(t, axis, keepdims), scalar(static_cast<double>(n.shape[axis])));
}

// --- gather / scatter ------------------------------------------------------

namespace {

Tensor scatter_rows_add(const Tensor& g, const std::vector<int64_t>& indices,
                        int64_t n_rows);

Tensor gather_rows_impl(const Tensor& table, const std::vector<int64_t>& indices) {
  const Node& n = node_of(table);
  if (n.shape.size() != 2)
    throw std::invalid_argument("embedding_lookup: table must be 2-D, got " +
                                shape_str(n.shape));
  int64_t rows = n.shape[0], width = n.shape[1];
  for (int64_t i : indices)
    if (i < 0 || i >= rows)
      throw std::out_of_range("embedding_lookup: index " + std::to_string(i) +
                              " out of range [0, " + std::to_string(rows) + ")");
  std::vector<double> v(indices.size() * width);
  for (size_t m = 0; m < indices.size(); ++m)
    std::memcpy(v.data() + m * width, n.values.data() + indices[m] * width,
                sizeof(double) * width);
  return make_op({static_cast<int64_t>(indices.size()), width}, std::move(v),
                 "embedding_lookup", {table},
                 [indices, rows](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = scatter_rows_add(g, indices, rows);
                   return r;
                 });
}

Tensor scatter_rows_add(const Tensor& g, const std::vector<int64_t>& indices,
                        int64_t n_rows) {
  const Node& n = node_of(g);
  int64_t width = n.shape[1];
  std::vector<double> v(n_rows * width, 0.0);
  for (size_t m = 0; m < indices.size(); ++m) {
    const double* src = n.values.data() + m * width;
    double* dst = v.data() + indices[m] * width;
    for (int64_t i = 0; i < width; ++i) dst[i] += src[i];
  }
  return make_op({n_rows, width}, std::move(v), "scatter_rows_add", {g},
                 [indices](const Tensor& gg, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = gather_rows_impl(gg, indices);
                   return r;
                 });
}

Tensor scatter_cols_add(const Tensor& g, const std::vector<int64_t>& cols,
                        int64_t n_cols);

Tensor gather_cols_impl(const Tensor& t, const std::vector<int64_t>& cols,
                        int64_t k) {
  const Node& n = node_of(t);
  if (n.shape.size() != 2)
    throw std::invalid_argument("gather_cols: expects 2-D, got " +
                                shape_str(n.shape));
  int64_t b = n.shape[0], c = n.shape[1];
  if (static_cast<int64_t>(cols.size()) != b * k)
    throw std::invalid_argument("gather_cols: need " + std::to_string(b * k) +
                                " column ids, got " + std::to_string(cols.size()));
  std::vector<double> v(b * k);
  for (int64_t row = 0; row < b; ++row)
    for (int64_t j = 0; j < k; ++j) {
      int64_t col = cols[row * k + j];
      if (col < 0 || col >= c)
        throw std::out_of_range("gather_cols: column " + std::to_string(col) +
                                " out of range");
      v[row * k + j] = n.values[row * c + col];
    }
  return make_op({b, k}, std::move(v), "gather_cols", {t},
                 [cols, c](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = scatter_cols_add(g, cols, c);
                   return r;
                 });
}

Tensor scatter_cols_add(const Tensor& g, const std::vector<int64_t>& cols,
                        int64_t n_cols) {
  const Node& n = node_of(g);
  int64_t b = n.shape[0], k = n.shape[1];
  std::vector<double> v(b * n_cols, 0.0);
  for (int64_t row = 0; row < b; ++row)
    for (int64_t j = 0; j < k; ++j)
      v[row * n_cols + cols[row * k + j]] += n.values[row * k + j];
  return make_op({b, n_cols}, std::move(v), "scatter_cols_add", {g},
                 [cols, k](const Tensor& gg, const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = gather_cols_impl(gg, cols, k);
                   return r;
                 });
}

// Flat gather with -1 mapping to zero; the im2col workhorse. Indices are
// shared immutably between the op and its transpose.
using IndexVec = std::shared_ptr<const std::vector<int64_t>>;

Tensor scatter_flat_add(const Tensor& g, const IndexVec& indices,
                        const Shape& in_shape);

Tensor gather_flat_padded(const Tensor& t, const IndexVec& indices, Shape out) {
  const Node& n = node_of(t);
  std::vector<double> v(indices->size());
  for (size_t i = 0; i < indices->size(); ++i) {
    int64_t idx = (*indices)[i];
    v[i] = idx < 0 ? 0.0 : n.values[idx];
  }
  Shape in_shape = n.shape;
  return make_op(std::move(out), std::move(v), "im2col", {t},
                 [indices, in_shape](const Tensor& g,
                                     const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = scatter_flat_add(g, indices, in_shape);
                   return r;
                 });
}

Tensor scatter_flat_add(const Tensor& g, const IndexVec& indices,
                        const Shape& in_shape) {
  const Node& n = node_of(g);
  std::vector<double> v(numel(in_shape), 0.0);
  for (size_t i = 0; i < indices->size(); ++i) {
    int64_t idx = (*indices)[i];
    if (idx >= 0) v[idx] += n.values[i];
  }
  Shape g_shape = n.shape;
  return make_op(in_shape, std::move(v), "col2im", {g},
                 [indices, g_shape](const Tensor& gg,
                                    const std::vector<char>& need) {
                   std::vector<Tensor> r(1);
                   if (need[0]) r[0] = gather_flat_padded(gg, indices, g_shape);
                   return r;
                 });
}

}  // namespace

Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& indices) {
  return gather_rows_impl(table, indices);
}

Tensor gather_cols(const Tensor& t, const std::vector<int64_t>& cols, int64_t k) {
  return gather_cols_impl(t, cols, k);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int64_t stride,
              int64_t pad) {
  const Node& ni = node_of(input);
  const Node& nk = node_of(kernel);
  if (ni.shape.size() != 4 || nk.shape.size() != 4)
    throw std::invalid_argument("conv2d: expects NCHW input and OIHW kernel, got " +
                                shape_str(ni.shape) + " and " +
                                shape_str(nk.shape));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  int64_t b = ni.shape[0], cin = ni.shape[1], h = ni.shape[2], w = ni.shape[3];
  int64_t cout = nk.shape[0], kh = nk.shape[2], kw = nk.shape[3];
  if (nk.shape[1] != cin)
    throw std::invalid_argument("conv2d: kernel expects " +
                                std::to_string(nk.shape[1]) +
                                " input channels, input has " +
                                std::to_string(cin));
  int64_t oh = (h + 2 * pad - kh) / stride + 1;
  int64_t ow = (w + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1)
    throw std::invalid_argument("conv2d: kernel larger than padded input");

  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(b * oh * ow * cin * kh * kw);
  for (int64_t bb = 0; bb < b; ++bb)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x)
        for (int64_t c = 0; c < cin; ++c)
          for (int64_t dy = 0; dy < kh; ++dy)
            for (int64_t dx = 0; dx < kw; ++dx) {
              int64_t sy = y * stride - pad + dy;
              int64_t sx = x * stride - pad + dx;
              bool in = sy >= 0 && sy < h && sx >= 0 && sx < w;
              idx->push_back(in ? ((bb * cin + c) * h + sy) * w + sx : -1);
            }
  Tensor cols = gather_flat_padded(input, idx, {b * oh * ow, cin * kh * kw});
  Tensor kmat = transpose(reshape(kernel, {cout, cin * kh * kw}));
  Tensor out2 = matmul(cols, kmat);  // (b*oh*ow) x cout
  return permute(reshape(out2, {b, oh, ow, cout}), {0, 3, 1, 2});
}

Tensor avg_pool2(const Tensor& t) {
  const Node& n = node_of(t);
  if (n.shape.size() != 4)
    throw std::invalid_argument("avg_pool2: expects NCHW, got " +
                                shape_str(n.shape));
  int64_t h = n.shape[2], w = n.shape[3];
  int64_t h2 = h / 2, w2 = w / 2;
  if (h2 < 1 || w2 < 1)
    throw std::invalid_argument("avg_pool2: spatial dims too small");
  Tensor x = t;
  if (h % 2) x = slice(x, 2, 0, h2 * 2);
  if (w % 2) x = slice(x, 3, 0, w2 * 2);
  x = reshape(x, {n.shape[0], n.shape[1], h2, 2, w2, 2});
  x = sum(x, 5, false);
  x = sum(x, 3, false);
  return mul(x, scalar(0.25));
}

// --- autodiff ----------------------------------------------------------------

GradMap backward(const Tensor& loss, std::span<const Tensor> wrt,
                 bool create_graph) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar");

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_set<const Node*> wrt_set;
  for (const Tensor& t : wrt) wrt_set.insert(Access::node(t).get());

  // Postorder over the requires-grad subgraph: parents land before users.
  std::vector<Node*> order;
  Node* root = Access::node(loss).get();
  if (root->requires_grad && !wrt.empty()) {
    std::unordered_set<const Node*> visited{root};
    std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = Access::node(n->parents[next]).get();
        ++next;
        if (p->requires_grad && visited.insert(p).second)
          stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  // A node needs a gradient only if some wrt leaf is reachable from it.
  std::unordered_map<const Node*, char> need;
  for (Node* n : order) {
    char v = wrt_set.count(n) ? 1 : 0;
    for (const Tensor& p : n->parents) {
      if (v) break;
      const Node* pn = Access::node(p).get();
      if (pn->requires_grad && need.count(pn) && need[pn]) v = 1;
    }
    need[n] = v;
  }

  std::unordered_map<const Node*, Tensor> grads;
  if (!order.empty() && need[root]) grads[root] = ones(root->shape);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    auto git = grads.find(n);
    if (git == grads.end() || !n->grad_fn) continue;
    std::vector<char> need_parent(n->parents.size(), 0);
    bool any = false;
    for (size_t i = 0; i < n->parents.size(); ++i) {
      const Node* pn = Access::node(n->parents[i]).get();
      if (pn->requires_grad && need.count(pn) && need[pn]) {
        need_parent[i] = 1;
        any = true;
      }
    }
    if (!any) continue;
    std::vector<Tensor> pgrads = n->grad_fn(git->second, need_parent);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      if (!need_parent[i] || !pgrads[i].defined()) continue;
      const Node* pn = Access::node(n->parents[i]).get();
      auto pit = grads.find(pn);
      if (pit == grads.end())
        grads.emplace(pn, pgrads[i]);
      else
        pit->second = add(pit->second, pgrads[i]);
    }
  }

  GradMap out;
  auto& m = Access::grads(out);
  for (const Tensor& t : wrt) {
    const Node* key = Access::node(t).get();
    auto git = grads.find(key);
    m.emplace(key, git != grads.end() ? git->second : zeros(t.shape()));
  }
  return out;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double h) {
  if (h <= 0) throw std::invalid_argument("finite_difference_grad: h must be > 0");
  // The probe leaves do not require grad, so pure functions of x record no
  // graph. f may still build and differentiate its own graph internally,
  // which the double-backward oracle relies on.
  const Node& n = node_of(x);
  std::vector<double> base = n.values;
  std::vector<double> g(base.size());
  for (size_t k = 0; k < base.size(); ++k) {
    std::vector<double> v = base;
    v[k] = base[k] + h;
    double fp = f(make_leaf(n.shape, v));
    v[k] = base[k] - h;
    double fm = f(make_leaf(n.shape, std::move(v)));
    g[k] = (fp - fm) / (2.0 * h);
  }
  return make_leaf(n.shape, std::move(g));
}

// --- value-level helpers ------------------------------------------------------

Tensor sign_values(const Tensor& t) {
  const Node& n = node_of(t);
  std::vector<double> v(n.values.size());
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = n.values[i] > 0 ? 1.0 : (n.values[i] < 0 ? -1.0 : 0.0);
  return make_leaf(n.shape, std::move(v));
}

Tensor max_values(const Tensor& t, int64_t axis, bool keepdims) {
  const Node& n = node_of(t);
  check_axis(n.shape, axis, "max_values");
  int64_t ext = n.shape[axis];
  if (ext == 0) throw std::invalid_argument("max_values: empty axis");
  int64_t inner = 1;
  for (size_t i = axis + 1; i < n.shape.size(); ++i) inner *= n.shape[i];
  int64_t outer = numel(n.shape) / (ext * inner);
  Shape out = n.shape;
  if (keepdims)
    out[axis] = 1;
  else
    out.erase(out.begin() + axis);
  std::vector<double> v(outer * inner);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double best = n.values[(o * ext) * inner + i];
      for (int64_t j = 1; j < ext; ++j)
        best = std::max(best, n.values[(o * ext + j) * inner + i]);
      v[o * inner + i] = best;
    }
  return make_leaf(std::move(out), std::move(v));
}

std::vector<int64_t> argmax_rows(const Tensor& t) {
  const Node& n = node_of(t);
  if (n.shape.size() != 2)
    throw std::invalid_argument("argmax_rows: expects 2-D, got " +
                                shape_str(n.shape));
  int64_t rows = n.shape[0], cols = n.shape[1];
  std::vector<int64_t> out(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = n.values.data() + r * cols;
    int64_t best = 0;
    for (int64_t c = 1; c < cols; ++c)
      if (row[c] > row[best]) best = c;  // ties keep the lowest index
    out[r] = best;
  }
  return out;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cldl
