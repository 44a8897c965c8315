#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cldl/rng.hpp"

namespace cldl {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
struct Access;
}

// Dense double-precision array, optionally attached to a differentiation
// graph. Copies are shallow: they alias the same underlying node. A Tensor
// whose inputs did not require gradients carries no graph at all.
class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const;
  int64_t size() const;
  std::span<const double> data() const;
  // Mutable view of the raw buffer. Only meaningful for leaf tensors between
  // graph constructions (optimizer updates, loaders).
  std::span<double> raw_data();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);  // leaves only

  double item() const;  // single-element tensors
  double at(std::span<const int64_t> index) const;
  double at(std::initializer_list<int64_t> index) const;

  // Value copy with no graph attachment.
  Tensor detach() const;

  const char* op_tag() const;

 private:
  std::shared_ptr<detail::Node> node_;
  friend struct detail::Access;
};

// Result of backward(): gradient per requested tensor, zero-filled for
// tensors that do not participate in the loss graph.
class GradMap {
 public:
  bool contains(const Tensor& t) const;
  const Tensor& at(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const detail::Node*, Tensor> grads_;
  friend struct detail::Access;
};

// Disables graph recording for its scope (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// --- factories ---------------------------------------------------------

Tensor zeros(Shape shape);
Tensor ones(Shape shape);
Tensor full(Shape shape, double value);
Tensor scalar(double value);
Tensor tensor_of(std::vector<double> values, Shape shape);
Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
Tensor zeros_like(const Tensor& t);

// --- elementwise (numpy-style trailing broadcast) ----------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& t);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double v) { return add(a, scalar(v)); }
inline Tensor operator-(const Tensor& a, double v) { return sub(a, scalar(v)); }
inline Tensor operator*(const Tensor& a, double v) { return mul(a, scalar(v)); }
inline Tensor operator/(const Tensor& a, double v) { return div(a, scalar(v)); }
inline Tensor operator*(double v, const Tensor& a) { return mul(scalar(v), a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// --- structure ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D
Tensor transpose(const Tensor& t);                // 2-D
Tensor permute(const Tensor& t, const std::vector<int64_t>& axes);
Tensor reshape(const Tensor& t, Shape shape);
Tensor broadcast_to(const Tensor& t, const Shape& shape);
Tensor concat(std::span<const Tensor> parts, int64_t axis);
Tensor slice(const Tensor& t, int64_t axis, int64_t start, int64_t length);
Tensor pad_axis(const Tensor& t, int64_t axis, int64_t before, int64_t after);
Tensor stack_rows(std::span<const Tensor> parts);  // k tensors of shape S -> k x S

// --- pointwise nonlinear -------------------------------------------------

Tensor relu(const Tensor& t);
Tensor abs(const Tensor& t);   // subgradient 0 at 0
Tensor sqrt(const Tensor& t);
Tensor log(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor clamp_min(const Tensor& t, double lo);
Tensor softmax(const Tensor& t, int64_t axis);

// --- reductions -----------------------------------------------------------

Tensor sum(const Tensor& t);
Tensor sum(const Tensor& t, int64_t axis, bool keepdims = false);
Tensor mean(const Tensor& t);
Tensor mean(const Tensor& t, int64_t axis, bool keepdims = false);

// --- gather / indexed ------------------------------------------------------

// Rows of a 2-D table by index; duplicate indices accumulate on backward.
Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& indices);
// Per-row column gather: t is B x C, cols holds B*k column ids row-major.
Tensor gather_cols(const Tensor& t, const std::vector<int64_t>& cols, int64_t k);
// im2col-backed convolution, NCHW input, OIHW kernel.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int64_t stride, int64_t pad);
Tensor avg_pool2(const Tensor& t);  // 2x2 window, stride 2, floor

// --- autodiff ---------------------------------------------------------------

// Reverse-mode gradients of a scalar loss. With create_graph the returned
// gradients are graph nodes themselves and can be differentiated again.
GradMap backward(const Tensor& loss, std::span<const Tensor> wrt,
                 bool create_graph = false);

// Central finite differences, (f(x+h e_k) - f(x-h e_k)) / 2h per coordinate.
// Test oracle; shares nothing with backward().
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double h);

// --- value-level helpers (never build graph) ---------------------------------

Tensor sign_values(const Tensor& t);  // sign(0) = 0
Tensor max_values(const Tensor& t, int64_t axis, bool keepdims);
std::vector<int64_t> argmax_rows(const Tensor& t);  // 2-D; ties -> lowest index
bool all_finite(const Tensor& t);

}  // namespace cldl
