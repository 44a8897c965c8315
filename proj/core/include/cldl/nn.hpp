#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cldl/tensor.hpp"

namespace cldl {

// One ensemble member: an encoder producing a d-dimensional representation
// followed by a linear classifier over C classes. Parameters are named
// leaf tensors with requires_grad set, listed in forward order.
struct SubModel {
  std::string arch;   // "mlp" or "cnn-small"
  Shape input_shape;  // per example, e.g. {784} or {1, 28, 28}
  int64_t repr_dim = 0;
  int64_t n_classes = 0;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor& param(std::string_view name) const;
  Tensor& param(std::string_view name);
  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;
};

// 784 -> hidden -> d -> C, relu between the two encoder layers; the
// representation is the raw output of the last encoder Linear.
SubModel make_mlp(int64_t input_dim, int64_t hidden, int64_t repr_dim,
                  int64_t n_classes, Rng& rng);

// conv(in->8, 3x3) relu pool2, conv(8->16, 3x3) relu pool2, flatten -> d -> C.
SubModel make_cnn_small(int64_t in_channels, int64_t height, int64_t width,
                        int64_t repr_dim, int64_t n_classes, Rng& rng);

// Dispatch on the architecture tag with the documented default widths.
SubModel make_submodel(const std::string& arch, const Shape& input_shape,
                       int64_t repr_dim, int64_t n_classes, Rng& rng);

// Representation v, the raw output of the encoder's last linear layer.
// Accepts one example (input_shape) or a batch (input_shape with a leading
// batch extent); output is d or B x d.
Tensor encode(const SubModel& m, const Tensor& x);

// Class probabilities softmax(W v + b); shape C or B x C.
Tensor predict(const SubModel& m, const Tensor& x);

// Classifier probabilities from an already-computed representation (B x d).
Tensor classify(const SubModel& m, const Tensor& v);

struct Ensemble {
  std::vector<SubModel> members;

  int64_t size() const { return static_cast<int64_t>(members.size()); }
  int64_t n_classes() const;
  int64_t repr_dim() const;
  std::vector<Tensor> parameters() const;  // all members, member order
};

// N independently initialized members of one architecture. Each member gets
// its own child RNG stream so earlier members are unaffected by N.
Ensemble make_ensemble(int64_t n_members, const std::string& arch,
                       const Shape& input_shape, int64_t repr_dim,
                       int64_t n_classes, Rng& rng);

// Arithmetic mean of member probability vectors.
Tensor ensemble_predict(const Ensemble& e, const Tensor& x);

// B x C one-hot rows from integer labels.
Tensor one_hot(const std::vector<int64_t>& labels, int64_t n_classes);

}  // namespace cldl
