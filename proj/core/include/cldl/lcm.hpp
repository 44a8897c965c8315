#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cldl/tensor.hpp"

namespace cldl {

// Label Confusion Model shared by every ensemble member: a label embedding
// table with a small two-layer net produces per-class representations; a
// similarity layer against an instance representation yields the label
// confusion vector; mixing in the one-hot target with weight gamma gives the
// simulated label distribution used as the soft training target.
struct LabelConfusionModel {
  int64_t n_classes = 0;  // C
  int64_t embed_dim = 0;  // e
  int64_t repr_dim = 0;   // d
  double gamma = 0.0;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor& param(std::string_view name) const;
  Tensor& param(std::string_view name);
  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;
};

LabelConfusionModel make_lcm(int64_t n_classes, int64_t embed_dim,
                             int64_t repr_dim, double gamma, Rng& rng);

// The simulated label distribution with the confusion vector it came from.
struct SoftLabel {
  Tensor sld;              // probability rows, sums to 1
  Tensor lcv;              // confusion vector rows, sums to 1
  int64_t model_index = -1;  // which member's representation produced it
};

// C x d matrix whose row c represents class c; graph-attached.
Tensor label_representations(const LabelConfusionModel& lcm);

// softmax((v . Vec^T) W + b): probability vector over classes measuring how
// confusable the instance looks with each label. v is d or B x d.
Tensor confusion_vector(const LabelConfusionModel& lcm, const Tensor& v);

// softmax(gamma * y_onehot + lcv). y_onehot must be exactly one-hot
// (single C vector or B x C rows matching v).
SoftLabel simulated_label_distribution(const LabelConfusionModel& lcm,
                                       const Tensor& v, const Tensor& y_onehot,
                                       int64_t model_index = -1);

// KL(sld || p) = sum_c s_c log(s_c / p_c), operands clamped below at 1e-12.
// Gradients flow into both arguments. Scalar for vectors; for B x C rows the
// overload returns per-row divergences of shape B.
Tensor kl_training_loss(const Tensor& sld, const Tensor& p);
Tensor kl_rows(const Tensor& sld, const Tensor& p);

}  // namespace cldl
