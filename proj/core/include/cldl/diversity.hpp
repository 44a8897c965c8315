#pragma once

#include <span>
#include <vector>

#include "cldl/lcm.hpp"
#include "cldl/nn.hpp"
#include "cldl/tensor.hpp"

namespace cldl {

struct DiversityWeights {
  double alpha = 0.0;  // weight on the soft-label diversity term
  double beta = 0.0;   // weight on the gradient-alignment term
};

// All fields are graph-attached scalars; total = mean_kl - alpha *
// label_diversity + beta * gradient_alignment.
struct EnsembleLossReport {
  std::vector<Tensor> per_model_kl;
  Tensor mean_kl;
  Tensor label_diversity;
  Tensor gradient_alignment;
  Tensor total;
};

// Removes the true-class entry from a soft label and rescales the rest to
// sum to 1. Vector form (C -> C-1) and batched row form (B x C -> B x (C-1)).
Tensor truncate_sld(const Tensor& s, int64_t y);
Tensor truncate_sld_rows(const Tensor& s, const std::vector<int64_t>& ys);

// Jensen-Shannon divergence, natural log: 0.5 KL(p||m) + 0.5 KL(q||m) with
// m = (p+q)/2. Symmetric bit-for-bit; range [0, log 2].
Tensor jsd(const Tensor& p, const Tensor& q);
Tensor jsd_rows(const Tensor& p, const Tensor& q);  // per-row, B

// log of the mean over member pairs of exp(JSD) between truncated soft
// labels; batched inputs average the per-example values.
Tensor label_diversity_loss(std::span<const Tensor> truncated_slds);

// Mean over member pairs of |cosine similarity| between flattened input
// gradients. Zero-norm rows are clamped (norm floor 1e-12) and warned about.
Tensor gradient_alignment_loss(std::span<const Tensor> grads);

// The full training objective on one batch: per-member KL to the simulated
// label distribution, minus alpha times soft-label diversity, plus beta
// times gradient alignment. Per-example input gradients for the alignment
// term are produced with create_graph so the total stays differentiable in
// every model and LCM parameter.
EnsembleLossReport total_loss(const Tensor& x, const std::vector<int64_t>& labels,
                              const Ensemble& ensemble,
                              const LabelConfusionModel& lcm,
                              const DiversityWeights& weights);

}  // namespace cldl
