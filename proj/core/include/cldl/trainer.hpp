#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cldl/dataset.hpp"
#include "cldl/diversity.hpp"
#include "cldl/lcm.hpp"
#include "cldl/nn.hpp"
#include "cldl/tensor.hpp"

namespace cldl {

// Everything needed to reproduce a training run. validate() throws
// config_error on out-of-range values.
struct TrainConfig {
  std::string arch = "mlp";
  std::string dataset = "synth-digits";  // tag recorded in logs and results
  std::string objective = "cldl";        // "cldl" | "cross-entropy"
  std::int64_t n_members = 3;
  std::int64_t repr_dim = 64;
  std::int64_t embed_dim = 64;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 128;
  std::int64_t train_count = 0;  // examples drawn per epoch; 0 = whole set
  double lr_members = 1e-3;
  double lr_lcm = 1e-3;
  double weight_decay = 1e-4;
  std::vector<std::int64_t> lr_drop_epochs;  // epochs at which lr is dropped
  double lr_drop_factor = 0.1;
  double gamma = 4.0;
  double alpha = 2.0;
  double beta = 4.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Step-decay schedule: the base rate is multiplied by factor once for every
// drop epoch <= the current epoch (drops take effect on their own epoch).
double lr_schedule(std::int64_t epoch, double base_lr,
                   std::span<const std::int64_t> drop_epochs, double factor);

// Adam moment buffers, one m/v pair per parameter, plus the shared step
// counter. The buffers are plain tensors outside the autodiff graph.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

AdamState make_adam_state(std::span<const Tensor> params);

// One Adam update with decoupled weight decay: beta1 = 0.9, beta2 = 0.999,
// eps = 1e-8; p -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p), with
// both terms read from the pre-update parameter. Every parameter must have
// an entry in grads.
void adam_step(std::span<const Tensor> params, const GradMap& grads,
               AdamState& state, double lr, double weight_decay);

// One logged row per optimizer step.
struct StepRecord {
  std::int64_t epoch = 0;  // 1-based
  std::int64_t step = 0;   // 1-based within the epoch
  double mean_kl = 0.0;
  double label_diversity = 0.0;
  double gradient_alignment = 0.0;
  double total = 0.0;
};

struct TrainResult {
  Ensemble ensemble;
  LabelConfusionModel lcm;
  std::vector<StepRecord> log;
};

// Joint training of the ensemble and the label confusion model. Each batch
// takes one backward pass through the full objective; members and the LCM
// are then updated with their own Adam states and learning rates. A
// non-finite loss aborts with numerical_error naming the offending
// component. Identical configs and data produce identical results.
//
// objective "cross-entropy" instead minimises the mean per-member cross
// entropy of each member's own prediction (the LCM is left at its
// initialisation); it exists to train independent surrogate ensembles.
TrainResult train(const TrainConfig& cfg, const Dataset& data);

// Reshapes a pixel-space image batch {b, c, h, w} to whatever layout the
// ensemble's members consume (flat rows for mlp). No-op if already matching.
Tensor arch_input(const Ensemble& e, const Tensor& images);

// Fraction of examples whose averaged-probability argmax equals the label.
double ensemble_accuracy(const Ensemble& e, const Tensor& images,
                         const std::vector<std::int64_t>& labels);

}  // namespace cldl
