#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cldl/dataset.hpp"
#include "cldl/lcm.hpp"
#include "cldl/nn.hpp"
#include "cldl/tensor.hpp"

namespace cldl {

// One attack recipe. step_size 0 means epsilon / 5; fgsm always takes a
// single step of size epsilon. validate() throws config_error.
struct AttackConfig {
  std::string family = "fgsm";  // fgsm | bim | pgd | mim
  double epsilon = 0.1;
  std::int64_t steps = 10;  // iteration count r for bim/pgd/mim
  double step_size = 0.0;
  double momentum = 1.0;               // mim accumulator decay
  std::string loss = "cross-entropy";  // cross-entropy | kl-to-sld
  std::uint64_t seed = 0;              // pgd random start
  bool random_start = true;            // pgd only; false starts at x like bim

  void validate() const;
  double resolved_step() const;
  std::int64_t resolved_steps() const;
};

// The result of attacking one batch: x' stays inside both the epsilon ball
// around x (max norm) and the [0, 1] pixel range. success[i] is set when the
// attack flips the *source* model's prediction away from the true label.
struct AdversarialBatch {
  Tensor original;
  Tensor perturbed;
  std::vector<std::int64_t> labels;
  AttackConfig config;
  std::vector<char> success;
};

// Crafts adversarial examples against `source` only; no other model is
// consulted, which is what makes downstream evaluation black-box transfer.
// Gradients are taken through the source ensemble's averaged-probability
// cross entropy, or through the mean per-member KL to the simulated label
// distribution when cfg.loss is "kl-to-sld" (source_lcm required then).
// Images may be in pixel layout or already in the member input layout.
// If `trajectory` is non-null the perturbed batch after every iteration is
// appended to it.
AdversarialBatch run_attack(const Ensemble& source,
                            const LabelConfusionModel* source_lcm,
                            const Tensor& images,
                            const std::vector<std::int64_t>& labels,
                            const AttackConfig& cfg,
                            std::vector<Tensor>* trajectory = nullptr);

// One row of a transfer-robustness table.
struct TransferCell {
  std::string dataset;
  std::string family;
  double epsilon = 0.0;
  std::int64_t n_examples = 0;
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
};

// Black-box transfer evaluation: adversarial examples are generated against
// the surrogate and scored against the target, which is only ever queried
// for predictions. The first returned cell is the clean baseline (family
// "clean", epsilon 0); then one cell per attack config, in order. The first
// n_examples examples of `data` are used, in dataset order, processed in
// batches of batch_size. Per-batch pgd seeds are derived deterministically
// from each config's seed. Throws config_error when the class counts of the
// two ensembles differ or n_examples exceeds the dataset.
std::vector<TransferCell> blackbox_transfer_eval(
    const Ensemble& target, const Ensemble& surrogate,
    const LabelConfusionModel* surrogate_lcm, const Dataset& data,
    std::int64_t n_examples, std::int64_t batch_size,
    const std::vector<AttackConfig>& attacks, const std::string& dataset_tag);

}  // namespace cldl
