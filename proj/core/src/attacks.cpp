#include "cldl/attacks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

#include "cldl/errors.hpp"
#include "cldl/trainer.hpp"

namespace cldl {
namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kL1Floor = 1e-12;

double sgn(double v) { return (v > 0.0) - (v < 0.0); }

// Scalar attack loss over the whole batch. Summing per-example terms keeps
// the rows of the input gradient per-example.
Tensor attack_loss(const Ensemble& source, const LabelConfusionModel* lcm,
                   const Tensor& xin, const std::vector<std::int64_t>& labels,
                   const std::string& kind) {
  const Tensor x = arch_input(source, xin);
  if (kind == "cross-entropy") {
    const Tensor p = ensemble_predict(source, x);
    return neg(sum(gather_cols(log(clamp_min(p, kProbFloor)), labels, 1)));
  }
  // kl-to-sld: mean over members of the summed per-example KL between each
  // member's soft target and its prediction.
  const Tensor y = one_hot(labels, source.n_classes());
  Tensor acc;
  for (std::size_t i = 0; i < source.members.size(); ++i) {
    const SubModel& m = source.members[i];
    const Tensor v = encode(m, x);
    const Tensor p = classify(m, v);
    const SoftLabel soft =
        simulated_label_distribution(*lcm, v, y, static_cast<std::int64_t>(i));
    const Tensor term = sum(kl_rows(soft.sld, p));
    acc = acc.defined() ? acc + term : term;
  }
  return acc / static_cast<double>(source.size());
}

}  // namespace

void AttackConfig::validate() const {
  if (family != "fgsm" && family != "bim" && family != "pgd" &&
      family != "mim")
    throw config_error("unknown attack family: " + family);
  if (!(epsilon > 0.0)) throw config_error("epsilon must be positive");
  if (steps < 1) throw config_error("attack steps must be at least 1");
  if (step_size < 0.0) throw config_error("step_size must not be negative");
  if (momentum < 0.0) throw config_error("momentum must not be negative");
  if (loss != "cross-entropy" && loss != "kl-to-sld")
    throw config_error("unknown attack loss: " + loss);
}

double AttackConfig::resolved_step() const {
  if (family == "fgsm") return epsilon;
  return step_size > 0.0 ? step_size : epsilon / 5.0;
}

std::int64_t AttackConfig::resolved_steps() const {
  return family == "fgsm" ? 1 : steps;
}

AdversarialBatch run_attack(const Ensemble& source,
                            const LabelConfusionModel* source_lcm,
                            const Tensor& images,
                            const std::vector<std::int64_t>& labels,
                            const AttackConfig& cfg,
                            std::vector<Tensor>* trajectory) {
  cfg.validate();
  if (cfg.loss == "kl-to-sld" && source_lcm == nullptr)
    throw config_error("kl-to-sld attack loss needs the source confusion model");
  if (images.shape()[0] != static_cast<std::int64_t>(labels.size()))
    throw std::invalid_argument("image/label count mismatch");

  const std::int64_t b = images.shape()[0];
  const std::int64_t ex = images.size() / b;
  const auto n = static_cast<std::size_t>(images.size());
  const double* x0 = images.data().data();

  std::vector<double> adv(x0, x0 + n);
  if (cfg.family == "pgd" && cfg.random_start) {
    Rng rng = Rng(cfg.seed).child("pgd-init");
    for (std::size_t k = 0; k < n; ++k) {
      adv[k] += rng.uniform(-cfg.epsilon, cfg.epsilon);
      adv[k] = std::clamp(adv[k], 0.0, 1.0);
    }
  }

  const double step = cfg.resolved_step();
  const std::int64_t iters = cfg.resolved_steps();
  std::vector<double> mom;  // mim accumulator, one row per example
  if (cfg.family == "mim") mom.assign(n, 0.0);

  for (std::int64_t it = 0; it < iters; ++it) {
    Tensor xin = tensor_of(adv, images.shape());
    xin.set_requires_grad(true);
    const Tensor loss =
        attack_loss(source, source_lcm, xin, labels, cfg.loss);
    const GradMap grads = backward(loss, std::vector<Tensor>{xin});
    const auto g = grads.at(xin).data();

    if (cfg.family == "mim") {
      for (std::int64_t row = 0; row < b; ++row) {
        const std::size_t off = static_cast<std::size_t>(row * ex);
        double l1 = 0.0;
        for (std::int64_t k = 0; k < ex; ++k) l1 += std::abs(g[off + k]);
        const double denom = std::max(l1, kL1Floor);
        for (std::int64_t k = 0; k < ex; ++k)
          mom[off + k] = cfg.momentum * mom[off + k] + g[off + k] / denom;
      }
      for (std::size_t k = 0; k < n; ++k) adv[k] += step * sgn(mom[k]);
    } else {
      for (std::size_t k = 0; k < n; ++k) adv[k] += step * sgn(g[k]);
    }

    // Project back into the epsilon ball around x, then into pixel range.
    for (std::size_t k = 0; k < n; ++k) {
      adv[k] = std::clamp(adv[k], x0[k] - cfg.epsilon, x0[k] + cfg.epsilon);
      adv[k] = std::clamp(adv[k], 0.0, 1.0);
    }
    if (trajectory) trajectory->push_back(tensor_of(adv, images.shape()));
  }

  AdversarialBatch out;
  out.original = images;
  out.perturbed = tensor_of(adv, images.shape());
  out.labels = labels;
  out.config = cfg;
  out.success.resize(static_cast<std::size_t>(b));
  {
    NoGradGuard guard;
    const Tensor p = ensemble_predict(source, arch_input(source, out.perturbed));
    const std::vector<std::int64_t> pred = argmax_rows(p);
    for (std::int64_t i = 0; i < b; ++i)
      out.success[static_cast<std::size_t>(i)] =
          pred[static_cast<std::size_t>(i)] !=
          labels[static_cast<std::size_t>(i)];
  }
  return out;
}

std::vector<TransferCell> blackbox_transfer_eval(
    const Ensemble& target, const Ensemble& surrogate,
    const LabelConfusionModel* surrogate_lcm, const Dataset& data,
    std::int64_t n_examples, std::int64_t batch_size,
    const std::vector<AttackConfig>& attacks, const std::string& dataset_tag) {
  if (target.n_classes() != surrogate.n_classes())
    throw config_error("target has " + std::to_string(target.n_classes()) +
                       " classes but surrogate has " +
                       std::to_string(surrogate.n_classes()));
  if (n_examples <= 0 || n_examples > data.size())
    throw config_error("transfer eval needs 1.." + std::to_string(data.size()) +
                       " examples, got " + std::to_string(n_examples));
  if (batch_size <= 0) throw std::invalid_argument("batch size must be positive");
  for (const AttackConfig& cfg : attacks) cfg.validate();

  auto sequential_batches = [&]() {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n_examples));
    for (std::int64_t i = 0; i < n_examples; ++i)
      order[static_cast<std::size_t>(i)] = i;
    return BatchIterator(data, std::move(order), batch_size);
  };

  std::vector<TransferCell> cells;
  cells.reserve(attacks.size() + 1);

  double clean_hits = 0.0;
  {
    BatchIterator it = sequential_batches();
    while (it.has_next()) {
      const Batch batch = it.next();
      clean_hits += ensemble_accuracy(target, batch.images, batch.labels) *
                    static_cast<double>(batch.labels.size());
    }
  }
  const double clean_acc = clean_hits / static_cast<double>(n_examples);
  cells.push_back({dataset_tag, "clean", 0.0, n_examples, clean_acc, clean_acc});

  // Cells are independent (per-batch seeds derive from each cell's own
  // config), so they fan out across cores; results land by index, keeping
  // the output order and bytes identical for any worker count.
  std::vector<TransferCell> attack_cells(attacks.size());
  std::atomic<std::size_t> next_cell{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (std::size_t i; (i = next_cell.fetch_add(1)) < attacks.size();) {
      try {
        const AttackConfig& cfg = attacks[i];
        double adv_hits = 0.0;
        BatchIterator it = sequential_batches();
        std::int64_t batch_index = 0;
        while (it.has_next()) {
          const Batch batch = it.next();
          AttackConfig batch_cfg = cfg;
          batch_cfg.seed =
              Rng(cfg.seed)
                  .child("batch", static_cast<std::uint64_t>(batch_index))
                  .next_u64();
          const AdversarialBatch adv = run_attack(surrogate, surrogate_lcm,
                                                  batch.images, batch.labels,
                                                  batch_cfg);
          adv_hits += ensemble_accuracy(target, adv.perturbed, batch.labels) *
                      static_cast<double>(batch.labels.size());
          ++batch_index;
        }
        attack_cells[i] = {dataset_tag, cfg.family, cfg.epsilon, n_examples,
                           clean_acc,
                           adv_hits / static_cast<double>(n_examples)};
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_threads =
      std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()),
                            attacks.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (TransferCell& cell : attack_cells) cells.push_back(std::move(cell));
  return cells;
}

}  // namespace cldl
