#include "cldl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cldl/errors.hpp"

namespace cldl {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
constexpr double kProbFloor = 1e-12;

void require(bool ok, const std::string& what) {
  if (!ok) throw config_error(what);
}

// Mean over members of the per-example cross entropy -log p_y, used for the
// independent surrogate objective.
Tensor cross_entropy_objective(const Ensemble& ensemble, const Tensor& x,
                               const std::vector<std::int64_t>& labels) {
  const auto b = static_cast<std::int64_t>(labels.size());
  Tensor acc;
  for (const SubModel& m : ensemble.members) {
    const Tensor p = predict(m, x);
    const Tensor picked =
        gather_cols(log(clamp_min(p, kProbFloor)), labels, 1);
    const Tensor ce = neg(sum(picked)) / static_cast<double>(b);
    acc = acc.defined() ? acc + ce : ce;
  }
  return acc / static_cast<double>(ensemble.size());
}

// The N = 1 degenerate objective: plain KL to the simulated label
// distribution with no pairwise terms.
EnsembleLossReport single_member_loss(const Tensor& x,
                                      const std::vector<std::int64_t>& labels,
                                      const Ensemble& ensemble,
                                      const LabelConfusionModel& lcm) {
  const auto b = static_cast<std::int64_t>(labels.size());
  const SubModel& m = ensemble.members[0];
  const Tensor v = encode(m, x);
  const Tensor p = classify(m, v);
  const Tensor y = one_hot(labels, lcm.n_classes);
  const SoftLabel soft = simulated_label_distribution(lcm, v, y, 0);
  const Tensor kl = sum(kl_rows(soft.sld, p)) / static_cast<double>(b);

  EnsembleLossReport report;
  report.per_model_kl = {kl};
  report.mean_kl = kl;
  report.label_diversity = scalar(0.0);
  report.gradient_alignment = scalar(0.0);
  report.total = kl;
  return report;
}

void check_finite(const EnsembleLossReport& report, std::int64_t epoch,
                  std::int64_t step) {
  const std::pair<const char*, const Tensor*> parts[] = {
      {"mean_kl", &report.mean_kl},
      {"label_diversity", &report.label_diversity},
      {"gradient_alignment", &report.gradient_alignment},
      {"total", &report.total},
  };
  for (const auto& [name, t] : parts) {
    if (!std::isfinite(t->item()))
      throw numerical_error("non-finite " + std::string(name) + " at epoch " +
                            std::to_string(epoch) + " step " +
                            std::to_string(step) + "; aborting");
  }
}

}  // namespace

void TrainConfig::validate() const {
  require(arch == "mlp" || arch == "cnn-small",
          "unknown architecture: " + arch);
  require(objective == "cldl" || objective == "cross-entropy",
          "unknown objective: " + objective);
  require(n_members >= 1, "n_members must be at least 1");
  if (n_members == 1)
    require(alpha == 0.0 && beta == 0.0,
            "diversity weights need at least 2 members");
  require(repr_dim >= 1, "repr_dim must be positive");
  require(embed_dim >= 1, "embed_dim must be positive");
  require(epochs >= 1, "epochs must be at least 1");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(train_count >= 0, "train_count must be non-negative");
  require(lr_members > 0.0, "lr_members must be positive");
  require(lr_lcm > 0.0, "lr_lcm must be positive");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0,
          "lr_drop_factor must lie in (0, 1]");
  for (std::int64_t e : lr_drop_epochs)
    require(e >= 1, "lr_drop_epochs entries must be at least 1");
  require(gamma >= 0.0, "gamma must be non-negative");
  require(alpha >= 0.0, "alpha must be non-negative");
  require(beta >= 0.0, "beta must be non-negative");
}

double lr_schedule(std::int64_t epoch, double base_lr,
                   std::span<const std::int64_t> drop_epochs, double factor) {
  if (epoch < 1) throw std::invalid_argument("epoch numbering starts at 1");
  double lr = base_lr;
  for (std::int64_t d : drop_epochs)
    if (d <= epoch) lr *= factor;
  return lr;
}

AdamState make_adam_state(std::span<const Tensor> params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor& p : params) {
    st.m.push_back(zeros(p.shape()));
    st.v.push_back(zeros(p.shape()));
  }
  return st;
}

void adam_step(std::span<const Tensor> params, const GradMap& grads,
               AdamState& state, double lr, double weight_decay) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("Adam state built for " +
                                std::to_string(state.m.size()) +
                                " parameters, got " +
                                std::to_string(params.size()));
  state.step += 1;
  const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (!grads.contains(p))
      throw std::invalid_argument("missing gradient for parameter " +
                                  std::to_string(i));
    const Tensor& g = grads.at(p);
    double* pv = p.raw_data().data();
    double* mv = state.m[i].raw_data().data();
    double* vv = state.v[i].raw_data().data();
    const double* gv = g.data().data();
    const std::int64_t n = p.size();
    for (std::int64_t k = 0; k < n; ++k) {
      mv[k] = kBeta1 * mv[k] + (1.0 - kBeta1) * gv[k];
      vv[k] = kBeta2 * vv[k] + (1.0 - kBeta2) * gv[k] * gv[k];
      const double mhat = mv[k] / bias1;
      const double vhat = vv[k] / bias2;
      pv[k] -= lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay * pv[k]);
    }
  }
}

Tensor arch_input(const Ensemble& e, const Tensor& images) {
  if (e.size() == 0) throw std::invalid_argument("empty ensemble");
  const Shape& want = e.members[0].input_shape;
  Shape target;
  target.reserve(want.size() + 1);
  target.push_back(images.shape()[0]);
  target.insert(target.end(), want.begin(), want.end());
  if (images.shape() == target) return images;
  if (images.size() != numel(target))
    throw std::invalid_argument("image batch " + shape_str(images.shape()) +
                                " does not match member input shape " +
                                shape_str(want));
  return reshape(images, target);
}

double ensemble_accuracy(const Ensemble& e, const Tensor& images,
                         const std::vector<std::int64_t>& labels) {
  NoGradGuard guard;
  const Tensor p = ensemble_predict(e, arch_input(e, images));
  const std::vector<std::int64_t> pred = argmax_rows(p);
  if (pred.size() != labels.size())
    throw std::invalid_argument("prediction/label count mismatch");
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return labels.empty() ? 0.0
                        : static_cast<double>(hit) /
                              static_cast<double>(labels.size());
}

TrainResult train(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  data.validate();

  const std::int64_t n_train =
      cfg.train_count == 0 ? data.size() : cfg.train_count;
  require(n_train <= data.size(),
          "train_count " + std::to_string(n_train) + " exceeds dataset size " +
              std::to_string(data.size()));

  const Shape input_shape = cfg.arch == "mlp"
                                ? Shape{data.example_numel()}
                                : data.example_shape();

  Rng root(cfg.seed);
  Rng init_rng = root.child("init");

  TrainResult result;
  if (cfg.n_members == 1) {
    Rng member_rng = init_rng.child("member", 0);
    result.ensemble.members.push_back(make_submodel(
        cfg.arch, input_shape, cfg.repr_dim, data.n_classes, member_rng));
  } else {
    result.ensemble = make_ensemble(cfg.n_members, cfg.arch, input_shape,
                                    cfg.repr_dim, data.n_classes, init_rng);
  }
  Rng lcm_rng = root.child("lcm-init");
  result.lcm = make_lcm(data.n_classes, cfg.embed_dim, cfg.repr_dim, cfg.gamma,
                        lcm_rng);

  const std::vector<Tensor> member_params = result.ensemble.parameters();
  const std::vector<Tensor> lcm_params = result.lcm.parameters();
  std::vector<Tensor> all_params = member_params;
  all_params.insert(all_params.end(), lcm_params.begin(), lcm_params.end());

  AdamState member_state = make_adam_state(member_params);
  AdamState lcm_state = make_adam_state(lcm_params);
  const DiversityWeights weights{cfg.alpha, cfg.beta};
  const bool use_lcm = cfg.objective == "cldl";

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr_m =
        lr_schedule(epoch, cfg.lr_members, cfg.lr_drop_epochs,
                    cfg.lr_drop_factor);
    const double lr_l = lr_schedule(epoch, cfg.lr_lcm, cfg.lr_drop_epochs,
                                    cfg.lr_drop_factor);
    const std::uint64_t epoch_seed =
        root.child("epoch", static_cast<std::uint64_t>(epoch)).next_u64();
    BatchIterator batches =
        subset_shuffle_batch(data, n_train, epoch_seed, cfg.batch_size);

    std::int64_t step = 0;
    while (batches.has_next()) {
      ++step;
      const Batch batch = batches.next();
      const Tensor x = arch_input(result.ensemble, batch.images);

      EnsembleLossReport report;
      if (!use_lcm) {
        const Tensor ce = cross_entropy_objective(result.ensemble, x,
                                                  batch.labels);
        report.per_model_kl = {ce};
        report.mean_kl = ce;
        report.label_diversity = scalar(0.0);
        report.gradient_alignment = scalar(0.0);
        report.total = ce;
      } else if (cfg.n_members == 1) {
        report = single_member_loss(x, batch.labels, result.ensemble,
                                    result.lcm);
      } else {
        report = total_loss(x, batch.labels, result.ensemble, result.lcm,
                            weights);
      }
      check_finite(report, epoch, step);

      const GradMap grads =
          use_lcm ? backward(report.total, all_params)
                  : backward(report.total, member_params);
      adam_step(member_params, grads, member_state, lr_m, cfg.weight_decay);
      if (use_lcm)
        adam_step(lcm_params, grads, lcm_state, lr_l, cfg.weight_decay);

      result.log.push_back({epoch, step, report.mean_kl.item(),
                            report.label_diversity.item(),
                            report.gradient_alignment.item(),
                            report.total.item()});
    }
  }
  return result;
}

}  // namespace cldl
