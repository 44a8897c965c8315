// Acceptance gate. Each numbered criterion prints exactly one PASS/FAIL line;
// the process exits nonzero if any criterion fails. The first command-line
// argument must be the path to the cldl CLI binary (used by the determinism
// criterion, which exercises the real executable).
//
// Criteria:
//   1 gradient-oracles      every objective component matches central finite
//                           differences on all ensemble + confusion-model
//                           parameters of a 2-member MLP (d=16, C=5, batch=4)
//   2 double-backward       d(total)/d(theta) with beta>0, i.e. through the
//                           per-example input gradients, matches FD at 1e-3
//   3 analytic-identities   JSD(p,p)=0, disjoint one-hots ln2, alignment of
//                           identical gradients = 1, diversity of identical
//                           soft labels = 0, total = kl - a*ld + b*gd
//   4 attack-invariants     10,000 randomized runs never leave the epsilon
//                           ball or the [0,1] pixel range
//   5 attack-equivalences   bim(r=1,step=eps)==fgsm, pgd(no random start)==bim,
//                           mim(mu=0) tracks bim step-for-step
//   6 desk-scale-robustness diversity-trained ensemble keeps clean accuracy
//                           within 2pp of the baseline and beats it on
//                           transferred attacks in >=12/16 sweep cells and in
//                           every cell at the largest epsilon
//   7 diversity-probes      alpha>0 raises held-out truncated soft-label JSD;
//                           beta>0 lowers held-out gradient |cos|
//   8 determinism           repeated CLI train/attack runs are byte-identical
//   9 idx-roundtrip         IDX save/load is bit-exact and header validation
//                           rejects corrupt files

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cldl/attacks.hpp"
#include "cldl/checkpoint.hpp"
#include "cldl/dataset.hpp"
#include "cldl/diversity.hpp"
#include "cldl/errors.hpp"
#include "cldl/lcm.hpp"
#include "cldl/nn.hpp"
#include "cldl/results.hpp"
#include "cldl/rng.hpp"
#include "cldl/synth.hpp"
#include "cldl/tensor.hpp"
#include "cldl/trainer.hpp"

namespace fs = std::filesystem;
using namespace cldl;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Finite-difference harness: worst relative error of reverse-mode gradients
// against the central-difference oracle, across every coordinate of every
// parameter. build() must recompute the loss from the live parameters.

double rel_err(double got, double want) {
  return std::fabs(got - want) / std::max(1.0, std::fabs(want));
}

double worst_fd_error(const std::function<Tensor()>& build,
                      std::vector<Tensor> params, double h) {
  Tensor loss = build();
  GradMap analytic = backward(loss, params);
  double worst = 0.0;
  for (Tensor& p : params) {
    const std::vector<double> saved(p.data().begin(), p.data().end());
    const Tensor point = tensor_of(saved, p.shape());
    const Tensor fd = finite_difference_grad(
        [&](const Tensor& probe) {
          std::copy(probe.data().begin(), probe.data().end(),
                    p.raw_data().begin());
          return build().item();
        },
        point, h);
    std::copy(saved.begin(), saved.end(), p.raw_data().begin());
    const auto ga = analytic.at(p).data();
    const auto fa = fd.data();
    for (size_t k = 0; k < ga.size(); ++k)
      worst = std::max(worst, rel_err(ga[k], fa[k]));
  }
  return worst;
}

// The pinned oracle fixture: 2-member MLP ensemble, representation 16,
// 5 classes, batch of 4. Hidden width 16 keeps the FD sweep fast.
struct OracleFixture {
  Ensemble ensemble;
  LabelConfusionModel lcm;
  Tensor x;
  std::vector<int64_t> labels;
  std::vector<Tensor> all_params;

  explicit OracleFixture(std::uint64_t seed) {
    Rng rng(seed);
    for (int i = 0; i < 2; ++i)
      ensemble.members.push_back(make_mlp(12, 16, 16, 5, rng));
    lcm = make_lcm(5, 8, 16, 4.0, rng);
    x = uniform({4, 12}, 0.05, 0.95, rng);
    labels = {0, 2, 4, 1};
    all_params = ensemble.parameters();
    for (const Tensor& p : lcm.parameters()) all_params.push_back(p);
  }

  EnsembleLossReport report(double alpha, double beta) const {
    return total_loss(x, labels, ensemble, lcm, DiversityWeights{alpha, beta});
  }
};

Outcome criterion_gradient_oracles() {
  OracleFixture fx(2024);
  struct Component {
    const char* name;
    std::function<Tensor()> build;
    double tol;
  };
  const std::vector<Component> components = {
      {"mean_kl", [&] { return fx.report(0.7, 1.3).mean_kl; }, 1e-4},
      {"l_ld", [&] { return fx.report(0.7, 1.3).label_diversity; }, 1e-4},
      {"l_gd", [&] { return fx.report(0.7, 1.3).gradient_alignment; }, 1e-3},
      {"total", [&] { return fx.report(0.7, 1.3).total; }, 1e-3},
  };
  std::ostringstream detail;
  bool pass = true;
  for (const Component& c : components) {
    const double worst = worst_fd_error(c.build, fx.all_params, 1e-4);
    if (worst >= c.tol) pass = false;
    detail << c.name << " max rel err " << fmt(worst) << " (tol " << c.tol
           << "); ";
  }
  return {pass, detail.str()};
}

Outcome criterion_double_backward() {
  // A different random point and different weights from criterion 1, with
  // beta dominant so the second-order path carries most of the gradient.
  OracleFixture fx(9090);
  const double worst = worst_fd_error(
      [&] { return fx.report(0.25, 2.0).total; }, fx.all_params, 1e-4);
  return {worst < 1e-3,
          "d(total)/d(params) with beta=2 max rel err " + fmt(worst) +
              " (tol 0.001)"};
}

Outcome criterion_analytic_identities() {
  std::ostringstream detail;
  bool pass = true;
  auto check = [&](const char* name, double got, double want, double tol) {
    const double diff = std::fabs(got - want);
    if (diff > tol) {
      pass = false;
      detail << name << " off by " << fmt(diff) << "; ";
    }
  };

  const Tensor p = tensor_of({0.3, 0.2, 0.4, 0.1}, {4});
  check("jsd(p,p)", jsd(p, p).item(), 0.0, 0.0);

  const Tensor e0 = tensor_of({1, 0, 0, 0}, {4});
  const Tensor e2 = tensor_of({0, 0, 1, 0}, {4});
  check("jsd of disjoint one-hots", jsd(e0, e2).item(), std::log(2.0), 1e-10);

  Rng rng(5);
  const Tensor g = uniform({3, 7}, -1.0, 1.0, rng);
  const std::array<Tensor, 3> same_grads{g, g, g};
  check("alignment of identical gradients",
        gradient_alignment_loss(same_grads).item(), 1.0, 1e-10);

  const Tensor rows = softmax(uniform({3, 6}, -1.0, 1.0, rng), 1);
  const std::array<Tensor, 3> same_slds{rows, rows, rows};
  check("diversity of identical soft labels",
        label_diversity_loss(same_slds).item(), 0.0, 0.0);

  OracleFixture fx(31);
  const double alpha = 0.9, beta = 1.7;
  const EnsembleLossReport r = fx.report(alpha, beta);
  check("total-loss identity", r.total.item(),
        r.mean_kl.item() - alpha * r.label_diversity.item() +
            beta * r.gradient_alignment.item(),
        1e-10);

  if (pass) detail << "all five identities hold";
  return {pass, detail.str()};
}

Outcome criterion_attack_invariants() {
  Rng rng(777);
  Ensemble ens;
  {
    Rng init = rng.child("model");
    ens = make_ensemble(2, "mlp", {6}, 4, 3, init);
  }
  const std::array<const char*, 4> families{"fgsm", "bim", "pgd", "mim"};
  int64_t runs = 0, worst_run = -1;
  double worst_excess = 0.0;
  for (int64_t i = 0; i < 10000; ++i) {
    Rng draw = rng.child("run", i);
    AttackConfig cfg;
    cfg.family = families[static_cast<size_t>(i % 4)];
    cfg.epsilon = draw.uniform(0.01, 0.5);
    cfg.steps = 1 + static_cast<int64_t>(draw.uniform_int(5));
    cfg.step_size = (i % 3 == 0) ? 0.0 : draw.uniform(0.01, 0.4);
    cfg.momentum = draw.uniform(0.0, 2.0);
    cfg.random_start = (i % 2 == 0);
    cfg.seed = draw.next_u64();
    Rng data = rng.child("data", i);
    const Tensor x = uniform({2, 6}, 0.0, 1.0, data);
    const std::vector<int64_t> labels{
        static_cast<int64_t>(data.uniform_int(3)),
        static_cast<int64_t>(data.uniform_int(3))};
    const AdversarialBatch adv = run_attack(ens, nullptr, x, labels, cfg);
    const auto x0 = x.data();
    const auto x1 = adv.perturbed.data();
    for (size_t k = 0; k < x1.size(); ++k) {
      const double excess = std::fabs(x1[k] - x0[k]) - cfg.epsilon;
      if (excess > worst_excess) {
        worst_excess = excess;
        worst_run = i;
      }
      if (x1[k] < 0.0 || x1[k] > 1.0) {
        return {false, "range violation in run " + std::to_string(i)};
      }
    }
    ++runs;
  }
  if (worst_excess > 1e-9)
    return {false, "ball violation by " + fmt(worst_excess) + " in run " +
                       std::to_string(worst_run)};
  return {true, std::to_string(runs) +
                    " randomized runs stayed inside the ball (worst overshoot " +
                    fmt(worst_excess) + ") and [0,1]"};
}

Outcome criterion_attack_equivalences() {
  Rng rng(404);
  Ensemble ens = make_ensemble(2, "mlp", {10}, 6, 4, rng);
  const Tensor x = uniform({8, 10}, 0.1, 0.9, rng);
  std::vector<int64_t> labels(8);
  for (int i = 0; i < 8; ++i) labels[i] = i % 4;

  auto exact_equal = [](const Tensor& a, const Tensor& b) {
    const auto da = a.data(), db = b.data();
    if (da.size() != db.size()) return false;
    for (size_t i = 0; i < da.size(); ++i)
      if (da[i] != db[i]) return false;
    return true;
  };

  AttackConfig fgsm;
  fgsm.family = "fgsm";
  fgsm.epsilon = 0.17;
  const Tensor fgsm_out = run_attack(ens, nullptr, x, labels, fgsm).perturbed;

  AttackConfig bim1;
  bim1.family = "bim";
  bim1.epsilon = 0.17;
  bim1.steps = 1;
  bim1.step_size = 0.17;
  const Tensor bim1_out = run_attack(ens, nullptr, x, labels, bim1).perturbed;
  if (!exact_equal(fgsm_out, bim1_out))
    return {false, "bim(r=1, step=eps) differs from fgsm"};

  AttackConfig bim;
  bim.family = "bim";
  bim.epsilon = 0.12;
  bim.steps = 6;
  std::vector<Tensor> bim_traj;
  const Tensor bim_out =
      run_attack(ens, nullptr, x, labels, bim, &bim_traj).perturbed;

  AttackConfig pgd = bim;
  pgd.family = "pgd";
  pgd.random_start = false;
  const Tensor pgd_out = run_attack(ens, nullptr, x, labels, pgd).perturbed;
  if (!exact_equal(bim_out, pgd_out))
    return {false, "pgd without random start differs from bim"};

  AttackConfig mim = bim;
  mim.family = "mim";
  mim.momentum = 0.0;
  std::vector<Tensor> mim_traj;
  run_attack(ens, nullptr, x, labels, mim, &mim_traj);
  if (mim_traj.size() != bim_traj.size())
    return {false, "mim(mu=0) trajectory length differs from bim"};
  double worst = 0.0;
  for (size_t s = 0; s < bim_traj.size(); ++s) {
    const auto a = bim_traj[s].data(), b = mim_traj[s].data();
    for (size_t k = 0; k < a.size(); ++k)
      worst = std::max(worst, std::fabs(a[k] - b[k]));
  }
  if (worst > 1e-10)
    return {false, "mim(mu=0) deviates from bim by " + fmt(worst)};
  return {true,
          "bim(1)==fgsm and pgd(no-start)==bim exactly; mim(mu=0) within " +
              fmt(worst) + " of bim over " + std::to_string(bim_traj.size()) +
              " steps"};
}

// ---------------------------------------------------------------------------
// Desk-scale experiment shared state.

TrainConfig desk_config(double alpha, double beta, const char* objective,
                        std::uint64_t seed) {
  TrainConfig cfg;
  cfg.arch = "mlp";
  cfg.objective = objective;
  cfg.n_members = 3;
  cfg.repr_dim = 64;
  cfg.embed_dim = 64;
  cfg.epochs = 20;
  cfg.batch_size = 128;
  cfg.lr_members = 1e-3;
  cfg.lr_lcm = 1e-3;
  cfg.weight_decay = 1e-4;
  cfg.lr_drop_epochs = {12, 16};
  cfg.gamma = 3.0;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.seed = seed;
  return cfg;
}

Outcome criterion_desk_scale() {
  Rng data_rng(20260815);
  const Dataset train_set = make_synthetic_digits(
      10000, data_rng.child("train").next_u64(), "train");
  const Dataset eval_set =
      make_synthetic_digits(2000, data_rng.child("eval").next_u64(), "test");

  const TrainResult baseline =
      train(desk_config(0.0, 0.0, "cldl", 101), train_set);
  const TrainResult diverse =
      train(desk_config(2.0, 1.0, "cldl", 101), train_set);
  const TrainResult surrogate =
      train(desk_config(0.0, 0.0, "cross-entropy", 909), train_set);

  const std::array<const char*, 4> families{"fgsm", "bim", "pgd", "mim"};
  const std::array<double, 4> epsilons{0.1, 0.15, 0.2, 0.25};
  std::vector<AttackConfig> attacks;
  for (const char* family : families) {
    for (double eps : epsilons) {
      AttackConfig a;
      a.family = family;
      a.epsilon = eps;
      a.steps = 10;
      a.momentum = 1.0;
      a.seed = 31337;
      attacks.push_back(a);
    }
  }

  const std::vector<TransferCell> base_cells =
      blackbox_transfer_eval(baseline.ensemble, surrogate.ensemble, nullptr,
                             eval_set, 2000, 256, attacks, "synth-digits");
  const std::vector<TransferCell> div_cells =
      blackbox_transfer_eval(diverse.ensemble, surrogate.ensemble, nullptr,
                             eval_set, 2000, 256, attacks, "synth-digits");

  std::cout << comparison_text_table(
      {{"baseline", base_cells}, {"diverse", div_cells}});

  const double base_clean = base_cells[0].clean_accuracy;
  const double div_clean = div_cells[0].clean_accuracy;
  int wins = 0, largest_eps_wins = 0;
  for (size_t i = 1; i < base_cells.size(); ++i) {
    const bool win =
        div_cells[i].adversarial_accuracy > base_cells[i].adversarial_accuracy;
    if (win) ++wins;
    if (win && base_cells[i].epsilon == 0.25) ++largest_eps_wins;
  }
  const bool clean_ok = div_clean >= base_clean - 0.02;
  const bool wins_ok = wins >= 12 && largest_eps_wins == 4;
  std::ostringstream detail;
  detail << "clean " << fmt(div_clean) << " vs baseline " << fmt(base_clean)
         << (clean_ok ? " (within 2pp)" : " (MORE than 2pp below)")
         << "; adversarial wins " << wins << "/16 (need 12), " << largest_eps_wins
         << "/4 at eps=0.25 (need 4)";
  return {clean_ok && wins_ok, detail.str()};
}

double mean_pairwise_truncated_jsd(const Ensemble& ensemble,
                                   const LabelConfusionModel& lcm,
                                   const Tensor& images,
                                   const std::vector<int64_t>& labels) {
  NoGradGuard guard;
  const Tensor x = arch_input(ensemble, images);
  const Tensor y = one_hot(labels, lcm.n_classes);
  std::vector<Tensor> truncated;
  for (int64_t i = 0; i < ensemble.size(); ++i) {
    const Tensor v = encode(ensemble.members[i], x);
    const SoftLabel sl = simulated_label_distribution(lcm, v, y, i);
    truncated.push_back(truncate_sld_rows(sl.sld, labels));
  }
  double acc = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < truncated.size(); ++i)
    for (size_t j = i + 1; j < truncated.size(); ++j) {
      acc += mean(jsd_rows(truncated[i], truncated[j])).item();
      ++pairs;
    }
  return acc / static_cast<double>(pairs);
}

Outcome criterion_diversity_probes() {
  Rng data_rng(6644);
  const Dataset train_set =
      make_synthetic_digits(3000, data_rng.child("train").next_u64(), "train");
  const Dataset held_out =
      make_synthetic_digits(512, data_rng.child("eval").next_u64(), "test");

  TrainConfig base_cfg = desk_config(0.0, 0.0, "cldl", 55);
  base_cfg.epochs = 8;
  base_cfg.repr_dim = 32;
  base_cfg.embed_dim = 32;

  TrainConfig alpha_cfg = base_cfg;
  alpha_cfg.alpha = 2.0;
  TrainConfig beta_cfg = base_cfg;
  beta_cfg.beta = 1.0;

  const TrainResult control = train(base_cfg, train_set);
  const TrainResult with_alpha = train(alpha_cfg, train_set);
  const TrainResult with_beta = train(beta_cfg, train_set);

  const Tensor x = held_out.images;
  const std::vector<int64_t>& y = held_out.labels;

  const double jsd_control =
      mean_pairwise_truncated_jsd(control.ensemble, control.lcm, x, y);
  const double jsd_alpha =
      mean_pairwise_truncated_jsd(with_alpha.ensemble, with_alpha.lcm, x, y);

  auto holdout_alignment = [&](const TrainResult& r) {
    return total_loss(arch_input(r.ensemble, x), y, r.ensemble, r.lcm,
                      DiversityWeights{})
        .gradient_alignment.item();
  };
  const double cos_control = holdout_alignment(control);
  const double cos_beta = holdout_alignment(with_beta);

  const bool alpha_ok = jsd_alpha > jsd_control;
  const bool beta_ok = cos_beta < cos_control;
  std::ostringstream detail;
  detail << "held-out truncated-SLD JSD " << fmt(jsd_alpha)
         << (alpha_ok ? " > " : " NOT > ") << fmt(jsd_control)
         << " (control); gradient |cos| " << fmt(cos_beta)
         << (beta_ok ? " < " : " NOT < ") << fmt(cos_control) << " (control)";
  return {alpha_ok && beta_ok, detail.str()};
}

// ---------------------------------------------------------------------------
// Determinism through the real CLI.

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("cldl-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "'" + cli + "' " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc < 0 ? rc : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file " + path.string());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

Outcome criterion_determinism(const std::string& cli) {
  if (cli.empty()) return {false, "no CLI path supplied on the command line"};
  TempDir dir;
  const std::string root = dir.path.string();
  {
    std::ofstream conf(dir.path / "run.conf");
    conf << "arch = mlp\nn_members = 3\nrepr_dim = 16\nembed_dim = 16\n"
         << "epochs = 2\nbatch_size = 64\ngamma = 3\nalpha = 2\nbeta = 1\n"
         << "seed = 11\ndata_dir = " << root << "/data\neval_count = 200\n"
         << "attack_batch = 128\n";
  }
  if (run_cli(cli, "gen-data --out '" + root + "/data' --seed 5 "
                   "--train-count 600 --eval-count 200") != 0)
    return {false, "gen-data failed"};
  for (const char* name : {"a", "b"}) {
    if (run_cli(cli, "train --config '" + root + "/run.conf' --out '" + root +
                         "/" + name + ".ckpt'") != 0)
      return {false, "train run failed"};
  }
  if (slurp(dir.path / "a.ckpt") != slurp(dir.path / "b.ckpt"))
    return {false, "repeated train produced different checkpoint bytes"};
  if (slurp(dir.path / "a.ckpt.log.csv") != slurp(dir.path / "b.ckpt.log.csv"))
    return {false, "repeated train produced different training logs"};
  for (const char* name : {"x", "y"}) {
    if (run_cli(cli, "attack --target '" + root + "/a.ckpt' --surrogate '" +
                         root + "/b.ckpt' --out '" + root + "/" + name +
                         ".csv' --config '" + root +
                         "/run.conf' --epsilons 0.1,0.2 --seed 3") != 0)
      return {false, "attack run failed"};
  }
  if (slurp(dir.path / "x.csv") != slurp(dir.path / "y.csv"))
    return {false, "repeated attack produced different CSV bytes"};
  return {true,
          "train checkpoints+logs and attack CSVs byte-identical across reruns"};
}

Outcome criterion_idx_roundtrip() {
  TempDir dir;
  const std::string images = (dir.path / "imgs.idx").string();
  const std::string labels = (dir.path / "lbls.idx").string();
  const Dataset original = make_synthetic_digits(64, 31, "train");
  save_idx(original, images, labels);
  const Dataset loaded = load_idx(images, labels);

  if (loaded.size() != original.size())
    return {false, "round-trip changed the example count"};
  const auto a = original.images.data(), b = loaded.images.data();
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i])
      return {false, "round-trip changed pixel " + std::to_string(i)};
  if (loaded.labels != original.labels)
    return {false, "round-trip changed labels"};

  // header validation: flip one magic byte in each file and expect rejection
  for (const std::string& victim : {images, labels}) {
    std::string bytes = slurp(victim);
    bytes[3] = static_cast<char>(bytes[3] + 1);
    const std::string corrupt = (dir.path / "corrupt.idx").string();
    std::ofstream(corrupt, std::ios::binary) << bytes;
    try {
      load_idx(victim == images ? corrupt : images,
               victim == images ? labels : corrupt);
      return {false, "corrupt magic was accepted"};
    } catch (const config_error&) {
    }
  }
  return {true, "64 examples round-tripped bit-exactly; corrupt magics rejected"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient-oracles", criterion_gradient_oracles},
      {2, "double-backward", criterion_double_backward},
      {3, "analytic-identities", criterion_analytic_identities},
      {4, "attack-invariants", criterion_attack_invariants},
      {5, "attack-equivalences", criterion_attack_equivalences},
      {6, "desk-scale-robustness", criterion_desk_scale},
      {7, "diversity-probes", criterion_diversity_probes},
      {8, "determinism", [&] { return criterion_determinism(cli); }},
      {9, "idx-roundtrip", criterion_idx_roundtrip},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = Clock::now();
    Outcome result;
    try {
      result = c.run();
    } catch (const std::exception& e) {
      result = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(Clock::now() - start).count();
    if (!result.pass) ++failures;
    std::cout << (result.pass ? "PASS" : "FAIL") << " criterion " << c.id
              << " " << c.name << " (" << fmt(seconds) << "s): " << result.detail
              << std::endl;
  }
  std::cout << (failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED")
            << ": " << (criteria.size() - failures) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
