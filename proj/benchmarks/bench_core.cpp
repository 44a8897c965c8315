// Microbenchmarks for the hot paths: dense/conv kernels, the joint ensemble
// objective with its double-backward term, and one attack iteration.

#include <benchmark/benchmark.h>

#include <vector>

#include "cldl/attacks.hpp"
#include "cldl/diversity.hpp"
#include "cldl/nn.hpp"
#include "cldl/tensor.hpp"
#include "cldl/trainer.hpp"

namespace {

using namespace cldl;

void bm_matmul_forward(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(7);
  const Tensor a = uniform({n, n}, -1.0, 1.0, rng);
  const Tensor b = uniform({n, n}, -1.0, 1.0, rng);
  for (auto _ : state) {
    NoGradGuard guard;
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(bm_matmul_forward)->Arg(64)->Arg(128)->Arg(256);

void bm_matmul_backward(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(7);
  const Tensor a = uniform({n, n}, -1.0, 1.0, rng);
  const Tensor b = uniform({n, n}, -1.0, 1.0, rng);
  const std::vector<Tensor> wrt{a, b};
  for (auto _ : state) {
    Tensor loss = sum(matmul(a, b));
    GradMap grads = backward(loss, wrt);
    benchmark::DoNotOptimize(grads.at(a).data().data());
  }
}
BENCHMARK(bm_matmul_backward)->Arg(64)->Arg(128);

void bm_conv2d_forward(benchmark::State& state) {
  Rng rng(7);
  const Tensor x = uniform({32, 1, 28, 28}, 0.0, 1.0, rng);
  const Tensor k = uniform({8, 1, 3, 3}, -0.5, 0.5, rng);
  for (auto _ : state) {
    NoGradGuard guard;
    Tensor y = conv2d(x, k, 1, 0);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(bm_conv2d_forward);

// The full joint objective (KL + both diversity terms) and the single
// backward pass that training takes per batch. Dominated by the
// double-backward needed for the gradient-alignment penalty.
void bm_objective_and_backward(benchmark::State& state) {
  const int64_t batch = state.range(0);
  Rng rng(7);
  Ensemble ens = make_ensemble(3, "mlp", {784}, 32, 10, rng);
  LabelConfusionModel lcm = make_lcm(10, 32, 32, 4.0, rng);
  const Tensor x = uniform({batch, 784}, 0.0, 1.0, rng);
  std::vector<int64_t> labels(batch);
  for (int64_t i = 0; i < batch; ++i) labels[i] = i % 10;

  std::vector<Tensor> params = ens.parameters();
  for (const Tensor& p : lcm.parameters()) params.push_back(p);

  for (auto _ : state) {
    EnsembleLossReport report =
        total_loss(x, labels, ens, lcm, DiversityWeights{2.0, 4.0});
    GradMap grads = backward(report.total, params);
    benchmark::DoNotOptimize(grads.at(params[0]).data().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bm_objective_and_backward)->Arg(16)->Arg(64);

void bm_adam_step(benchmark::State& state) {
  Rng rng(7);
  Ensemble ens = make_ensemble(3, "mlp", {784}, 32, 10, rng);
  const std::vector<Tensor> params = ens.parameters();
  const Tensor x = uniform({16, 784}, 0.0, 1.0, rng);
  std::vector<int64_t> labels(16);
  for (int64_t i = 0; i < 16; ++i) labels[i] = i % 10;
  LabelConfusionModel lcm = make_lcm(10, 32, 32, 4.0, rng);
  EnsembleLossReport report =
      total_loss(x, labels, ens, lcm, DiversityWeights{});
  const GradMap grads = backward(report.mean_kl, params);
  AdamState st = make_adam_state(params);
  for (auto _ : state) {
    adam_step(params, grads, st, 1e-3, 1e-4);
    benchmark::DoNotOptimize(params[0].data().data());
  }
}
BENCHMARK(bm_adam_step);

void bm_attack_step(benchmark::State& state) {
  Rng rng(7);
  Ensemble ens = make_ensemble(3, "mlp", {784}, 32, 10, rng);
  const Tensor x = uniform({64, 784}, 0.0, 1.0, rng);
  std::vector<int64_t> labels(64);
  for (int64_t i = 0; i < 64; ++i) labels[i] = i % 10;
  AttackConfig cfg;
  cfg.family = "fgsm";
  cfg.epsilon = 0.1;
  for (auto _ : state) {
    AdversarialBatch adv = run_attack(ens, nullptr, x, labels, cfg);
    benchmark::DoNotOptimize(adv.perturbed.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(bm_attack_step);

}  // namespace

BENCHMARK_MAIN();
