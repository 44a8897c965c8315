#include <array>
#include <cmath>
#include <vector>

#include "cldl/lcm.hpp"
#include "cldl/nn.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cldl;
using cldl::testutil::rel_err;

namespace {

void zero_fill(Tensor& t) {
  for (double& v : t.raw_data()) v = 0.0;
}

void set_identity(Tensor& t) {
  zero_fill(t);
  int64_t n = t.shape()[0];
  auto d = t.raw_data();
  for (int64_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
}

// e = d = C with one-hot table and identity label_net, so Vec^(l) = I.
LabelConfusionModel identity_lcm(int64_t c, double gamma, Rng& rng) {
  LabelConfusionModel lcm = make_lcm(c, c, c, gamma, rng);
  set_identity(lcm.param("label_table"));
  set_identity(lcm.param("net.w1"));
  zero_fill(lcm.param("net.b1"));
  set_identity(lcm.param("net.w2"));
  zero_fill(lcm.param("net.b2"));
  return lcm;
}

}  // namespace

TEST_SUITE_BEGIN("lcm");

TEST_CASE("identity label net on a one-hot table gives identity rows") {
  Rng rng(11);
  LabelConfusionModel lcm = identity_lcm(5, 1.0, rng);
  Tensor vec = label_representations(lcm);
  REQUIRE(vec.shape() == Shape{5, 5});
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) CHECK(vec.at({r, c}) == (r == c ? 1.0 : 0.0));
}

TEST_CASE("label representations match a hand-rolled embedding-net oracle") {
  Rng rng(12);
  LabelConfusionModel lcm = make_lcm(4, 3, 5, 2.0, rng);
  auto table = lcm.param("label_table").data();
  auto w1 = lcm.param("net.w1").data(), b1 = lcm.param("net.b1").data();
  auto w2 = lcm.param("net.w2").data(), b2 = lcm.param("net.b2").data();

  Tensor vec = label_representations(lcm);
  REQUIRE(vec.shape() == Shape{4, 5});
  for (int cls = 0; cls < 4; ++cls) {
    std::vector<double> h(3);
    for (int j = 0; j < 3; ++j) {
      double acc = b1[j];
      for (int i = 0; i < 3; ++i) acc += table[cls * 3 + i] * w1[i * 3 + j];
      h[j] = acc > 0 ? acc : 0;
    }
    for (int k = 0; k < 5; ++k) {
      double acc = b2[k];
      for (int j = 0; j < 3; ++j) acc += h[j] * w2[j * 5 + k];
      CHECK(vec.at({cls, k}) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("changing one table row only moves that representation row") {
  Rng rng(13);
  LabelConfusionModel lcm = make_lcm(5, 4, 3, 1.0, rng);
  Tensor before = label_representations(lcm).detach();
  lcm.param("label_table").raw_data()[2 * 4 + 1] += 0.75;  // row 2
  Tensor after = label_representations(lcm);
  for (int r = 0; r < 5; ++r) {
    bool same = true;
    for (int c = 0; c < 3; ++c)
      same = same && before.at({r, c}) == after.at({r, c});
    CHECK(same == (r != 2));
  }
}

TEST_CASE("zero representation with zero bias gives a uniform confusion vector") {
  Rng rng(14);
  LabelConfusionModel lcm = make_lcm(6, 4, 5, 1.0, rng);
  zero_fill(lcm.param("sim.b"));
  Tensor c = confusion_vector(lcm, zeros({5}));
  for (int i = 0; i < 6; ++i)
    CHECK(c.at({i}) == doctest::Approx(1.0 / 6).epsilon(1e-12));
}

TEST_CASE("identity similarity path saturates on the aligned class") {
  Rng rng(15);
  LabelConfusionModel lcm = identity_lcm(10, 1.0, rng);
  set_identity(lcm.param("sim.w"));
  zero_fill(lcm.param("sim.b"));
  std::vector<double> v(10, 0.0);
  v[0] = 10.0;
  Tensor c = confusion_vector(lcm, tensor_of(v, {10}));
  double peak = 1.0 / (1.0 + 9.0 * std::exp(-10.0));
  CHECK(std::fabs(c.at({0}) - peak) < 1e-10);
  for (int i = 1; i < 10; ++i) CHECK(c.at({i}) < 1e-4);
}

TEST_CASE("confusion vector ignores a constant shift of the logits") {
  Rng rng(16);
  LabelConfusionModel lcm = make_lcm(5, 4, 6, 1.0, rng);
  Tensor v = uniform({6}, -1, 1, rng);
  Tensor before = confusion_vector(lcm, v).detach();
  for (double& b : lcm.param("sim.b").raw_data()) b += 3.5;
  Tensor after = confusion_vector(lcm, v);
  for (int i = 0; i < 5; ++i)
    CHECK(before.at({i}) == doctest::Approx(after.at({i})).epsilon(1e-12));
}

TEST_CASE("gamma zero reduces the soft label to softmax of the lcv") {
  Rng rng(17);
  LabelConfusionModel lcm = make_lcm(5, 4, 3, 0.0, rng);
  Tensor v = uniform({3}, -1, 1, rng);
  SoftLabel sl = simulated_label_distribution(lcm, v, one_hot({2}, 5));
  Tensor want = softmax(sl.lcv, 1);
  for (int i = 0; i < 5; ++i)
    CHECK(sl.sld.at({0, i}) == doctest::Approx(want.at({0, i})).epsilon(1e-12));
}

TEST_CASE("huge gamma collapses the soft label onto the one-hot target") {
  Rng rng(18);
  LabelConfusionModel lcm = make_lcm(6, 4, 3, 50.0, rng);
  Tensor v = uniform({3}, -1, 1, rng);
  SoftLabel sl = simulated_label_distribution(lcm, v, one_hot({4}, 6));
  for (int i = 0; i < 6; ++i)
    CHECK(std::fabs(sl.sld.at({0, i}) - (i == 4 ? 1.0 : 0.0)) < 1e-4);
}

TEST_CASE("gamma 4 with a uniform lcv matches the closed form") {
  Rng rng(19);
  LabelConfusionModel lcm = make_lcm(10, 4, 3, 4.0, rng);
  zero_fill(lcm.param("sim.b"));
  SoftLabel sl = simulated_label_distribution(lcm, zeros({3}), one_hot({3}, 10));
  // logits are 0.1 everywhere and 4.1 at the target, so the peak-to-rest
  // ratio is e^4 and the vector is fixed by normalization.
  double lo = std::exp(0.1), hi = std::exp(4.1);
  double z = 9 * lo + hi;
  for (int i = 0; i < 10; ++i)
    CHECK(sl.sld.at({0, i}) ==
          doctest::Approx((i == 3 ? hi : lo) / z).epsilon(1e-12));
  CHECK(sl.sld.at({0, 3}) / sl.sld.at({0, 0}) ==
        doctest::Approx(std::exp(4.0)).epsilon(1e-12));
  CHECK(sl.lcv.at({0, 0}) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("kl of identical distributions is zero") {
  Tensor p = tensor_of({0.2, 0.5, 0.3}, {3});
  CHECK(std::fabs(kl_training_loss(p, p).item()) < 1e-10);
}

TEST_CASE("kl of a point mass against a fair coin is log 2") {
  Tensor s = tensor_of({1, 0}, {2});
  Tensor p = tensor_of({0.5, 0.5}, {2});
  CHECK(kl_training_loss(s, p).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("kl matches a direct sum oracle on random pairs") {
  Rng rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> sv(6), pv(6);
    double ss = 0, ps = 0;
    for (int i = 0; i < 6; ++i) {
      sv[i] = rng.uniform(0.01, 1);
      pv[i] = rng.uniform(0.01, 1);
      ss += sv[i];
      ps += pv[i];
    }
    double want = 0;
    for (int i = 0; i < 6; ++i) {
      sv[i] /= ss;
      pv[i] /= ps;
      want += sv[i] * std::log(sv[i] / pv[i]);
    }
    double got = kl_training_loss(tensor_of(sv, {6}), tensor_of(pv, {6})).item();
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
    CHECK(got >= -1e-12);
  }
}

TEST_CASE("kl_rows returns per-row divergences") {
  Tensor s = tensor_of({1, 0, 0.5, 0.5}, {2, 2});
  Tensor p = tensor_of({0.5, 0.5, 0.5, 0.5}, {2, 2});
  Tensor r = kl_rows(s, p);
  REQUIRE(r.shape() == Shape{2});
  CHECK(r.at({0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::fabs(r.at({1})) < 1e-12);
}

TEST_CASE("member loss gradients flow through encoder and LCM parameters") {
  Rng rng(24);
  SubModel m = make_mlp(5, 6, 4, 3, rng);
  LabelConfusionModel lcm = make_lcm(3, 4, 4, 2.0, rng);
  Tensor x = uniform({2, 5}, -1, 1, rng);
  Tensor y = one_hot({1, 2}, 3);

  auto build_loss = [&]() {
    Tensor v = encode(m, x);
    Tensor p = classify(m, v);
    SoftLabel sl = simulated_label_distribution(lcm, v, y);
    return mean(kl_rows(sl.sld, p));
  };

  std::vector<Tensor> params = m.parameters();
  auto lp = lcm.parameters();
  params.insert(params.end(), lp.begin(), lp.end());
  Tensor loss = build_loss();
  GradMap g = backward(loss, params);

  for (Tensor& t : params) {
    Tensor fd = finite_difference_grad(
        [&](const Tensor& probe) {
          std::vector<double> saved(t.data().begin(), t.data().end());
          std::copy(probe.data().begin(), probe.data().end(),
                    t.raw_data().begin());
          double val = build_loss().item();
          std::copy(saved.begin(), saved.end(), t.raw_data().begin());
          return val;
        },
        t.detach(), 1e-4);
    auto ga = g.at(t).data();
    auto fa = fd.data();
    for (size_t i = 0; i < ga.size(); ++i) {
      INFO("coordinate ", i);
      CHECK(rel_err(ga[i], fa[i]) < 1e-4);
    }
  }
}

TEST_CASE("soft label argmax is the true class whenever gamma >= 1") {
  Rng rng(25);
  int hits = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    double gamma = rng.uniform(1.0, 5.0);
    LabelConfusionModel lcm = make_lcm(6, 4, 5, gamma, rng);
    Tensor v = uniform({5}, -2, 2, rng);
    int64_t y = static_cast<int64_t>(rng.uniform_int(6));
    SoftLabel sl = simulated_label_distribution(lcm, v, one_hot({y}, 6));
    auto am = argmax_rows(sl.sld);
    if (am[0] == y) ++hits;
  }
  CHECK(hits == 1000);
}

TEST_CASE("soft label and confusion vector rows are proper distributions") {
  Rng rng(26);
  LabelConfusionModel lcm = make_lcm(5, 4, 6, 3.0, rng);
  Tensor v = uniform({7, 6}, -2, 2, rng);
  SoftLabel sl = simulated_label_distribution(
      lcm, v, one_hot({0, 1, 2, 3, 4, 0, 1}, 5), 2);
  CHECK(sl.model_index == 2);
  for (int r = 0; r < 7; ++r) {
    double ssum = 0, csum = 0;
    for (int c = 0; c < 5; ++c) {
      CHECK(sl.sld.at({r, c}) > 0.0);
      ssum += sl.sld.at({r, c});
      csum += sl.lcv.at({r, c});
    }
    CHECK(std::fabs(ssum - 1.0) < 1e-9);
    CHECK(std::fabs(csum - 1.0) < 1e-9);
  }
}

TEST_CASE("lcm validation errors") {
  Rng rng(27);
  CHECK_THROWS_AS(make_lcm(5, 4, 3, -0.5, rng), std::invalid_argument);
  LabelConfusionModel lcm = make_lcm(3, 4, 5, 1.0, rng);
  CHECK_THROWS_AS(confusion_vector(lcm, ones({4})), std::invalid_argument);
  CHECK_THROWS_AS(
      simulated_label_distribution(lcm, ones({5}), tensor_of({0.5, 0.5, 0}, {3})),
      std::invalid_argument);
  CHECK_THROWS_AS(
      simulated_label_distribution(lcm, ones({5}), tensor_of({1, 1, 0}, {3})),
      std::invalid_argument);
  CHECK_THROWS_AS(kl_rows(ones({2, 3}), ones({3, 2})), std::invalid_argument);
  CHECK(lcm.parameter_count() ==
        3 * 4 + 4 * 4 + 4 + 4 * 5 + 5 + 3 * 3 + 3);
}

TEST_SUITE_END();
