#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "cldl/nn.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cldl;
using cldl::testutil::rel_err;

namespace {

void zero_fill(Tensor& t) {
  for (double& v : t.raw_data()) v = 0.0;
}

}  // namespace

TEST_SUITE_BEGIN("models");

TEST_CASE("zero-weight mlp encoder maps everything to zero") {
  Rng rng(1);
  SubModel m = make_mlp(6, 8, 4, 3, rng);
  for (auto& [name, t] : m.params) zero_fill(t);
  Tensor v = encode(m, uniform({6}, -5, 5, rng));
  REQUIRE(v.shape() == Shape{4});
  for (int i = 0; i < 4; ++i) CHECK(v.at({i}) == 0.0);
}

TEST_CASE("mlp encode matches a hand-rolled forward chain") {
  Rng rng(20);
  SubModel m = make_mlp(5, 7, 3, 4, rng);
  Tensor x = uniform({5}, -1, 1, rng);

  auto w1 = m.param("fc1.w").data(), b1 = m.param("fc1.b").data();
  auto w2 = m.param("fc2.w").data(), b2 = m.param("fc2.b").data();
  auto xv = x.data();
  std::vector<double> h(7, 0.0), want(3, 0.0);
  for (int j = 0; j < 7; ++j) {
    double acc = b1[j];
    for (int i = 0; i < 5; ++i) acc += xv[i] * w1[i * 7 + j];
    h[j] = acc > 0 ? acc : 0;
  }
  for (int k = 0; k < 3; ++k) {
    double acc = b2[k];
    for (int j = 0; j < 7; ++j) acc += h[j] * w2[j * 3 + k];
    want[k] = acc;
  }

  Tensor v = encode(m, x);
  for (int k = 0; k < 3; ++k)
    CHECK(v.at({k}) == doctest::Approx(want[k]).epsilon(1e-12));
}

TEST_CASE("batched encode rows equal per-example encodes") {
  Rng rng(21);
  SubModel m = make_mlp(6, 10, 5, 3, rng);
  Tensor batch = uniform({4, 6}, -1, 1, rng);
  Tensor vb = encode(m, batch);
  REQUIRE(vb.shape() == Shape{4, 5});
  for (int r = 0; r < 4; ++r) {
    std::vector<double> row(6);
    for (int c = 0; c < 6; ++c) row[c] = batch.at({r, c});
    Tensor v1 = encode(m, tensor_of(row, {6}));
    for (int c = 0; c < 5; ++c)
      CHECK(vb.at({r, c}) == doctest::Approx(v1.at({c})).epsilon(1e-12));
  }
}

TEST_CASE("predict with zero parameters is uniform") {
  Rng rng(2);
  SubModel m = make_mlp(4, 6, 3, 5, rng);
  for (auto& [name, t] : m.params) zero_fill(t);
  Tensor p = predict(m, uniform({4}, -2, 2, rng));
  for (int c = 0; c < 5; ++c)
    CHECK(p.at({c}) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("large classifier bias saturates toward one-hot") {
  Rng rng(3);
  SubModel m = make_mlp(4, 6, 3, 10, rng);
  for (auto& [name, t] : m.params) zero_fill(t);
  m.param("cls.b").raw_data()[0] = 10.0;
  Tensor p = predict(m, uniform({4}, -2, 2, rng));
  // softmax([10,0,...]) peaks at 1/(1+9e^-10): 4.08e-4 below exact one-hot,
  // so the one-hot comparison holds at 5e-4 while off-diagonals pass 1e-4.
  double peak = 1.0 / (1.0 + 9.0 * std::exp(-10.0));
  CHECK(std::fabs(p.at({0}) - peak) < 1e-10);
  CHECK(std::fabs(p.at({0}) - 1.0) < 5e-4);
  for (int c = 1; c < 10; ++c) CHECK(p.at({c}) < 1e-4);
}

TEST_CASE("predict equals softmax of the classifier layer over encode") {
  Rng rng(30);
  SubModel m = make_mlp(6, 9, 4, 5, rng);
  Tensor x = uniform({6}, -1, 1, rng);
  Tensor v = encode(m, x);
  auto wv = m.param("cls.w").data(), bv = m.param("cls.b").data();
  std::vector<double> logits(5);
  for (int c = 0; c < 5; ++c) {
    double acc = bv[c];
    for (int k = 0; k < 4; ++k) acc += v.at({k}) * wv[k * 5 + c];
    logits[c] = acc;
  }
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double& l : logits) z += std::exp(l - mx);
  Tensor p = predict(m, x);
  for (int c = 0; c < 5; ++c)
    CHECK(p.at({c}) ==
          doctest::Approx(std::exp(logits[c] - mx) / z).epsilon(1e-10));
}

TEST_CASE("encode and predict gradients pass the oracle for both archs") {
  Rng rng(31);

  // h is small so a weight perturbation cannot flip relu units whose
  // pre-activation sits near zero; at h=1e-4 a handful of conv coordinates
  // cross a kink and the difference quotient stops estimating the derivative.
  auto check_model = [&](SubModel& m, const Tensor& x, const Tensor& target) {
    auto build_loss = [&]() {
      Tensor p = predict(m, x);
      Tensor d = sub(p, target);
      return sum(mul(d, d));
    };
    Tensor loss = build_loss();
    auto params = m.parameters();
    GradMap g = backward(loss, params);
    for (auto& [name, t] : m.params) {
      Tensor fd = finite_difference_grad(
          [&](const Tensor& probe) {
            std::vector<double> saved(t.data().begin(), t.data().end());
            std::copy(probe.data().begin(), probe.data().end(),
                      t.raw_data().begin());
            double val = build_loss().item();
            std::copy(saved.begin(), saved.end(), t.raw_data().begin());
            return val;
          },
          t.detach(), 1e-6);
      auto ga = g.at(t).data();
      auto fa = fd.data();
      for (size_t i = 0; i < ga.size(); ++i) {
        INFO(m.arch, " param ", name, " coordinate ", i);
        CHECK(rel_err(ga[i], fa[i]) < 1e-4);
      }
    }
  };

  SubModel mlp = make_mlp(6, 7, 4, 3, rng);
  check_model(mlp, uniform({2, 6}, -1, 1, rng), uniform({2, 3}, 0, 1, rng));

  SubModel cnn = make_cnn_small(1, 12, 12, 4, 3, rng);
  check_model(cnn, uniform({2, 1, 12, 12}, -1, 1, rng),
              uniform({2, 3}, 0, 1, rng));
}

TEST_CASE("cnn-small encode has the documented feature-map sizes") {
  Rng rng(32);
  SubModel m = make_cnn_small(1, 28, 28, 64, 10, rng);
  Tensor v = encode(m, uniform({3, 1, 28, 28}, -1, 1, rng));
  CHECK(v.shape() == Shape{3, 64});
  CHECK(m.param("fc.w").shape() == Shape{400, 64});  // 16 * 5 * 5 flattened
}

TEST_CASE("parameter counts match the architecture tables") {
  Rng rng(4);
  SubModel mlp = make_mlp(784, 128, 64, 10, rng);
  CHECK(mlp.parameter_count() == 109386);
  SubModel cnn = make_cnn_small(1, 28, 28, 64, 10, rng);
  CHECK(cnn.parameter_count() == 27562);
}

TEST_CASE("two identical members average to the single prediction") {
  Rng rng(5);
  Ensemble e = make_ensemble(2, "mlp", {6}, 4, 3, rng);
  e.members[1] = e.members[0];
  Tensor x = uniform({6}, -1, 1, rng);
  Tensor pe = ensemble_predict(e, x);
  Tensor p0 = predict(e.members[0], x);
  for (int c = 0; c < 3; ++c)
    CHECK(pe.at({c}) == doctest::Approx(p0.at({c})).epsilon(1e-12));
}

TEST_CASE("mean of one-hot members splits mass evenly") {
  Rng rng(6);
  Ensemble e = make_ensemble(2, "mlp", {4}, 3, 6, rng);
  for (auto& m : e.members)
    for (auto& [name, t] : m.params) zero_fill(t);
  e.members[0].param("cls.b").raw_data()[0] = 50.0;
  e.members[1].param("cls.b").raw_data()[1] = 50.0;
  Tensor p = ensemble_predict(e, uniform({4}, -1, 1, rng));
  CHECK(p.at({0}) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(p.at({1}) == doctest::Approx(0.5).epsilon(1e-9));
  for (int c = 2; c < 6; ++c) CHECK(p.at({c}) < 1e-9);
}

TEST_CASE("ensemble mean matches per-member recomputation") {
  Rng rng(7);
  Ensemble e = make_ensemble(3, "mlp", {5}, 4, 4, rng);
  Tensor x = uniform({5}, -1, 1, rng);
  Tensor pe = ensemble_predict(e, x);
  double s = 0;
  for (int c = 0; c < 4; ++c) {
    double want = 0;
    for (const auto& m : e.members) want += predict(m, x).at({c});
    want /= 3.0;
    CHECK(pe.at({c}) == doctest::Approx(want).epsilon(1e-12));
    s += pe.at({c});
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ensemble_predict is invariant to member order") {
  Rng rng(8);
  Ensemble e = make_ensemble(4, "mlp", {5}, 4, 3, rng);
  Tensor x = uniform({5}, -1, 1, rng);
  Tensor before = ensemble_predict(e, x);
  std::rotate(e.members.begin(), e.members.begin() + 2, e.members.end());
  std::swap(e.members[0], e.members[1]);
  Tensor after = ensemble_predict(e, x);
  for (int c = 0; c < 3; ++c)
    CHECK(before.at({c}) == doctest::Approx(after.at({c})).epsilon(1e-12));
}

TEST_CASE("model construction and input validation errors") {
  Rng rng(9);
  CHECK_THROWS_AS(make_ensemble(1, "mlp", {4}, 3, 3, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_submodel("resnet", {784}, 64, 10, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_cnn_small(1, 8, 8, 4, 3, rng), std::invalid_argument);
  SubModel m = make_mlp(6, 8, 4, 3, rng);
  CHECK_THROWS_AS(encode(m, ones({5})), std::invalid_argument);
  CHECK_THROWS_AS(encode(m, ones({2, 5})), std::invalid_argument);
  CHECK_THROWS_AS(m.param("nope"), std::out_of_range);
  CHECK_THROWS_AS(one_hot({3}, 3), std::out_of_range);
  Ensemble empty;
  CHECK_THROWS_AS(ensemble_predict(empty, ones({6})), std::invalid_argument);
}

TEST_CASE("one_hot builds exact indicator rows") {
  Tensor y = one_hot({2, 0}, 4);
  REQUIRE(y.shape() == Shape{2, 4});
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(y.at({r, c}) == ((r == 0 && c == 2) || (r == 1 && c == 0) ? 1.0 : 0.0));
}

TEST_SUITE_END();
