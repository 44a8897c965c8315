#include "cldl/diversity.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cldl {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kNormSqFloor = 1e-24;

Tensor as_prob_rows(const Tensor& t, const char* what) {
  if (t.rank() == 1) return reshape(t, {1, t.shape()[0]});
  if (t.rank() == 2) return t;
  throw std::invalid_argument(std::string(what) + ": expected a vector or rows, got " +
                              shape_str(t.shape()));
}

// sum_k p_k log(p_k / m_k) per row with the shared clamp floor.
Tensor kl_rows_to(const Tensor& p, const Tensor& m) {
  return sum(mul(p, sub(log(clamp_min(p, kProbFloor)),
                        log(clamp_min(m, kProbFloor)))),
             1, false);
}

Tensor renormalize_rows(const Tensor& t) {
  return div(t, clamp_min(sum(t, 1, true), kProbFloor));
}

// Flattens an input-gradient tensor to B x D rows; a bare vector is one row.
Tensor as_grad_rows(const Tensor& g) {
  if (g.rank() == 1) return reshape(g, {1, g.shape()[0]});
  int64_t b = g.shape()[0];
  return reshape(g, {b, g.size() / b});
}

}  // namespace

Tensor truncate_sld_rows(const Tensor& s, const std::vector<int64_t>& ys) {
  Tensor rows = as_prob_rows(s, "truncate_sld");
  int64_t b = rows.shape()[0], c = rows.shape()[1];
  if (c < 2)
    throw std::invalid_argument("truncate_sld: need at least 2 classes, got " +
                                std::to_string(c));
  if (static_cast<int64_t>(ys.size()) != b)
    throw std::invalid_argument("truncate_sld: " + std::to_string(ys.size()) +
                                " labels for " + std::to_string(b) + " rows");
  std::vector<int64_t> cols;
  cols.reserve(b * (c - 1));
  for (int64_t r = 0; r < b; ++r) {
    if (ys[r] < 0 || ys[r] >= c)
      throw std::out_of_range("truncate_sld: class " + std::to_string(ys[r]) +
                              " out of range [0, " + std::to_string(c) + ")");
    for (int64_t j = 0; j < c; ++j)
      if (j != ys[r]) cols.push_back(j);
  }
  return renormalize_rows(gather_cols(rows, cols, c - 1));
}

Tensor truncate_sld(const Tensor& s, int64_t y) {
  if (s.rank() != 1)
    throw std::invalid_argument("truncate_sld: expected a vector, got " +
                                shape_str(s.shape()));
  Tensor rows = truncate_sld_rows(s, {y});
  return reshape(rows, {rows.shape()[1]});
}

Tensor jsd_rows(const Tensor& p, const Tensor& q) {
  Tensor pr = as_prob_rows(p, "jsd");
  Tensor qr = as_prob_rows(q, "jsd");
  if (pr.shape() != qr.shape())
    throw std::invalid_argument("jsd: shapes " + shape_str(p.shape()) +
                                " and " + shape_str(q.shape()) + " differ");
  Tensor m = mul(add(pr, qr), scalar(0.5));
  return mul(add(kl_rows_to(pr, m), kl_rows_to(qr, m)), scalar(0.5));
}

Tensor jsd(const Tensor& p, const Tensor& q) {
  if (p.rank() != 1 || q.rank() != 1)
    throw std::invalid_argument("jsd: expected vectors, got " +
                                shape_str(p.shape()) + " and " +
                                shape_str(q.shape()));
  return sum(jsd_rows(p, q));
}

Tensor label_diversity_loss(std::span<const Tensor> truncated_slds) {
  size_t n = truncated_slds.size();
  if (n < 2)
    throw std::invalid_argument("label_diversity_loss: need at least 2 members, got " +
                                std::to_string(n));
  Tensor acc;  // rows of summed exp(JSD) over pairs
  int64_t pairs = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      Tensor e = exp(jsd_rows(truncated_slds[i], truncated_slds[j]));
      acc = acc.defined() ? add(acc, e) : e;
      ++pairs;
    }
  Tensor lme = log(clamp_min(div(acc, scalar(static_cast<double>(pairs))),
                             kProbFloor));
  return mean(lme);
}

Tensor gradient_alignment_loss(std::span<const Tensor> grads) {
  size_t n = grads.size();
  if (n < 2)
    throw std::invalid_argument(
        "gradient_alignment_loss: need at least 2 gradients, got " +
        std::to_string(n));
  std::vector<Tensor> rows;
  std::vector<Tensor> norms;
  rows.reserve(n);
  norms.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Tensor r = as_grad_rows(grads[i]);
    if (!rows.empty() && r.shape() != rows.front().shape())
      throw std::invalid_argument(
          "gradient_alignment_loss: gradient shapes disagree");
    Tensor sumsq = sum(mul(r, r), 1, true);
    for (double v : sumsq.data())
      if (v < kNormSqFloor) {
        std::fprintf(stderr,
                     "warning: gradient_alignment_loss: zero-norm gradient for "
                     "member %zu, clamping\n",
                     i);
        break;
      }
    rows.push_back(r);
    norms.push_back(sqrt(clamp_min(sumsq, kNormSqFloor)));
  }
  Tensor acc;
  int64_t pairs = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      Tensor dot = sum(mul(rows[i], rows[j]), 1, true);
      Tensor cos = div(dot, mul(norms[i], norms[j]));
      acc = acc.defined() ? add(acc, abs(cos)) : abs(cos);
      ++pairs;
    }
  return mean(div(acc, scalar(static_cast<double>(pairs))));
}

EnsembleLossReport total_loss(const Tensor& x, const std::vector<int64_t>& labels,
                              const Ensemble& ensemble,
                              const LabelConfusionModel& lcm,
                              const DiversityWeights& weights) {
  if (labels.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (weights.alpha < 0 || weights.beta < 0)
    throw std::invalid_argument("total_loss: negative diversity weight");
  int64_t n = ensemble.size();
  if (n < 2) throw std::invalid_argument("total_loss: need at least 2 members");
  int64_t b = static_cast<int64_t>(labels.size());
  if (x.shape().empty() || x.shape()[0] != b)
    throw std::invalid_argument("total_loss: batch of " + std::to_string(b) +
                                " labels but input shape " +
                                shape_str(x.shape()));

  // Fresh leaf so per-example input gradients exist regardless of where the
  // batch came from.
  Tensor xin = x.detach();
  xin.set_requires_grad(true);
  Tensor y = one_hot(labels, lcm.n_classes);

  EnsembleLossReport report;
  std::vector<Tensor> kl_per_example;  // member -> B rows
  std::vector<Tensor> truncated;       // member -> B x (C-1)
  kl_per_example.reserve(n);
  truncated.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    const SubModel& m = ensemble.members[i];
    Tensor v = encode(m, xin);
    Tensor p = classify(m, v);
    SoftLabel sl = simulated_label_distribution(lcm, v, y, i);
    Tensor kl = kl_rows(sl.sld, p);
    kl_per_example.push_back(kl);
    truncated.push_back(truncate_sld_rows(sl.sld, labels));
    report.per_model_kl.push_back(mean(kl));
  }

  Tensor kl_acc = report.per_model_kl[0];
  for (int64_t i = 1; i < n; ++i) kl_acc = add(kl_acc, report.per_model_kl[i]);
  report.mean_kl = div(kl_acc, scalar(static_cast<double>(n)));

  report.label_diversity = label_diversity_loss(truncated);

  // Per-example input gradients, one backward per member. Summing the
  // per-example KL first is exact because examples do not interact.
  std::vector<Tensor> grads;
  grads.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    GradMap gm = backward(sum(kl_per_example[i]), std::array{xin}, true);
    grads.push_back(gm.at(xin));
  }
  report.gradient_alignment = gradient_alignment_loss(grads);

  report.total = add(sub(report.mean_kl,
                         mul(scalar(weights.alpha), report.label_diversity)),
                     mul(scalar(weights.beta), report.gradient_alignment));
  return report;
}

}  // namespace cldl
