#pragma once

// Central finite-difference gradient checker shared by all test binaries.
//
// The function under test may return a tensor of any shape; it is contracted
// to a scalar with a fixed random weighting R so every output element
// contributes: L = sum(R * f(inputs, params)). Analytic gradients of L from
// one backward pass are compared against (L(x+h) - L(x-h)) / 2h for each
// checked element, using
//     rel = |analytic - numeric| / max(|analytic|, |numeric|, floor).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mgta/ops.hpp"
#include "mgta/param_store.hpp"
#include "mgta/rng.hpp"
#include "mgta/tape.hpp"

namespace mgta::testing {

struct GradCheckOptions {
  double step = 1e-5;
  double floor = 1e-6;
  // Elements checked per tensor; 0 checks all of them.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 1234;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[<index>] analytic=... numeric=..."
  std::size_t checked = 0;
};

using Builder = std::function<Var(Tape&, std::span<const Var>)>;

namespace detail {

inline double contracted_loss(const Builder& build, const std::vector<Tensor>& inputs,
                              const Tensor* weights, Tensor* weights_out) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Var out = build(tape, leaves);
  const Tensor& v = out.value();
  double s = 0.0;
  if (weights_out) {
    Rng rng(99);
    *weights_out = Tensor(v.shape());
    for (auto& w : weights_out->data()) w = rng.uniform(-1.0, 1.0);
    weights = weights_out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) s += (*weights)[i] * v[i];
  return s;
}

inline std::vector<std::size_t> pick(std::size_t n, std::size_t max, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (max == 0 || max >= n) return idx;
  for (std::size_t i = 0; i < max; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(max);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Checks gradients w.r.t. every input tensor and, when store is non-null,
/// every parameter in the store (the builder reads parameters via tape.param).
inline GradCheckResult gradcheck(const Builder& build, std::vector<Tensor> inputs,
                                 ParamStore* store, const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  Tensor weights;
  detail::contracted_loss(build, inputs, nullptr, &weights);

  // Analytic pass.
  std::vector<Tensor> input_grads;
  {
    if (store) store->zero_grad();
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Var out = build(tape, leaves);
    Var loss = ops::sum(ops::mul(out, tape.constant(weights)));
    tape.backward(loss);
    for (const auto& l : leaves) input_grads.push_back(tape.grad(l));
  }

  Rng rng(opt.seed);
  auto compare = [&](const std::string& name, std::size_t i, double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++res.checked;
    if (rel > res.max_rel_error || std::isnan(rel)) {
      res.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      res.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
    }
  };

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i : detail::pick(inputs[t].size(), opt.max_per_tensor, rng)) {
      const double orig = inputs[t][i];
      inputs[t][i] = orig + opt.step;
      const double lp = detail::contracted_loss(build, inputs, &weights, nullptr);
      inputs[t][i] = orig - opt.step;
      const double lm = detail::contracted_loss(build, inputs, &weights, nullptr);
      inputs[t][i] = orig;
      compare("input" + std::to_string(t), i, input_grads[t][i], (lp - lm) / (2 * opt.step));
    }
  }
  if (store) {
    for (auto& p : *store) {
      const Tensor analytic = p.grad;
      for (std::size_t i : detail::pick(p.value.size(), opt.max_per_tensor, rng)) {
        const double orig = p.value[i];
        p.value[i] = orig + opt.step;
        const double lp = detail::contracted_loss(build, inputs, &weights, nullptr);
        p.value[i] = orig - opt.step;
        const double lm = detail::contracted_loss(build, inputs, &weights, nullptr);
        p.value[i] = orig;
        compare(p.name, i, analytic[i], (lp - lm) / (2 * opt.step));
      }
    }
  }
  return res;
}

/// Per-parameter-group variant: returns the max relative error for each
/// parameter tensor separately (inputs are not checked).
struct GroupError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline std::vector<GroupError> gradcheck_groups(const Builder& build, ParamStore& store,
                                                const GradCheckOptions& opt = {}) {
  std::vector<Tensor> none;
  Tensor weights;
  detail::contracted_loss(build, none, nullptr, &weights);
  store.zero_grad();
  {
    Tape tape;
    Var out = build(tape, {});
    Var loss = ops::sum(ops::mul(out, tape.constant(weights)));
    tape.backward(loss);
  }
  Rng rng(opt.seed);
  std::vector<GroupError> groups;
  for (auto& p : store) {
    GroupError ge{p.name, 0.0, 0};
    const Tensor analytic = p.grad;
    for (std::size_t i : detail::pick(p.value.size(), opt.max_per_tensor, rng)) {
      const double orig = p.value[i];
      p.value[i] = orig + opt.step;
      const double lp = detail::contracted_loss(build, none, &weights, nullptr);
      p.value[i] = orig - opt.step;
      const double lm = detail::contracted_loss(build, none, &weights, nullptr);
      p.value[i] = orig;
      const double numeric = (lp - lm) / (2 * opt.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
      ge.max_rel_error = std::max(ge.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++ge.checked;
    }
    groups.push_back(ge);
  }
  return groups;
}

/// Overwrites every parameter with U(-scale, scale) so zero-initialized heads
/// do not sit on the kinks of bilinear sampling during a check.
inline void randomize(ParamStore& store, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& p : store)
    for (auto& v : p.value.data()) v = rng.uniform(-scale, scale);
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace mgta::testing
