#include "mgta/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mgta/errors.hpp"

namespace mgta {

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  for (const auto& p : store) {
    if (!p.grad.all_finite()) {
      throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  const std::uint64_t step = store.step() + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (auto& p : store) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p.m[i] / bc1;
      const double vhat = p.v[i] / bc2;
      p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  store.set_step(step);
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store)
    for (double g : p.grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : store)
      for (auto& g : p.grad.data()) g *= s;
  }
  return norm;
}

OneCycleLr::OneCycleLr(double max_lr, std::size_t total_steps, double pct_start,
                       double div_factor, double final_div_factor)
    : max_lr_(max_lr),
      total_(std::max<std::size_t>(total_steps, 1)),
      pct_start_(pct_start),
      div_(div_factor),
      final_div_(final_div_factor) {}

double OneCycleLr::at(std::size_t step) const {
  auto cosine = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  const double start = max_lr_ / div_;
  const double end = start / final_div_;
  const double warm = std::max(1.0, pct_start_ * static_cast<double>(total_));
  const double s = static_cast<double>(std::min(step, total_ - 1));
  if (s < warm) return cosine(start, max_lr_, s / warm);
  const double rest = std::max(1.0, static_cast<double>(total_) - warm);
  return cosine(max_lr_, end, std::min(1.0, (s - warm) / rest));
}

}  // namespace mgta
