#pragma once

#include <cstddef>

#include "mgta/param_store.hpp"

namespace mgta {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update with bias correction over every parameter in the store;
/// increments the store's step counter. Throws TrainingError on a NaN/Inf
/// gradient, naming the parameter, before touching any value.
void adam_step(ParamStore& store, const AdamConfig& cfg);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

/// One-cycle schedule: cosine warm-up from max_lr/div_factor to max_lr over
/// the first pct_start of the steps, then cosine decay to
/// max_lr/(div_factor*final_div_factor).
class OneCycleLr {
 public:
  OneCycleLr(double max_lr, std::size_t total_steps, double pct_start = 0.4,
             double div_factor = 10.0, double final_div_factor = 1e4);
  double at(std::size_t step) const;
  double max_lr() const { return max_lr_; }

 private:
  double max_lr_;
  std::size_t total_;
  double pct_start_;
  double div_;
  double final_div_;
};

}  // namespace mgta
