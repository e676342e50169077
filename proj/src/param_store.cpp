#include "mgta/param_store.hpp"

#include <cmath>

#include "mgta/errors.hpp"

namespace mgta {

Parameter& ParamStore::add(const std::string& name, Shape shape, Init init, std::size_t fan_in) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.value = Tensor(shape, 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      p.value.fill(1.0);
      break;
    case Init::kUniformFanIn: {
      if (fan_in == 0) throw ConfigError("fan_in required for uniform init of " + name);
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (auto& v : p.value.data()) v = rng_.uniform(-bound, bound);
      break;
    }
  }
  p.grad = Tensor(shape, 0.0);
  p.m = Tensor(shape, 0.0);
  p.v = Tensor(shape, 0.0);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParamStore::add_constant(const std::string& name, Shape shape, double value) {
  auto& p = add(name, std::move(shape), Init::kZeros);
  p.value.fill(value);
  return p;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

Parameter& ParamStore::get(const std::string& name) { return params_[index_of(name)]; }
const Parameter& ParamStore::get(const std::string& name) const {
  return params_[index_of(name)];
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

bool ParamStore::identical(const ParamStore& other) const {
  if (params_.size() != other.params_.size() || step_ != other.step_) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || !a.value.identical(b.value) || !a.grad.identical(b.grad) ||
        !a.m.identical(b.m) || !a.v.identical(b.v)) {
      return false;
    }
  }
  return true;
}

}  // namespace mgta
