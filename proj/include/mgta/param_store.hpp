#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mgta/rng.hpp"
#include "mgta/tensor.hpp"

namespace mgta {

enum class Init {
  kZeros,
  kOnes,
  kUniformFanIn,  // U(-sqrt(1/fan_in), +sqrt(1/fan_in))
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Adam moments.
  Tensor m;
  Tensor v;
};

/// Registry of named learnable tensors. Iteration follows registration order;
/// initialization draws from one seeded stream in that order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // fan_in is required for kUniformFanIn.
  Parameter& add(const std::string& name, Shape shape, Init init, std::size_t fan_in = 0);
  Parameter& add_constant(const std::string& name, Shape shape, double value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  std::vector<std::string> names() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  bool identical(const ParamStore& other) const;

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

}  // namespace mgta
