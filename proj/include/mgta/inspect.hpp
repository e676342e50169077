#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgta/model.hpp"

namespace mgta {

inline const std::vector<std::string> kInspectSelectors = {"bev", "motion", "offsets", "attention",
                                                           "heatmap"};

/// 8-bit binary PGM of a [H, W] map (or the per-channel mean of [C, H, W]),
/// min-max scaled; a constant map becomes uniform 128.
void write_pgm(const std::filesystem::path& path, const Tensor& map);
Tensor channel_mean(const Tensor& x);

struct InspectOutput {
  std::vector<std::filesystem::path> images;
  std::filesystem::path tensors;  // all raw tensors of the selector, one file
};

/// Runs the model on the sequence keyframe and dumps the selected layer.
/// Unknown selectors and selectors the model does not have (motion/offsets
/// without MGDA, attention without STFA) throw ConfigError.
InspectOutput inspect(ParamStore& store, const ModelConfig& model, const Sequence& raw,
                      const std::string& selector, const std::filesystem::path& out_dir);

}  // namespace mgta
