#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mgta/geometry.hpp"
#include "mgta/param_store.hpp"
#include "mgta/tape.hpp"
#include "mgta/voxel.hpp"

namespace mgta {

inline constexpr double kHeatmapBiasInit = -2.19;

struct Detection {
  int class_id = 0;
  double x = 0, y = 0, z = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;  // [-pi, pi)
  double score = 0;
};

struct HeadConfig {
  std::size_t num_classes = 2;
  std::size_t top_k = 50;
  double score_threshold = 0.1;
  std::size_t min_radius = 2;  // cells
  double heatmap_weight = 1.0;
  double regression_weight = 0.25;

  bool operator==(const HeadConfig&) const = default;
};

struct HeadOutput {
  Var heatmap;  // [classes, H, W] logits
  Var offset;   // [2, H, W] sub-cell (x, y)
  Var z;        // [1, H, W]
  Var size;     // [3, H, W] log(l, w, h)
  Var yaw;      // [2, H, W] (sin, cos)
};

/// Plain-tensor predictions; heatmap holds probabilities.
struct PredictionMaps {
  Tensor heatmap, offset, z, size, yaw;
};

struct TargetMaps {
  Tensor heatmap;  // [classes, H, W] in [0, 1]
  Tensor offset, z, size, yaw;
  Tensor mask;     // [H, W], 1 at rendered centers
  std::size_t rendered = 0;
  std::size_t skipped = 0;  // centers outside the grid
};

void register_head(ParamStore& store, std::size_t channels, std::size_t num_classes);

/// Shared 3x3 conv + ReLU, then 1x1 branches.
HeadOutput head_forward(Tape& tape, ParamStore& store, Var features);

PredictionMaps to_predictions(const HeadOutput& out);

/// Radius in cells of the Gaussian drawn for a box footprint of l x w cells.
double gaussian_radius(double l_cells, double w_cells, double min_overlap = 0.1);

TargetMaps render_targets(const std::vector<Box>& boxes, const GridConfig& grid,
                          const HeadConfig& cfg);

struct LossTerms {
  Var total;
  double heatmap = 0, offset = 0, z = 0, size = 0, yaw = 0;
};

/// Gaussian focal loss on the heatmap plus weighted L1 on the regression
/// maps at foreground cells. Non-finite totals throw NumericError.
LossTerms detection_loss(const HeadOutput& out, const TargetMaps& targets, const HeadConfig& cfg);

/// Peak picking with a 3x3 window (ties go to the lowest flat index), top-k,
/// then the score threshold.
std::vector<Detection> decode(const PredictionMaps& pred, const GridConfig& grid,
                              const HeadConfig& cfg);

struct EvalFrame {
  std::vector<Detection> detections;
  std::vector<Box> gt;
  // Optional per-GT flag; ignored GTs count neither as positives nor misses,
  // and detections matched to them are dropped.
  std::vector<bool> ignore;
};

struct ApResult {
  std::vector<double> thresholds;
  // ap[class][threshold]; nullopt when the class has no positives.
  std::vector<std::vector<std::optional<double>>> ap;
  std::optional<double> map;  // mean over defined entries
};

inline const std::vector<double> kDefaultDistanceThresholds = {0.5, 1.0};

/// Area under the 101-point interpolated precision/recall curve.
double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall);

ApResult evaluate_ap(const std::vector<EvalFrame>& frames, std::size_t num_classes,
                     const std::vector<double>& thresholds = kDefaultDistanceThresholds);

/// {scene, frame, class, x, y, z, l, w, h, yaw, score}, one object per line.
void write_detections_jsonl(std::ostream& os, const std::string& scene, std::size_t frame,
                            const std::vector<Detection>& dets,
                            const std::vector<std::string>& class_names);

}  // namespace mgta
