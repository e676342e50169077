#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mgta/checkpoint.hpp"
#include "mgta/config.hpp"
#include "mgta/detection.hpp"
#include "mgta/model.hpp"

namespace mgta {

// ---- dataset --------------------------------------------------------------

struct Dataset {
  std::vector<std::string> names;
  std::vector<Sequence> sequences;  // raw (not ego-aligned)
};

struct DatasetSplits {
  std::vector<std::string> train, test;
};

/// Writes <out>/manifest.json plus one sequence directory per entry
/// (train/s000, ..., test/s000, ...). Sequence i of a split uses a seed
/// derived from (seed, split, i), so output depends only on the arguments.
DatasetSplits generate_dataset(const std::filesystem::path& out, const SceneSpec& spec,
                               std::uint64_t seed, std::size_t train_count,
                               std::size_t test_count);

DatasetSplits read_dataset_manifest(const std::filesystem::path& dir);
Dataset load_split(const std::filesystem::path& dir, const std::string& split);

// ---- training -------------------------------------------------------------

struct StepLog {
  std::size_t stage = 0, epoch = 0, step = 0;
  double lr = 0, loss = 0, heatmap = 0, offset = 0, z = 0, size = 0, yaw = 0, grad_norm = 0;
};

inline constexpr char kLossCsvHeader[] = "stage,epoch,step,lr,loss,heatmap,offset,z,size,yaw,grad_norm";

/// Per-sample training input: augmentation (GT sampling, then the global
/// similarity), alignment and voxelization, all seeded from `seed`.
std::vector<VoxelInputs> training_sample(const Sequence& raw, const DonorBank& bank,
                                         const ModelConfig& model, const TrainConfig& train,
                                         double range, std::uint64_t seed, Sequence* aligned_out);

struct StageOptions {
  std::size_t stage = 1;
  std::size_t epochs = 0;
  double max_lr = 0;
  // Called after every optimizer step; rows also go to `csv` when set.
  std::ostream* csv = nullptr;
  std::function<void(const StepLog&)> on_step;
};

/// One training stage with Adam and a one-cycle schedule over all steps.
/// A non-finite loss or gradient throws (NumericError / TrainingError)
/// without touching files.
void train_stage(ParamStore& store, const ModelConfig& model, const TrainConfig& train,
                 const Dataset& data, double range, const StageOptions& opt);

struct TrainReport {
  std::filesystem::path stage1_checkpoint, stage2_checkpoint;
  LoadReport stage2_init;
  double first_loss = 0, last_loss = 0;
  std::size_t steps = 0;
};

/// Stage 1 trains the single-frame model; stage 2 builds the configured model,
/// loads every matching parameter from stage 1 and fine-tunes at lr/divisor.
/// With `stage1_init` stage 1 is skipped and stage 2 starts from that file.
/// Writes stage1.ckpt, stage2.ckpt and loss.csv under out_dir.
TrainReport train_run(const RunConfig& cfg, const Dataset& data,
                      const std::filesystem::path& out_dir,
                      const std::optional<std::filesystem::path>& stage1_init = std::nullopt,
                      std::ostream* log = nullptr);

// ---- evaluation -----------------------------------------------------------

struct EvalReport {
  std::size_t scenes = 0;
  ApResult all;
  ApResult occluded;  // only GTs hidden at the keyframe count
  ApResult moving;    // only GTs with speed above 0.5 m/s count
  std::vector<double> latency_ms;  // per-scene forward + decode time
};

/// Runs the model on each sequence's keyframe. Voxel subsampling uses a seed
/// derived from the scene index, so repeated evaluations are identical.
EvalReport evaluate(ParamStore& store, const ModelConfig& model, const Dataset& data,
                    std::ostream* detections_jsonl = nullptr,
                    const std::vector<std::string>& class_names = {});

/// Deterministic metrics document (no timings).
std::string metrics_json(const EvalReport& r, const std::vector<std::string>& class_names);
/// Timing document kept apart from the metrics so the metrics stay reproducible.
std::string latency_json(const EvalReport& r);

std::vector<std::string> class_names(const SceneSpec& spec);

}  // namespace mgta
