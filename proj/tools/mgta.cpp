// mgta gen|train|eval|inspect --config <path> [--seed N] [--out <dir>]
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mgta/checkpoint.hpp"
#include "mgta/config.hpp"
#include "mgta/errors.hpp"
#include "mgta/inspect.hpp"
#include "mgta/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mgta;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the seed");
  cmd->add_option("--out", c.out, "output directory");
}

ParamStore load_model(const RunConfig& cfg, const std::string& checkpoint) {
  ParamStore store(derive_seed(cfg.train.seed, 2));
  register_model(store, cfg.model);
  if (!checkpoint.empty()) {
    LoadReport r = load_checkpoint(checkpoint, store);
    if (!r.fresh.empty()) {
      throw DataError("checkpoint " + checkpoint + " lacks " + std::to_string(r.fresh.size()) +
                      " parameters of this model, first: " + r.fresh.front());
    }
  }
  return store;
}

int cmd_gen(const Common& c, std::optional<std::size_t> count) {
  RunConfig cfg = load_config(c.config);
  const std::uint64_t seed = c.seed.value_or(cfg.data.seed);
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.dataset) : fs::path(c.out);
  const std::size_t train = count.value_or(cfg.data.train_count);
  const std::size_t test = count ? 0 : cfg.data.test_count;
  DatasetSplits s = generate_dataset(out, cfg.scene, seed, train, test);
  std::cout << "wrote " << s.train.size() << " train and " << s.test.size() << " test sequences to "
            << out.string() << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& init) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.train.seed = *c.seed;
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.out) : fs::path(c.out);
  Dataset train = load_split(cfg.paths.dataset, "train");
  std::optional<fs::path> stage1;
  if (!init.empty()) stage1 = init;
  TrainReport r = train_run(cfg, train, out, stage1, &std::cout);
  std::cout << "trained " << r.steps << " steps, loss " << r.first_loss << " -> " << r.last_loss
            << "\ncheckpoint " << r.stage2_checkpoint.string() << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& split) {
  RunConfig cfg = load_config(c.config);
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.out) : fs::path(c.out);
  ParamStore store = load_model(cfg, checkpoint);
  Dataset data = load_split(cfg.paths.dataset, split);
  fs::create_directories(out);
  std::ofstream dets(out / "detections.jsonl", std::ios::binary);
  if (!dets) throw DataError("cannot write " + (out / "detections.jsonl").string());
  const auto names = class_names(cfg.scene);
  EvalReport r = evaluate(store, cfg.model, data, &dets, names);
  const std::string metrics = metrics_json(r, names);
  write_text(out / "metrics.json", metrics);
  write_text(out / "latency.json", latency_json(r));
  std::cout << metrics;
  return 0;
}

int cmd_inspect(const Common& c, const std::string& checkpoint, const std::string& sequence,
                const std::string& layer) {
  RunConfig cfg = load_config(c.config);
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.out) / "inspect" : fs::path(c.out);
  ParamStore store = load_model(cfg, checkpoint);
  InspectOutput r = inspect(store, cfg.model, read_sequence(sequence), layer, out);
  std::cout << "wrote " << r.images.size() << " images and " << r.tensors.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal LiDAR detection toolkit"};
  app.require_subcommand(1);
  Common common;
  std::optional<std::size_t> count;
  std::string init, checkpoint, split = "test", sequence, layer;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--count", count, "number of sequences (single train split)");

  CLI::App* train = app.add_subcommand("train", "two-stage training");
  add_common(train, common);
  train->add_option("--init", init, "stage-1 checkpoint; skips stage 1");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "model parameters")->required();
  eval->add_option("--split", split, "train or test");

  CLI::App* insp = app.add_subcommand("inspect", "dump intermediate maps");
  add_common(insp, common);
  insp->add_option("--checkpoint", checkpoint, "model parameters (default: initial weights)");
  insp->add_option("--sequence", sequence, "sequence directory")->required();
  insp->add_option("--layer", layer, "bev, motion, offsets, attention or heatmap")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(common, count);
    if (train->parsed()) return cmd_train(common, init);
    if (eval->parsed()) return cmd_eval(common, checkpoint, split);
    return cmd_inspect(common, checkpoint, sequence, layer);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const TrainingError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}
