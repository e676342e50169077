#include "mgta/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mgta/errors.hpp"
#include "mgta/optim.hpp"
#include "mgta/parallel.hpp"
#include "mgta/rng.hpp"

namespace mgta {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

constexpr char kDatasetFormat[] = "mgta-dataset";
constexpr int kDatasetVersion = 1;

std::string sequence_name(const std::string& split, std::size_t i) {
  std::ostringstream ss;
  ss << split << "/s" << std::setw(3) << std::setfill('0') << i;
  return ss.str();
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
  return p;
}

}  // namespace

DatasetSplits generate_dataset(const fs::path& out, const SceneSpec& spec, std::uint64_t seed,
                               std::size_t train_count, std::size_t test_count) {
  validate_scene_spec(spec);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create dataset directory " + out.string() + ": " + ec.message());
  DatasetSplits splits;
  const std::pair<const char*, std::size_t> parts[2] = {{"train", train_count}, {"test", test_count}};
  for (std::size_t s = 0; s < 2; ++s) {
    auto& names = s == 0 ? splits.train : splits.test;
    for (std::size_t i = 0; i < parts[s].second; ++i) names.push_back(sequence_name(parts[s].first, i));
    if (!names.empty()) fs::create_directories(out / parts[s].first, ec);
    if (ec) throw DataError("cannot create " + (out / parts[s].first).string() + ": " + ec.message());
    parallel_for(names.size(), [&](std::size_t i) {
      write_sequence(out / names[i], generate_scene(spec, derive_seed(seed, s + 1, i)));
    });
  }
  ordered m;
  m["format"] = kDatasetFormat;
  m["version"] = kDatasetVersion;
  m["seed"] = seed;
  m["train"] = splits.train;
  m["test"] = splits.test;
  std::ofstream f(out / "manifest.json", std::ios::binary);
  if (!f) throw DataError("cannot write " + (out / "manifest.json").string());
  f << m.dump(2) << '\n';
  if (!f) throw DataError("failed writing " + (out / "manifest.json").string());
  return splits;
}

DatasetSplits read_dataset_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset manifest " + path.string());
  try {
    json m = json::parse(in);
    if (m.at("format") != kDatasetFormat) throw DataError(path.string() + ": not an mgta dataset");
    if (m.at("version") != kDatasetVersion) {
      throw DataError(path.string() + ": unsupported dataset version " + m.at("version").dump());
    }
    DatasetSplits s;
    s.train = m.at("train").get<std::vector<std::string>>();
    s.test = m.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Dataset load_split(const fs::path& dir, const std::string& split) {
  const DatasetSplits s = read_dataset_manifest(dir);
  const std::vector<std::string>* names = nullptr;
  if (split == "train") names = &s.train;
  if (split == "test") names = &s.test;
  if (!names) throw ConfigError("unknown split '" + split + "' (expected train or test)");
  Dataset d;
  for (const std::string& n : *names) {
    d.names.push_back(n);
    d.sequences.push_back(read_sequence(dir / n));
  }
  return d;
}

std::vector<VoxelInputs> training_sample(const Sequence& raw, const DonorBank& bank,
                                         const ModelConfig& model, const TrainConfig& train,
                                         double range, std::uint64_t seed,
                                         Sequence* aligned_out) {
  Sequence s = raw;
  if (train.augment.enabled) {
    if (train.augment.gt_sampling && train.augment.max_paste > 0 && !bank.empty()) {
      s = gt_sample_sequence(s, bank, derive_seed(seed, 1), train.augment.max_paste, range);
    }
    s = augment_sequence(s, train.augment.similarity, derive_seed(seed, 2));
  }
  Sequence aligned = align_sequence(s);
  std::vector<VoxelInputs> frames = prepare_frames(aligned, model, derive_seed(seed, 3));
  if (aligned_out) *aligned_out = std::move(aligned);
  return frames;
}

void train_stage(ParamStore& store, const ModelConfig& model, const TrainConfig& train,
                 const Dataset& data, double range, const StageOptions& opt) {
  if (data.sequences.empty()) throw DataError("training split is empty");
  DonorBank bank;
  if (train.augment.enabled && train.augment.gt_sampling) {
    for (const Sequence& s : data.sequences) {
      DonorBank b = build_donor_bank(align_sequence(s));
      bank.insert(bank.end(), b.begin(), b.end());
    }
  }
  const std::size_t n = data.sequences.size();
  const std::size_t per_epoch = (n + train.batch - 1) / train.batch;
  const std::size_t total = per_epoch * opt.epochs;
  if (total == 0) return;
  OneCycleLr schedule(opt.max_lr, total);
  AdamConfig adam;
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const std::vector<std::size_t> order = permutation(n, derive_seed(train.seed, opt.stage, epoch, 0x0de5));
    for (std::size_t step = 0; step < per_epoch; ++step, ++global) {
      store.zero_grad();
      const std::size_t begin = step * train.batch, end = std::min(n, begin + train.batch);
      const double weight = 1.0 / static_cast<double>(end - begin);
      StepLog log;
      log.stage = opt.stage;
      log.epoch = epoch;
      log.step = global;
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t idx = order[b];
        const std::uint64_t sample_seed = derive_seed(train.seed, opt.stage, global, idx);
        Sequence aligned;
        std::vector<VoxelInputs> frames = training_sample(data.sequences[idx], bank, model, train,
                                                          range, sample_seed, &aligned);
        const TargetMaps targets = render_targets(aligned.current().boxes, model.grid, model.head);
        Tape tape;
        ForwardOptions fwd;
        fwd.mode = ops::Mode::kTrain;
        fwd.seed = derive_seed(sample_seed, 4);
        ModelOutput out = model_forward(tape, store, model, frames, fwd);
        LossTerms loss = detection_loss(out.head, targets, model.head);
        tape.backward(loss.total, Tensor::scalar(weight));
        log.loss += weight * loss.total.value()[0];
        log.heatmap += weight * loss.heatmap;
        log.offset += weight * loss.offset;
        log.z += weight * loss.z;
        log.size += weight * loss.size;
        log.yaw += weight * loss.yaw;
      }
      log.grad_norm = clip_grad_norm(store, train.grad_clip);
      log.lr = schedule.at(global);
      adam.lr = log.lr;
      adam_step(store, adam);
      if (opt.csv) {
        *opt.csv << log.stage << ',' << log.epoch << ',' << log.step << ',' << std::setprecision(17)
                 << log.lr << ',' << log.loss << ',' << log.heatmap << ',' << log.offset << ','
                 << log.z << ',' << log.size << ',' << log.yaw << ',' << log.grad_norm << '\n';
      }
      if (opt.on_step) opt.on_step(log);
    }
  }
}

TrainReport train_run(const RunConfig& cfg, const Dataset& data, const fs::path& out_dir,
                      const std::optional<fs::path>& stage1_init, std::ostream* log) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  save_config(out_dir / "config.json", cfg);
  std::ofstream csv(out_dir / "loss.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write " + (out_dir / "loss.csv").string());
  csv << kLossCsvHeader << '\n';

  TrainReport report;
  bool first = true;
  auto on_step = [&](const StepLog& s) {
    if (first) report.first_loss = s.loss;
    first = false;
    report.last_loss = s.loss;
    ++report.steps;
  };
  const double range = cfg.scene.range - cfg.scene.margin;

  if (stage1_init) {
    report.stage1_checkpoint = *stage1_init;
  } else {
    const ModelConfig single = cfg.model.single_frame();
    ParamStore store(derive_seed(cfg.train.seed, 1));
    register_model(store, single);
    StageOptions opt{1, cfg.train.stage1_epochs, cfg.train.lr, &csv, on_step};
    train_stage(store, single, cfg.train, data, range, opt);
    report.stage1_checkpoint = out_dir / "stage1.ckpt";
    save_checkpoint(report.stage1_checkpoint, store);
    if (log) *log << "stage 1 done: " << report.steps << " steps, loss " << report.last_loss << '\n';
  }

  ParamStore store(derive_seed(cfg.train.seed, 2));
  register_model(store, cfg.model);
  report.stage2_init = load_checkpoint(report.stage1_checkpoint, store);
  if (log) {
    *log << "stage 2 init: " << report.stage2_init.loaded.size() << " loaded, "
         << report.stage2_init.fresh.size() << " fresh";
    for (const std::string& n : report.stage2_init.fresh) *log << ' ' << n;
    *log << '\n';
  }
  StageOptions opt{2, cfg.train.stage2_epochs, cfg.train.lr / cfg.train.stage2_lr_divisor, &csv,
                   on_step};
  train_stage(store, cfg.model, cfg.train, data, range, opt);
  report.stage2_checkpoint = out_dir / "stage2.ckpt";
  save_checkpoint(report.stage2_checkpoint, store);
  csv.flush();
  if (!csv) throw DataError("failed writing " + (out_dir / "loss.csv").string());
  return report;
}

std::vector<std::string> class_names(const SceneSpec& spec) {
  std::vector<std::string> names;
  for (const ClassSpec& c : spec.classes) names.push_back(c.name);
  return names;
}

EvalReport evaluate(ParamStore& store, const ModelConfig& model, const Dataset& data,
                    std::ostream* detections_jsonl, const std::vector<std::string>& names) {
  EvalReport r;
  r.scenes = data.sequences.size();
  std::vector<EvalFrame> all(r.scenes), occluded(r.scenes), moving(r.scenes);
  std::vector<std::string> jsonl(r.scenes);
  r.latency_ms.resize(r.scenes);
  parallel_for(r.scenes, [&](std::size_t i) {
    const Sequence aligned = align_sequence(data.sequences[i]);
    const std::vector<VoxelInputs> frames = prepare_frames(aligned, model, derive_seed(0xe7a1, i));
    const auto t0 = std::chrono::steady_clock::now();
    Tape tape;
    ModelOutput out = model_forward(tape, store, model, frames);
    EvalFrame f;
    f.detections = decode(to_predictions(out.head), model.grid, model.head);
    r.latency_ms[i] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    f.gt = aligned.current().boxes;
    if (detections_jsonl) {
      std::ostringstream os;
      write_detections_jsonl(os, data.names.at(i), aligned.frames.size() - 1, f.detections, names);
      jsonl[i] = os.str();
    }
    EvalFrame occ = f, mov = f;
    occ.ignore.clear();
    mov.ignore.clear();
    for (const Box& b : f.gt) {
      occ.ignore.push_back(!b.occluded);
      mov.ignore.push_back(std::hypot(b.vx, b.vy) <= 0.5);
    }
    all[i] = std::move(f);
    occluded[i] = std::move(occ);
    moving[i] = std::move(mov);
  });
  if (detections_jsonl) {
    for (const std::string& s : jsonl) *detections_jsonl << s;
  }
  r.all = evaluate_ap(all, model.head.num_classes);
  r.occluded = evaluate_ap(occluded, model.head.num_classes);
  r.moving = evaluate_ap(moving, model.head.num_classes);
  return r;
}

namespace {

ordered ap_json(const ApResult& a, const std::vector<std::string>& names) {
  auto opt = [](const std::optional<double>& v) { return v ? ordered(*v) : ordered(nullptr); };
  ordered out;
  out["map"] = opt(a.map);
  ordered per;
  for (std::size_t c = 0; c < a.ap.size(); ++c) {
    ordered row;
    for (std::size_t t = 0; t < a.thresholds.size(); ++t) {
      std::ostringstream key;
      key << std::fixed << std::setprecision(1) << a.thresholds[t];
      row[key.str()] = opt(a.ap[c][t]);
    }
    per[c < names.size() ? names[c] : std::to_string(c)] = row;
  }
  out["ap"] = per;
  return out;
}

}  // namespace

std::string metrics_json(const EvalReport& r, const std::vector<std::string>& names) {
  ordered m;
  m["empty"] = r.scenes == 0;
  m["scenes"] = r.scenes;
  m["thresholds"] = r.all.thresholds;
  const ordered all = ap_json(r.all, names);
  m["map"] = all["map"];
  m["ap"] = all["ap"];
  m["occluded"] = ap_json(r.occluded, names);
  m["moving"] = ap_json(r.moving, names);
  return m.dump(2) + "\n";
}

std::string latency_json(const EvalReport& r) {
  ordered m;
  m["scenes"] = r.scenes;
  if (r.latency_ms.empty()) {
    m["mean_ms"] = nullptr;
    m["max_ms"] = nullptr;
  } else {
    m["mean_ms"] = std::accumulate(r.latency_ms.begin(), r.latency_ms.end(), 0.0) /
                   static_cast<double>(r.latency_ms.size());
    m["max_ms"] = *std::max_element(r.latency_ms.begin(), r.latency_ms.end());
  }
  return m.dump(2) + "\n";
}

}  // namespace mgta
