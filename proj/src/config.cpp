#include "mgta/config.hpp"

#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"
#include "mgta/errors.hpp"

namespace mgta {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

const json kEmpty = json::object();

template <class T>
void read_value(const json& j, const std::string& path, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError(path + ": expected a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
    out = j.get<T>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
    out = j.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError(path + ": expected a number");
    out = j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw ConfigError(path + ": expected a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::array<double, 3>>) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(path + ": expected 3 numbers");
    for (std::size_t i = 0; i < 3; ++i) read_value(j[i], path + "[" + std::to_string(i) + "]", out[i]);
  } else if constexpr (std::is_same_v<T, std::vector<bool>>) {
    if (!j.is_array()) throw ConfigError(path + ": expected an array of booleans");
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
      bool b = false;
      read_value(j[i], path + "[" + std::to_string(i) + "]", b);
      out.push_back(b);
    }
  } else {
    static_assert(sizeof(T) == 0, "unsupported config field type");
  }
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  Reader& get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it != j_.end()) read_value(*it, path_ + "." + key, out);
    return *this;
  }

  Reader child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return Reader(it == j_.end() ? kEmpty : *it, path_ + "." + key);
  }

  const json* array(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    if (!it->is_array()) throw ConfigError(path_ + "." + key + ": expected an array");
    return &*it;
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_scene(Reader r, SceneSpec& s) {
  r.get("frames", s.frames).get("scans", s.scans).get("range", s.range).get("ground_z", s.ground_z);
  r.get("ground_points", s.ground_points).get("point_density", s.point_density).get("noise", s.noise);
  r.get("ego_vx", s.ego_vx).get("ego_yaw_rate", s.ego_yaw_rate);
  r.get("random_objects", s.random_objects).get("min_objects", s.min_objects);
  r.get("max_objects", s.max_objects).get("moving_fraction", s.moving_fraction);
  r.get("min_speed", s.min_speed).get("max_speed", s.max_speed);
  r.get("occluded_fraction", s.occluded_fraction).get("margin", s.margin);
  if (const json* classes = r.array("classes")) {
    s.classes.clear();
    for (std::size_t i = 0; i < classes->size(); ++i) {
      Reader c((*classes)[i], r.path() + ".classes[" + std::to_string(i) + "]");
      ClassSpec cs;
      c.get("name", cs.name).get("l", cs.l).get("w", cs.w).get("h", cs.h).get("reflectance", cs.reflectance);
      c.finish();
      s.classes.push_back(cs);
    }
  }
  if (const json* objects = r.array("objects")) {
    s.objects.clear();
    for (std::size_t i = 0; i < objects->size(); ++i) {
      Reader o((*objects)[i], r.path() + ".objects[" + std::to_string(i) + "]");
      ObjectSpec os;
      o.get("class", os.class_id).get("x", os.x).get("y", os.y).get("yaw", os.yaw);
      o.get("vx", os.vx).get("vy", os.vy).get("yaw_rate", os.yaw_rate);
      o.get("density_scale", os.density_scale).get("hidden", os.hidden);
      o.finish();
      s.objects.push_back(os);
    }
  }
  r.finish();
}

void read_model(Reader r, ModelConfig& m) {
  Reader g = r.child("grid");
  g.get("min", m.grid.min).get("max", m.grid.max).get("size", m.grid.size);
  g.get("max_points_per_scan", m.grid.max_points_per_scan).get("max_voxels", m.grid.max_voxels);
  g.finish();
  Reader e = r.child("encoder");
  e.get("c_q", m.encoder.c_q).get("c_m", m.encoder.c_m).get("c_b", m.encoder.c_b);
  e.get("smvfe", m.encoder.smvfe).get("occupancy_channel", m.encoder.occupancy_channel);
  e.finish();
  r.get("channels", m.channels).get("frames", m.frames).get("align", m.align);
  std::string agg = to_string(m.aggregation);
  r.get("aggregation", agg);
  m.aggregation = parse_aggregation(agg);
  Reader s = r.child("stfa");
  s.get("heads", m.stfa.heads).get("points", m.stfa.points).get("layers", m.stfa.layers);
  s.get("ffn_hidden", m.stfa.ffn_hidden).get("dropout", m.stfa.dropout);
  s.get("joint_softmax", m.stfa.joint_softmax).get("ffn_residual", m.stfa.ffn_residual);
  s.finish();
  Reader h = r.child("head");
  h.get("top_k", m.head.top_k).get("score_threshold", m.head.score_threshold);
  h.get("min_radius", m.head.min_radius).get("heatmap_weight", m.head.heatmap_weight);
  h.get("regression_weight", m.head.regression_weight);
  h.finish();
  r.finish();
}

void read_train(Reader r, TrainConfig& t) {
  r.get("stage1_epochs", t.stage1_epochs).get("stage2_epochs", t.stage2_epochs).get("lr", t.lr);
  r.get("stage2_lr_divisor", t.stage2_lr_divisor).get("batch", t.batch);
  r.get("grad_clip", t.grad_clip).get("seed", t.seed);
  Reader a = r.child("augment");
  a.get("enabled", t.augment.enabled).get("gt_sampling", t.augment.gt_sampling);
  a.get("max_paste", t.augment.max_paste);
  a.get("max_rotation", t.augment.similarity.max_rotation);
  a.get("min_scale", t.augment.similarity.min_scale).get("max_scale", t.augment.similarity.max_scale);
  a.get("flip_probability", t.augment.similarity.flip_probability);
  a.finish();
  r.finish();
}

ordered to_json(const RunConfig& c) {
  ordered scene;
  const SceneSpec& s = c.scene;
  scene["frames"] = s.frames;
  scene["scans"] = s.scans;
  scene["range"] = s.range;
  scene["ground_z"] = s.ground_z;
  scene["ground_points"] = s.ground_points;
  scene["point_density"] = s.point_density;
  scene["noise"] = s.noise;
  scene["ego_vx"] = s.ego_vx;
  scene["ego_yaw_rate"] = s.ego_yaw_rate;
  scene["classes"] = ordered::array();
  for (const ClassSpec& cs : s.classes) {
    scene["classes"].push_back(
        ordered{{"name", cs.name}, {"l", cs.l}, {"w", cs.w}, {"h", cs.h}, {"reflectance", cs.reflectance}});
  }
  scene["objects"] = ordered::array();
  for (const ObjectSpec& o : s.objects) {
    scene["objects"].push_back(ordered{{"class", o.class_id}, {"x", o.x}, {"y", o.y}, {"yaw", o.yaw},
                                       {"vx", o.vx}, {"vy", o.vy}, {"yaw_rate", o.yaw_rate},
                                       {"density_scale", o.density_scale}, {"hidden", o.hidden}});
  }
  scene["random_objects"] = s.random_objects;
  scene["min_objects"] = s.min_objects;
  scene["max_objects"] = s.max_objects;
  scene["moving_fraction"] = s.moving_fraction;
  scene["min_speed"] = s.min_speed;
  scene["max_speed"] = s.max_speed;
  scene["occluded_fraction"] = s.occluded_fraction;
  scene["margin"] = s.margin;

  const ModelConfig& m = c.model;
  ordered model;
  model["grid"] = ordered{{"min", m.grid.min},
                          {"max", m.grid.max},
                          {"size", m.grid.size},
                          {"max_points_per_scan", m.grid.max_points_per_scan},
                          {"max_voxels", m.grid.max_voxels}};
  model["encoder"] = ordered{{"c_q", m.encoder.c_q},
                             {"c_m", m.encoder.c_m},
                             {"c_b", m.encoder.c_b},
                             {"smvfe", m.encoder.smvfe},
                             {"occupancy_channel", m.encoder.occupancy_channel}};
  model["channels"] = m.channels;
  model["frames"] = m.frames;
  model["aggregation"] = to_string(m.aggregation);
  model["align"] = m.align;
  model["stfa"] = ordered{{"heads", m.stfa.heads},
                          {"points", m.stfa.points},
                          {"layers", m.stfa.layers},
                          {"ffn_hidden", m.stfa.ffn_hidden},
                          {"dropout", m.stfa.dropout},
                          {"joint_softmax", m.stfa.joint_softmax},
                          {"ffn_residual", m.stfa.ffn_residual}};
  model["head"] = ordered{{"top_k", m.head.top_k},
                          {"score_threshold", m.head.score_threshold},
                          {"min_radius", m.head.min_radius},
                          {"heatmap_weight", m.head.heatmap_weight},
                          {"regression_weight", m.head.regression_weight}};

  const TrainConfig& t = c.train;
  ordered train;
  train["stage1_epochs"] = t.stage1_epochs;
  train["stage2_epochs"] = t.stage2_epochs;
  train["lr"] = t.lr;
  train["stage2_lr_divisor"] = t.stage2_lr_divisor;
  train["batch"] = t.batch;
  train["grad_clip"] = t.grad_clip;
  train["seed"] = t.seed;
  train["augment"] = ordered{{"enabled", t.augment.enabled},
                             {"gt_sampling", t.augment.gt_sampling},
                             {"max_paste", t.augment.max_paste},
                             {"max_rotation", t.augment.similarity.max_rotation},
                             {"min_scale", t.augment.similarity.min_scale},
                             {"max_scale", t.augment.similarity.max_scale},
                             {"flip_probability", t.augment.similarity.flip_probability}};

  ordered out;
  out["scene"] = scene;
  out["data"] = ordered{{"train_count", c.data.train_count},
                        {"test_count", c.data.test_count},
                        {"seed", c.data.seed}};
  out["model"] = model;
  out["train"] = train;
  out["paths"] = ordered{{"dataset", c.paths.dataset}, {"out", c.paths.out}};
  return out;
}

}  // namespace

void RunConfig::validate() const {
  validate_scene_spec(scene);
  model.validate();
  if (model.head.num_classes != scene.classes.size()) {
    throw ConfigError("head has " + std::to_string(model.head.num_classes) + " classes, scene has " +
                      std::to_string(scene.classes.size()));
  }
  if (model.scans != scene.scans) {
    throw ConfigError("model.scans follows scene.scans; got " + std::to_string(model.scans) +
                      " vs " + std::to_string(scene.scans));
  }
  if (model.frames > scene.frames) {
    throw ConfigError("model.frames (" + std::to_string(model.frames) + ") exceeds scene.frames (" +
                      std::to_string(scene.frames) + ")");
  }
  if (train.lr <= 0.0) throw ConfigError("train.lr must be positive");
  if (train.stage2_lr_divisor <= 0.0) throw ConfigError("train.stage2_lr_divisor must be positive");
  if (train.batch == 0) throw ConfigError("train.batch must be >= 1");
  if (train.grad_clip <= 0.0) throw ConfigError("train.grad_clip must be positive");
  const AugmentParams& a = train.augment.similarity;
  if (a.max_rotation < 0.0 || a.min_scale <= 0.0 || a.min_scale > a.max_scale ||
      a.flip_probability < 0.0 || a.flip_probability > 1.0) {
    throw ConfigError("train.augment: invalid similarity ranges");
  }
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Reader root(j, "config");
  read_scene(root.child("scene"), c.scene);
  Reader d = root.child("data");
  d.get("train_count", c.data.train_count).get("test_count", c.data.test_count).get("seed", c.data.seed);
  d.finish();
  read_model(root.child("model"), c.model);
  read_train(root.child("train"), c.train);
  Reader p = root.child("paths");
  p.get("dataset", c.paths.dataset).get("out", c.paths.out);
  p.finish();
  root.finish();
  c.model.scans = c.scene.scans;
  c.model.head.num_classes = c.scene.classes.size();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_to_string(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write config " + path.string());
  out << config_to_string(cfg);
  if (!out) throw DataError("failed writing config " + path.string());
}

}  // namespace mgta
