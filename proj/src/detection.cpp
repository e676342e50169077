#include "mgta/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "mgta/errors.hpp"
#include "mgta/nn.hpp"
#include "mgta/ops.hpp"

namespace mgta {

using nlohmann::json;

void register_head(ParamStore& store, std::size_t channels, std::size_t num_classes) {
  nn::register_conv(store, "head.shared", channels, channels, 3);
  nn::register_conv(store, "head.heatmap", channels, num_classes, 1, Init::kZeros);
  store.get("head.heatmap.bias").value.fill(kHeatmapBiasInit);
  nn::register_conv(store, "head.offset", channels, 2, 1);
  nn::register_conv(store, "head.z", channels, 1, 1);
  nn::register_conv(store, "head.size", channels, 3, 1);
  nn::register_conv(store, "head.yaw", channels, 2, 1);
}

HeadOutput head_forward(Tape& tape, ParamStore& store, Var features) {
  Var shared = ops::relu(nn::conv_same(tape, store, "head.shared", features));
  return {nn::conv_same(tape, store, "head.heatmap", shared),
          nn::conv_same(tape, store, "head.offset", shared),
          nn::conv_same(tape, store, "head.z", shared),
          nn::conv_same(tape, store, "head.size", shared),
          nn::conv_same(tape, store, "head.yaw", shared)};
}

PredictionMaps to_predictions(const HeadOutput& out) {
  Tensor prob = out.heatmap.value();
  for (double& v : prob.data()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return {std::move(prob), out.offset.value(), out.z.value(), out.size.value(), out.yaw.value()};
}

double gaussian_radius(double l_cells, double w_cells, double min_overlap) {
  const double h = l_cells, w = w_cells, o = min_overlap;
  const double b1 = h + w, c1 = w * h * (1 - o) / (1 + o);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;
  const double b2 = 2 * (h + w), c2 = (1 - o) * w * h;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;
  const double a3 = 4 * o, b3 = -2 * o * (h + w), c3 = (o - 1) * w * h;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::min({r1, r2, r3});
}

TargetMaps render_targets(const std::vector<Box>& boxes, const GridConfig& grid,
                          const HeadConfig& cfg) {
  const std::size_t nx = grid.nx(), ny = grid.ny(), nc = cfg.num_classes;
  TargetMaps t{Tensor(Shape{nc, ny, nx}), Tensor(Shape{2, ny, nx}), Tensor(Shape{1, ny, nx}),
               Tensor(Shape{3, ny, nx}), Tensor(Shape{2, ny, nx}), Tensor(Shape{ny, nx})};
  const std::size_t plane = ny * nx;
  for (const Box& b : boxes) {
    if (b.class_id < 0 || static_cast<std::size_t>(b.class_id) >= nc) {
      throw DataError("box class " + std::to_string(b.class_id) + " outside the " +
                      std::to_string(nc) + " head classes");
    }
    const double gx = (b.x - grid.min[0]) / grid.size[0];
    const double gy = (b.y - grid.min[1]) / grid.size[1];
    const double fx = std::floor(gx), fy = std::floor(gy);
    if (fx < 0 || fy < 0 || fx >= static_cast<double>(nx) || fy >= static_cast<double>(ny)) {
      ++t.skipped;
      continue;
    }
    const long cx = static_cast<long>(fx), cy = static_cast<long>(fy);
    const double r = std::max(static_cast<double>(cfg.min_radius),
                              std::floor(gaussian_radius(b.l / grid.size[0], b.w / grid.size[1])));
    const long ri = static_cast<long>(r);
    const double sigma = (2 * r + 1) / 6;
    double* hm = t.heatmap.ptr() + static_cast<std::size_t>(b.class_id) * plane;
    for (long dy = -ri; dy <= ri; ++dy)
      for (long dx = -ri; dx <= ri; ++dx) {
        const long x = cx + dx, y = cy + dy;
        if (x < 0 || y < 0 || x >= static_cast<long>(nx) || y >= static_cast<long>(ny)) continue;
        double g = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2 * sigma * sigma));
        if (g < 1e-7) g = 0.0;
        double& cell = hm[static_cast<std::size_t>(y) * nx + static_cast<std::size_t>(x)];
        cell = std::max(cell, g);
      }
    const std::size_t c = static_cast<std::size_t>(cy) * nx + static_cast<std::size_t>(cx);
    t.offset[c] = gx - fx;
    t.offset[plane + c] = gy - fy;
    t.z[c] = b.z;
    t.size[c] = std::log(b.l);
    t.size[plane + c] = std::log(b.w);
    t.size[2 * plane + c] = std::log(b.h);
    t.yaw[c] = std::sin(b.yaw);
    t.yaw[plane + c] = std::cos(b.yaw);
    t.mask[c] = 1.0;
    ++t.rendered;
  }
  return t;
}

LossTerms detection_loss(const HeadOutput& out, const TargetMaps& targets, const HeadConfig& cfg) {
  double fg = 0.0;
  for (double m : targets.mask.data()) fg += m != 0.0 ? 1.0 : 0.0;
  const double norm = std::max(1.0, fg);
  Var hm = ops::gaussian_focal_loss(ops::sigmoid(out.heatmap), targets.heatmap);
  Var off = ops::masked_l1(out.offset, targets.offset, targets.mask, norm);
  Var z = ops::masked_l1(out.z, targets.z, targets.mask, norm);
  Var size = ops::masked_l1(out.size, targets.size, targets.mask, norm);
  Var yaw = ops::masked_l1(out.yaw, targets.yaw, targets.mask, norm);
  const Var reg_parts[4] = {off, z, size, yaw};
  Var reg = reg_parts[0];
  for (std::size_t i = 1; i < 4; ++i) reg = ops::add(reg, reg_parts[i]);
  LossTerms terms;
  terms.total = ops::add(ops::scale(hm, cfg.heatmap_weight), ops::scale(reg, cfg.regression_weight));
  terms.heatmap = hm.value()[0];
  terms.offset = off.value()[0];
  terms.z = z.value()[0];
  terms.size = size.value()[0];
  terms.yaw = yaw.value()[0];
  if (!std::isfinite(terms.total.value()[0])) {
    throw NumericError("non-finite detection loss (heatmap " + std::to_string(terms.heatmap) +
                       ", offset " + std::to_string(terms.offset) + ")");
  }
  return terms;
}

std::vector<Detection> decode(const PredictionMaps& pred, const GridConfig& grid,
                              const HeadConfig& cfg) {
  const std::size_t nc = pred.heatmap.dim(0), ny = pred.heatmap.dim(1), nx = pred.heatmap.dim(2);
  const std::size_t plane = ny * nx;
  struct Peak {
    double score;
    std::size_t cls, cell;
  };
  std::vector<Peak> peaks;
  for (std::size_t c = 0; c < nc; ++c) {
    const double* hm = pred.heatmap.ptr() + c * plane;
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t i = y * nx + x;
        bool peak = true;
        for (long dy = -1; dy <= 1 && peak; ++dy)
          for (long dx = -1; dx <= 1 && peak; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if ((dx == 0 && dy == 0) || yy < 0 || xx < 0 || yy >= static_cast<long>(ny) ||
                xx >= static_cast<long>(nx))
              continue;
            const std::size_t j = static_cast<std::size_t>(yy) * nx + static_cast<std::size_t>(xx);
            if (hm[j] > hm[i] || (hm[j] == hm[i] && j < i)) peak = false;
          }
        if (peak) peaks.push_back({hm[i], c, i});
      }
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const Peak& a, const Peak& b) { return a.score > b.score; });
  if (peaks.size() > cfg.top_k) peaks.resize(cfg.top_k);

  std::vector<Detection> dets;
  for (const Peak& p : peaks) {
    if (p.score < cfg.score_threshold) continue;
    const std::size_t cx = p.cell % nx, cy = p.cell / nx;
    Detection d;
    d.class_id = static_cast<int>(p.cls);
    d.score = p.score;
    d.x = grid.min[0] + (static_cast<double>(cx) + pred.offset[p.cell]) * grid.size[0];
    d.y = grid.min[1] + (static_cast<double>(cy) + pred.offset[plane + p.cell]) * grid.size[1];
    d.z = pred.z[p.cell];
    d.l = std::exp(pred.size[p.cell]);
    d.w = std::exp(pred.size[plane + p.cell]);
    d.h = std::exp(pred.size[2 * plane + p.cell]);
    d.yaw = wrap_angle(std::atan2(pred.yaw[p.cell], pred.yaw[plane + p.cell]));
    dets.push_back(d);
  }
  return dets;
}

double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall) {
  double total = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    double best = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k)
      if (recall[k] >= r - 1e-12) best = std::max(best, precision[k]);
    total += best;
  }
  return total / 101.0;
}

namespace {

std::optional<double> class_ap(const std::vector<EvalFrame>& frames, int cls, double threshold) {
  struct Ref {
    double score;
    std::size_t frame, det;
  };
  std::vector<Ref> order;
  std::size_t positives = 0;
  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const EvalFrame& fr = frames[f];
    used[f].assign(fr.gt.size(), false);
    for (std::size_t g = 0; g < fr.gt.size(); ++g) {
      const bool ignored = g < fr.ignore.size() && fr.ignore[g];
      if (fr.gt[g].class_id == cls && !ignored) ++positives;
    }
    for (std::size_t d = 0; d < fr.detections.size(); ++d)
      if (fr.detections[d].class_id == cls) order.push_back({fr.detections[d].score, f, d});
  }
  if (positives == 0) return std::nullopt;
  std::stable_sort(order.begin(), order.end(),
                   [](const Ref& a, const Ref& b) { return a.score > b.score; });

  std::vector<double> precision, recall;
  double tp = 0, fp = 0;
  for (const Ref& r : order) {
    const EvalFrame& fr = frames[r.frame];
    const Detection& d = fr.detections[r.det];
    // Nearest unmatched counted GT first; otherwise an ignored GT absorbs the detection.
    std::optional<std::size_t> hit;
    double best = threshold;
    bool near_ignored = false;
    for (std::size_t g = 0; g < fr.gt.size(); ++g) {
      const Box& b = fr.gt[g];
      if (b.class_id != cls || used[r.frame][g]) continue;
      const double dist = std::hypot(d.x - b.x, d.y - b.y);
      if (dist > threshold) continue;
      if (g < fr.ignore.size() && fr.ignore[g]) {
        near_ignored = true;
        continue;
      }
      if (dist <= best) {
        if (!hit || dist < best) hit = g;
        best = dist;
      }
    }
    if (hit) {
      used[r.frame][*hit] = true;
      tp += 1;
    } else if (near_ignored) {
      continue;
    } else {
      fp += 1;
    }
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / static_cast<double>(positives));
  }
  return interpolated_ap(precision, recall);
}

}  // namespace

ApResult evaluate_ap(const std::vector<EvalFrame>& frames, std::size_t num_classes,
                     const std::vector<double>& thresholds) {
  ApResult res;
  res.thresholds = thresholds;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::optional<double>> row;
    for (double th : thresholds) {
      row.push_back(class_ap(frames, static_cast<int>(c), th));
      if (row.back()) {
        sum += *row.back();
        ++n;
      }
    }
    res.ap.push_back(std::move(row));
  }
  if (n > 0) res.map = sum / static_cast<double>(n);
  return res;
}

void write_detections_jsonl(std::ostream& os, const std::string& scene, std::size_t frame,
                            const std::vector<Detection>& dets,
                            const std::vector<std::string>& class_names) {
  for (const Detection& d : dets) {
    const auto cls = static_cast<std::size_t>(d.class_id);
    json j = {{"scene", scene},
              {"frame", frame},
              {"class", cls < class_names.size() ? json(class_names[cls]) : json(d.class_id)},
              {"x", d.x}, {"y", d.y}, {"z", d.z},
              {"l", d.l}, {"w", d.w}, {"h", d.h},
              {"yaw", d.yaw}, {"score", d.score}};
    os << j.dump() << '\n';
  }
}

}  // namespace mgta
