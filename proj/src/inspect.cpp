#include "mgta/inspect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mgta/checkpoint.hpp"
#include "mgta/errors.hpp"

namespace mgta {

namespace fs = std::filesystem;

Tensor channel_mean(const Tensor& x) {
  if (x.shape().size() == 2) return x;
  if (x.shape().size() != 3) throw DimensionError("channel_mean expects [C,H,W], got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out(Shape{x.dim(1), x.dim(2)});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < plane; ++i) out[i] += x[k * plane + i];
  for (double& v : out.data()) v /= static_cast<double>(c);
  return out;
}

void write_pgm(const fs::path& path, const Tensor& map) {
  const Tensor m = channel_mean(map);
  const std::size_t h = m.dim(0), w = m.dim(1);
  const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : m.data()) {
    const double s = *hi > *lo ? (v - *lo) / (*hi - *lo) : 128.0 / 255.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

InspectOutput inspect(ParamStore& store, const ModelConfig& model, const Sequence& raw,
                      const std::string& selector, const fs::path& out_dir) {
  if (std::find(kInspectSelectors.begin(), kInspectSelectors.end(), selector) == kInspectSelectors.end()) {
    throw ConfigError("unknown selector '" + selector +
                      "' (expected bev, motion, offsets, attention or heatmap)");
  }
  if ((selector == "motion" || selector == "offsets") && !model.align) {
    throw ConfigError("selector '" + selector + "' needs a model with alignment");
  }
  if (selector == "attention" && model.aggregation != Aggregation::kStfa) {
    throw ConfigError("selector 'attention' needs the stfa aggregation");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

  const Sequence aligned = align_sequence(raw);
  const std::vector<VoxelInputs> frames = prepare_frames(aligned, model, derive_seed(0xe7a1, 0));
  Tape tape;
  ForwardOptions fwd;
  fwd.record_attention = selector == "attention";
  ModelOutput out = model_forward(tape, store, model, frames, fwd);

  InspectOutput res;
  std::vector<NamedTensor> tensors;
  auto emit = [&](const std::string& name, const Tensor& t, const Tensor& image) {
    tensors.push_back({name, t});
    res.images.push_back(out_dir / (selector + "_" + name + ".pgm"));
    write_pgm(res.images.back(), image);
  };
  const std::size_t h = model.grid.ny(), w = model.grid.nx();
  const std::size_t k_all = out.features.size();

  if (selector == "bev") {
    for (std::size_t k = 0; k < k_all; ++k) {
      const Tensor& f = out.features[k].f.value();
      emit("frame" + std::to_string(k), f, f);
    }
    emit("fused", out.fused.value(), out.fused.value());
  } else if (selector == "motion") {
    for (std::size_t k = 0; k < out.alignment.size(); ++k) {
      const Tensor& m = out.alignment[k].motion.value();
      emit("frame" + std::to_string(k), m, m);
    }
  } else if (selector == "offsets") {
    for (std::size_t k = 0; k < out.alignment.size(); ++k) {
      const Tensor& o = out.alignment[k].mask.offsets.value();
      const Tensor& mod = out.alignment[k].mask.modulation.value();
      emit("frame" + std::to_string(k), o, o);
      emit("frame" + std::to_string(k) + "_modulation", mod, mod);
    }
  } else if (selector == "attention") {
    const std::size_t m = model.stfa.heads, j = model.stfa.points;
    for (std::size_t l = 0; l < out.attention.size(); ++l) {
      for (std::size_t k = 0; k < out.attention[l].weights.size(); ++k) {
        const Tensor& a = out.attention[l].weights[k].value();  // [HW, M*J]
        tensors.push_back({"l" + std::to_string(l) + "_frame" + std::to_string(k), a});
        for (std::size_t head = 0; head < m; ++head) {
          Tensor img(Shape{h, w});
          for (std::size_t q = 0; q < h * w; ++q)
            for (std::size_t p = 0; p < j; ++p) img[q] += a[q * m * j + head * j + p];
          res.images.push_back(out_dir / ("attention_l" + std::to_string(l) + "_frame" +
                                          std::to_string(k) + "_head" + std::to_string(head) + ".pgm"));
          write_pgm(res.images.back(), img);
        }
      }
    }
  } else {
    Tensor prob = to_predictions(out.head).heatmap;
    for (std::size_t c = 0; c < prob.dim(0); ++c) {
      Tensor plane(Shape{h, w});
      std::copy_n(prob.ptr() + c * h * w, h * w, plane.ptr());
      emit("class" + std::to_string(c), plane, plane);
    }
  }
  res.tensors = out_dir / (selector + ".tensors");
  write_tensor_file(res.tensors, tensors);
  return res;
}

}  // namespace mgta
