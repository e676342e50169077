#include "mgta/sequence.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mgta/errors.hpp"

namespace mgta {
namespace {

using nlohmann::json;

void transform_points(std::vector<Point>& pts, const Pose2& rel) {
  const double c = std::cos(rel.yaw), s = std::sin(rel.yaw);
  for (auto& p : pts) {
    const double x = c * p.x - s * p.y + rel.x;
    const double y = s * p.x + c * p.y + rel.y;
    p.x = x;
    p.y = y;
    p.z += rel.z;
  }
}

json box_to_json(const Box& b) {
  return json{{"class", b.class_id},      {"center", {b.x, b.y, b.z}}, {"size", {b.l, b.w, b.h}},
              {"yaw", b.yaw},             {"velocity", {b.vx, b.vy}},  {"occluded", b.occluded},
              {"track", b.track_id}};
}

Box box_from_json(const json& j) {
  Box b;
  b.class_id = j.at("class").get<int>();
  const auto& c = j.at("center");
  b.x = c.at(0).get<double>();
  b.y = c.at(1).get<double>();
  b.z = c.at(2).get<double>();
  const auto& s = j.at("size");
  b.l = s.at(0).get<double>();
  b.w = s.at(1).get<double>();
  b.h = s.at(2).get<double>();
  b.yaw = j.at("yaw").get<double>();
  const auto& v = j.at("velocity");
  b.vx = v.at(0).get<double>();
  b.vy = v.at(1).get<double>();
  b.occluded = j.value("occluded", false);
  b.track_id = j.value("track", static_cast<std::int64_t>(-1));
  return b;
}

std::string scan_file_name(std::size_t frame, std::size_t scan) {
  std::ostringstream os;
  os << "frame" << frame << "_scan" << (scan < 10 ? "0" : "") << scan << ".bin";
  return os.str();
}

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError("truncated scan file: " + path.string());
  }
  return v;
}

}  // namespace

const Pose2& Frame::keyframe_pose() const {
  if (scans.empty() || !scans.back().ego_pose) {
    throw DataError("frame " + std::to_string(index) + " has no keyframe pose");
  }
  return *scans.back().ego_pose;
}

Frame compensate_ego_motion(const Frame& frame) {
  const Pose2 key_inv = frame.keyframe_pose().inverse();
  Frame out = frame;
  for (auto& scan : out.scans) {
    if (!scan.ego_pose) {
      throw DataError("scan " + std::to_string(scan.index) + " of frame " +
                      std::to_string(frame.index) + " has no ego pose");
    }
    const Pose2& pose = *scan.ego_pose;
    const Pose2 rel = key_inv * pose;
    if (pose != frame.keyframe_pose() && !rel.is_identity()) transform_points(scan.points, rel);
    scan.ego_pose = frame.keyframe_pose();
  }
  return out;
}

Sequence align_sequence(const Sequence& seq) {
  if (seq.frames.empty()) throw DataError("sequence has no frames");
  Sequence out;
  const Pose2 t_inv = seq.current().keyframe_pose().inverse();
  for (const auto& f : seq.frames) {
    Frame c = compensate_ego_motion(f);
    const Pose2 rel = t_inv * f.keyframe_pose();
    if (f.keyframe_pose() != seq.current().keyframe_pose() && !rel.is_identity()) {
      for (auto& scan : c.scans) transform_points(scan.points, rel);
      for (auto& b : c.boxes) b = transform_box(b, rel);
    }
    for (auto& scan : c.scans) scan.ego_pose = seq.current().keyframe_pose();
    out.frames.push_back(std::move(c));
  }
  return out;
}

void validate_sequence(const Sequence& seq) {
  if (seq.frames.empty()) throw DataError("sequence has no frames");
  const std::size_t n = seq.frames.front().scans.size();
  if (n == 0) throw DataError("frame 0 has no scans");
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    const auto& f = seq.frames[k];
    if (f.scans.size() != n) {
      throw DataError("frame " + std::to_string(k) + " has " + std::to_string(f.scans.size()) +
                      " scans, expected " + std::to_string(n));
    }
    if (k > 0 && !(f.timestamp > seq.frames[k - 1].timestamp)) {
      throw DataError("frame timestamps must increase strictly (frame " + std::to_string(k) + ")");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (f.scans[i].index != i + 1) {
        throw DataError("frame " + std::to_string(k) + " scan " + std::to_string(i) +
                        " has index " + std::to_string(f.scans[i].index));
      }
      for (const auto& p : f.scans[i].points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
            !std::isfinite(p.r) || !std::isfinite(p.dt) || p.dt > 0.0) {
          throw DataError("invalid point in frame " + std::to_string(k) + " scan " +
                          std::to_string(i + 1));
        }
      }
    }
  }
}

void quantize_points(Sequence& seq) {
  auto q = [](double& v) { v = static_cast<double>(static_cast<float>(v)); };
  for (auto& f : seq.frames)
    for (auto& s : f.scans)
      for (auto& p : s.points) {
        q(p.x);
        q(p.y);
        q(p.z);
        q(p.r);
        q(p.dt);
      }
}

void write_scan_file(const std::filesystem::path& path, const std::vector<Point>& points) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  put<std::uint64_t>(os, points.size());
  for (const auto& p : points) {
    for (double v : {p.x, p.y, p.z, p.r, p.dt}) put<float>(os, static_cast<float>(v));
  }
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<Point> read_scan_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open scan file: " + path.string());
  const auto count = get<std::uint64_t>(is, path);
  const auto bytes = std::filesystem::file_size(path);
  if (bytes != sizeof(std::uint64_t) + count * 5 * sizeof(float)) {
    throw DataError("scan file size does not match its point count: " + path.string());
  }
  std::vector<Point> pts(count);
  for (auto& p : pts) {
    p.x = get<float>(is, path);
    p.y = get<float>(is, path);
    p.z = get<float>(is, path);
    p.r = get<float>(is, path);
    p.dt = get<float>(is, path);
  }
  return pts;
}

void write_sequence(const std::filesystem::path& dir, const Sequence& seq) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
  json frames = json::array();
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    const auto& f = seq.frames[k];
    json scans = json::array();
    for (const auto& s : f.scans) {
      const std::string file = scan_file_name(k, s.index);
      write_scan_file(dir / file, s.points);
      json js{{"index", s.index}, {"timestamp", s.timestamp}, {"file", file}};
      if (s.ego_pose) {
        js["pose"] = {s.ego_pose->x, s.ego_pose->y, s.ego_pose->z, s.ego_pose->yaw};
      }
      scans.push_back(std::move(js));
    }
    json boxes = json::array();
    for (const auto& b : f.boxes) boxes.push_back(box_to_json(b));
    frames.push_back(
        {{"index", f.index}, {"timestamp", f.timestamp}, {"scans", scans}, {"boxes", boxes}});
  }
  const json manifest{{"format", "mgta-sequence"},
                      {"version", kSequenceFormatVersion},
                      {"K", seq.frames.size()},
                      {"N", seq.frames.empty() ? 0 : seq.frames.front().scans.size()},
                      {"frames", frames}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write manifest in " + dir.string());
  os << manifest.dump(1) << '\n';
}

Sequence read_sequence(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw DataError("missing manifest: " + path.string());
  json m;
  try {
    m = json::parse(is);
    if (m.at("format").get<std::string>() != "mgta-sequence") {
      throw DataError("not a sequence manifest: " + path.string());
    }
    const int version = m.at("version").get<int>();
    if (version != kSequenceFormatVersion) {
      throw DataError("unsupported sequence format version " + std::to_string(version) + " in " +
                      path.string());
    }
    Sequence seq;
    for (const auto& jf : m.at("frames")) {
      Frame f;
      f.index = jf.at("index").get<std::size_t>();
      f.timestamp = jf.at("timestamp").get<double>();
      for (const auto& js : jf.at("scans")) {
        Scan s;
        s.index = js.at("index").get<std::size_t>();
        s.timestamp = js.at("timestamp").get<double>();
        if (js.contains("pose")) {
          const auto& p = js.at("pose");
          s.ego_pose = Pose2{p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(),
                             p.at(3).get<double>()};
        }
        s.points = read_scan_file(dir / js.at("file").get<std::string>());
        f.scans.push_back(std::move(s));
      }
      for (const auto& jb : jf.at("boxes")) f.boxes.push_back(box_from_json(jb));
      seq.frames.push_back(std::move(f));
    }
    if (seq.frames.size() != m.at("K").get<std::size_t>()) {
      throw DataError("manifest K does not match its frame list: " + path.string());
    }
    validate_sequence(seq);
    return seq;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace mgta
