#include "mgta/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "mgta/errors.hpp"

namespace mgta {
namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw DataError("truncated tensor file: " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(os, d);
    if (t.dtype() == DType::kF32) {
      for (double v : t.data()) put_le<float>(os, static_cast<float>(v));
    } else {
      for (double v : t.data()) put_le<double>(os, v);
    }
  }
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open tensor file: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("bad magic in tensor file: " + path.string());
  }
  const auto version = get_le<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported tensor file version " + std::to_string(version) + " in " +
                    path.string() + " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  std::vector<NamedTensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = get_le<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated name in " + path.string());
    const auto tag = get_le<std::uint8_t>(is, path);
    if (tag > 1) throw DataError("unknown dtype tag in " + path.string());
    const auto rank = get_le<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(is, path));
    std::vector<double> values(num_elements(shape));
    if (tag == 1) {
      for (auto& v : values) v = static_cast<double>(get_le<float>(is, path));
    } else {
      for (auto& v : values) v = get_le<double>(is, path);
    }
    Tensor t(shape, std::move(values));
    if (tag == 1) t.round_to(DType::kF32);
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, DType dtype) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(store.size());
  for (const auto& p : store) {
    Tensor t = p.value;
    t.round_to(dtype);
    tensors.push_back({p.name, std::move(t)});
  }
  write_tensor_file(path, tensors);
}

LoadReport load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  auto tensors = read_tensor_file(path);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  LoadReport report;
  for (auto& p : store) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      report.fresh.push_back(p.name);
      continue;
    }
    if (it->second->shape() != p.value.shape()) {
      throw DataError("checkpoint v" + std::to_string(kCheckpointVersion) + " parameter '" +
                      p.name + "' has shape " + to_string(it->second->shape()) +
                      " but the model expects " + to_string(p.value.shape()));
    }
    p.value = *it->second;
    report.loaded.push_back(p.name);
    by_name.erase(it);
  }
  for (const auto& [name, _] : by_name) report.unused.push_back(name);
  return report;
}

}  // namespace mgta
