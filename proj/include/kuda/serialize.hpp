// Parameter snapshot container:
//   "KUDA" | u32 version
//   repeated: u32 name_len | name bytes (UTF-8) | u32 rank | u32 dims[rank] | f64 payload[prod(dims)]
// All integers and floats little-endian. Records run to end of file.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "kuda/nn.hpp"

namespace kuda {

inline constexpr char kSnapshotMagic[4] = {'K', 'U', 'D', 'A'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw SnapshotError("snapshot truncated at byte " + std::to_string(pos));
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string encode_snapshot(const ParamList& params) {
  std::string out(kSnapshotMagic, 4);
  detail::put_le(out, kSnapshotVersion);
  for (const auto& p : params) {
    detail::put_le(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_le(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) detail::put_le(out, static_cast<std::uint32_t>(d));
    for (double v : p.tensor.data()) detail::put_le(out, v);
  }
  return out;
}

inline ParamList decode_snapshot(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSnapshotMagic, 4) != 0)
    throw SnapshotError("not a parameter snapshot (bad magic)");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kSnapshotVersion) throw SnapshotError("unsupported snapshot version " + std::to_string(version));
  ParamList out;
  while (pos < bytes.size()) {
    const auto len = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw SnapshotError("snapshot truncated in parameter name");
    std::string name = bytes.substr(pos, len);
    pos += len;
    const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
    if (rank == 0 || rank > kMaxRank) throw SnapshotError("parameter '" + name + "' has invalid rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint32_t>(bytes, pos);
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = detail::get_le<double>(bytes, pos);
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  return out;
}

inline void save_snapshot(const std::string& path, const ParamList& params) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw SnapshotError("cannot open '" + path + "' for writing");
  const std::string bytes = encode_snapshot(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw SnapshotError("failed writing '" + path + "'");
}

inline ParamList load_snapshot(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SnapshotError("cannot open snapshot '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_snapshot(bytes);
}

/// Copies snapshot values into `targets` by name. Every target must be present
/// with an identical shape; extra snapshot entries are ignored.
inline void assign_parameters(const ParamList& targets, const ParamList& source) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.tensor;
  for (auto t : targets) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw SnapshotError("snapshot is missing parameter '" + t.name + "'");
    if (it->second->shape() != t.tensor.shape())
      throw SnapshotError("parameter '" + t.name + "' is " + shape_str(it->second->shape()) + " in the snapshot but " +
                          shape_str(t.tensor.shape()) + " in the model");
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), t.tensor.mutable_data().begin());
  }
}

/// Deep copy of parameter values (no graph, no grad).
inline ParamList clone_values(const ParamList& params) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.detach()});
  return out;
}

}  // namespace kuda
