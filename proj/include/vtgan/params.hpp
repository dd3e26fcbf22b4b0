#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vtgan/core.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

enum class ParamKind { weight, state };
enum class Init { zeros, ones, normal_002 };

// ---------------------------------------------------------------------------
// Named parameter map. Paths are dot-separated ("g_coarse.res3.branch_d2.
// sepconv.dw"). The trainable flag is the tensor's requires_grad bit; state
// entries (batch-norm running stats) never train and never receive grads.
// Initial values are a pure function of (store seed, path), so construction
// order does not matter.
// ---------------------------------------------------------------------------

template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t init_seed = 0) : seed_(init_seed) {}

  Tensor<T>& create(const std::string& path, Shape shape, Init init,
                    ParamKind kind = ParamKind::weight) {
    check<Error>(!items_.count(path), "parameter path already exists: ", path);
    std::vector<T> data(numel(shape), T(0));
    if (init == Init::ones) {
      std::fill(data.begin(), data.end(), T(1));
    } else if (init == Init::normal_002) {
      CounterRng rng(fold(seed_, hash_str(path)));
      for (auto& v : data) v = static_cast<T>(0.02 * rng.next_normal());
    }
    Entry e;
    e.tensor = Tensor<T>::from_data(std::move(shape), std::move(data),
                                    kind == ParamKind::weight);
    e.kind = kind;
    auto [it, ok] = items_.emplace(path, std::move(e));
    (void)ok;
    return it->second.tensor;
  }

  bool contains(const std::string& path) const { return items_.count(path); }

  Tensor<T>& at(const std::string& path) {
    auto it = items_.find(path);
    check<Error>(it != items_.end(), "unknown parameter path: ", path);
    return it->second.tensor;
  }
  const Tensor<T>& at(const std::string& path) const {
    auto it = items_.find(path);
    check<Error>(it != items_.end(), "unknown parameter path: ", path);
    return it->second.tensor;
  }

  ParamKind kind(const std::string& path) const {
    auto it = items_.find(path);
    check<Error>(it != items_.end(), "unknown parameter path: ", path);
    return it->second.kind;
  }

  /// Toggles the trainable flag on every weight whose path starts with
  /// `prefix`; values are untouched and state entries are skipped.
  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [path, e] : items_)
      if (e.kind == ParamKind::weight && starts_with(path, prefix))
        e.tensor.set_requires_grad(trainable);
  }

  bool trainable(const std::string& path) const {
    return at(path).requires_grad();
  }

  void zero_grads() {
    for (auto& [path, e] : items_) e.tensor.zero_grad();
  }

  std::vector<std::string> paths(const std::string& prefix = "") const {
    std::vector<std::string> out;
    for (const auto& [path, e] : items_)
      if (starts_with(path, prefix)) out.push_back(path);
    return out;
  }

  /// Total element count of weight entries under a prefix.
  std::size_t parameter_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& [path, e] : items_)
      if (e.kind == ParamKind::weight && starts_with(path, prefix))
        n += e.tensor.size();
    return n;
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& [path, e] : items_) fn(path, e.tensor, e.kind);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [path, e] : items_) fn(path, e.tensor, e.kind);
  }

  std::uint64_t init_seed() const { return seed_; }

 private:
  static bool starts_with(const std::string& s, const std::string& prefix) {
    return s.compare(0, prefix.size(), prefix) == 0;
  }

  struct Entry {
    Tensor<T> tensor;
    ParamKind kind = ParamKind::weight;
  };
  std::map<std::string, Entry> items_;
  std::uint64_t seed_;
};

/// Restores requires_grad flags of a prefix on scope exit.
template <typename T>
class FreezeGuard {
 public:
  FreezeGuard(ParameterStore<T>& ps, const std::string& prefix)
      : ps_(ps), prefix_(prefix) {
    for (const auto& path : ps.paths(prefix))
      if (ps.kind(path) == ParamKind::weight)
        saved_.emplace_back(path, ps.trainable(path));
    ps.set_trainable(prefix, false);
  }
  ~FreezeGuard() {
    for (const auto& [path, flag] : saved_)
      ps_.at(path).set_requires_grad(flag);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterStore<T>& ps_;
  std::string prefix_;
  std::vector<std::pair<std::string, bool>> saved_;
};

// ---------------------------------------------------------------------------
// Weight file: 8-byte magic "VTGW0001", a little-endian u64 header length,
// a UTF-8 text header with one line per entry
//     tensor <path> <f32|f64> <d0>x<d1>x... <byte offset into data section>
//     meta <key> <value>
// then the raw little-endian buffers. Round-trips are bit-exact.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (sizeof(T) == 4)
    return "f32";
  else
    return "f64";
}

inline Shape parse_shape(const std::string& s) {
  Shape shape;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find('x', pos);
    if (next == std::string::npos) next = s.size();
    shape.push_back(std::stoull(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return shape;
}

inline std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace detail

inline constexpr char kWeightMagic[9] = "VTGW0001";

/// Parameter paths listed in a weight file header (no data read).
inline std::vector<std::string> weight_file_paths(const std::string& filename) {
  std::ifstream in(filename, std::ios::binary);
  check<DataError>(in.good(), "cannot open weight file: ", filename);
  char magic[8];
  in.read(magic, 8);
  check<DataError>(in.good() && std::memcmp(magic, kWeightMagic, 8) == 0,
                   "bad weight file magic in ", filename);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  check<DataError>(in.good(), "truncated weight file header in ", filename);
  std::vector<std::string> out;
  std::istringstream hs(header);
  std::string line;
  while (std::getline(hs, line)) {
    std::istringstream ls(line);
    std::string tag, path;
    ls >> tag >> path;
    if (tag == "tensor") out.push_back(path);
  }
  return out;
}

template <typename T>
void save_weights(const ParameterStore<T>& ps, const std::string& filename,
                  const std::map<std::string, std::string>& meta = {}) {
  std::string header;
  std::size_t offset = 0;
  ps.for_each([&](const std::string& path, const Tensor<T>& t, ParamKind) {
    header += "tensor " + path + " " + detail::dtype_name<T>() + " " +
              detail::shape_text(t.shape()) + " " + std::to_string(offset) +
              "\n";
    offset += t.size() * sizeof(T);
  });
  for (const auto& [k, v] : meta) header += "meta " + k + " " + v + "\n";

  std::ofstream out(filename, std::ios::binary);
  check<DataError>(out.good(), "cannot open weight file for writing: ",
                   filename);
  out.write(kWeightMagic, 8);
  std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  ps.for_each([&](const std::string&, const Tensor<T>& t, ParamKind) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(T)));
  });
  check<DataError>(out.good(), "failed writing weight file: ", filename);
}

/// Loads values into the store. Existing entries must match shape; unknown
/// paths are created as trainable weights. Returns the meta map.
template <typename T>
std::map<std::string, std::string> load_weights(ParameterStore<T>& ps,
                                                const std::string& filename) {
  std::ifstream in(filename, std::ios::binary);
  check<DataError>(in.good(), "cannot open weight file: ", filename);
  char magic[8];
  in.read(magic, 8);
  check<DataError>(in.good() && std::memcmp(magic, kWeightMagic, 8) == 0,
                   "bad weight file magic in ", filename);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  check<DataError>(in.good(), "truncated weight file header in ", filename);
  std::streampos data_start = in.tellg();

  std::map<std::string, std::string> meta;
  std::istringstream hs(header);
  std::string line;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      meta[key] = value;
      continue;
    }
    check<DataError>(tag == "tensor", "bad weight header line: ", line);
    std::string path, dtype, shape_text;
    std::uint64_t offset = 0;
    ls >> path >> dtype >> shape_text >> offset;
    check<DataError>(!ls.fail(), "bad weight header line: ", line);
    check<DataError>(dtype == detail::dtype_name<T>(), "weight dtype ", dtype,
                     " does not match store dtype ", detail::dtype_name<T>(),
                     " for ", path);
    Shape shape = detail::parse_shape(shape_text);
    Tensor<T>* dst;
    if (ps.contains(path)) {
      dst = &ps.at(path);
      check<DataError>(dst->shape() == shape, "weight shape mismatch for ",
                       path, ": file ", shape_str(shape), " vs store ",
                       shape_str(dst->shape()));
    } else {
      dst = &ps.create(path, shape, Init::zeros);
    }
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(dst->mutable_data().data()),
            static_cast<std::streamsize>(dst->size() * sizeof(T)));
    check<DataError>(in.good(), "truncated weight data for ", path, " in ",
                     filename);
  }
  return meta;
}

}  // namespace vtgan
