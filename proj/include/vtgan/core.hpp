#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vtgan {

/// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape / dimension mismatches.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Bad files, missing inputs, malformed manifests.
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

/// NaN losses, failed gradient checks, degenerate statistics.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename... Args>
std::string strcat_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

template <typename E = Error, typename... Args>
void check(bool cond, Args&&... args) {
  if (!cond) throw E(strcat_msg(std::forward<Args>(args)...));
}

// ---------------------------------------------------------------------------
// Counter-based deterministic RNG. Every random draw in the library is a pure
// function of (key, counter), so dropout masks, crop origins and weight init
// are reproducible and independent of call order.
// ---------------------------------------------------------------------------

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fold(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, const std::string& stream)
      : key_(fold(seed, hash_str(stream))) {}

  std::uint64_t next_u64() { return mix64(key_ ^ mix64(ctr_++)); }

  /// Uniform in [0, 1).
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller.
  double next_normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

// ---------------------------------------------------------------------------
// Internal parallelism. Work is split over disjoint output ranges, so results
// are bitwise identical for any thread count. VTGAN_THREADS caps the pool.
// ---------------------------------------------------------------------------

inline unsigned max_threads() {
  static unsigned n = [] {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VTGAN_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) hw = static_cast<unsigned>(std::min<long>(v, 256));
    }
    return hw;
  }();
  return n;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t grain, Fn&& fn) {
  unsigned threads = max_threads();
  if (threads <= 1 || n < 2 * grain) {
    fn(std::size_t{0}, n);
    return;
  }
  std::size_t chunks = std::min<std::size_t>(threads, (n + grain - 1) / grain);
  std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    std::size_t lo = c * per;
    std::size_t hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

/// Forward/eval switch plus the RNG coordinates for stochastic layers.
struct Mode {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  static Mode eval() { return {}; }
  static Mode training(std::uint64_t seed, std::uint64_t step) {
    return {true, seed, step};
  }
};

}  // namespace vtgan
