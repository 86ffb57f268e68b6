#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tipgnn {

using NodeId = int64_t;
using Timestamp = double;

/// Thrown by every precondition/shape/format check in the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Deterministic family of generators derived from one run seed.
/// Each purpose (init, train negatives, eval negatives, dropout, ...)
/// gets its own stream so adding draws in one place does not shift others.
class RngPool {
 public:
  explicit RngPool(uint64_t seed) : seed_(seed) {}

  std::mt19937_64 stream(uint64_t purpose) const {
    std::seed_seq seq{seed_, purpose};
    return std::mt19937_64(seq);
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
};

// Fixed stream ids used across the library.
namespace rng_purpose {
constexpr uint64_t kParamInit = 1;
constexpr uint64_t kTrainNegatives = 2;
constexpr uint64_t kEvalNegatives = 3;
constexpr uint64_t kDropout = 4;
constexpr uint64_t kNodeHiding = 5;
constexpr uint64_t kShuffle = 6;
constexpr uint64_t kDownstream = 7;
}  // namespace rng_purpose

/// FNV-1a over a string; used to stamp metric records with a config hash.
inline uint64_t fnv1a(const std::string& text) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace tipgnn
