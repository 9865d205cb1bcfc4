#pragma once

// Shared primitives: error type, deterministic RNG, stable hashing, 2-D points.

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace plga {

enum class ErrorCode {
  config,        // bad flags / config / fixture contents
  data,          // malformed dataset or unknown names
  generation,    // scene generator gave up
  demo_unavailable,
  invalid_action,
  parse,         // LM reply could not be parsed
  transport,     // live backend exhausted retries
  replay_miss,
  scripted_miss, // zero or ambiguous scripted rules
  needs_human,
  no_delta,
  contract,      // precondition violated by caller
  divergence,
  not_found,
  conflict,
  validation,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::config: return "config";
    case ErrorCode::data: return "data";
    case ErrorCode::generation: return "generation";
    case ErrorCode::demo_unavailable: return "demo_unavailable";
    case ErrorCode::invalid_action: return "invalid_action";
    case ErrorCode::parse: return "parse";
    case ErrorCode::transport: return "transport";
    case ErrorCode::replay_miss: return "replay_miss";
    case ErrorCode::scripted_miss: return "scripted_miss";
    case ErrorCode::needs_human: return "needs_human";
    case ErrorCode::no_delta: return "no_delta";
    case ErrorCode::contract: return "contract";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::validation: return "validation";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Seeded generator whose output is identical across standard libraries:
// mt19937_64's sequence is fixed by the standard, the distributions are not,
// so conversions to reals/ranges are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in [0, n). n must be > 0.
  std::size_t index(std::size_t n) {
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derive an independent stream seed from a base seed and a label.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0) {
  return splitmix64(fnv1a64(label, splitmix64(base)) ^ splitmix64(index + 0x51ed27));
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline Point lerp(Point a, Point b, double t) { return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t}; }

inline bool in_unit_box(Point p) { return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0; }

inline Point clamp_unit(Point p) {
  auto c = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
  return {c(p.x), c(p.y)};
}

// Distance from p to the closed segment [a, b].
inline double distance_to_segment(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0.0) return distance(p, a);
  double t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return distance(p, {a.x + t * dx, a.y + t * dy});
}

inline std::string to_lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace plga
