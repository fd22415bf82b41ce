#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "kronsum/errors.hpp"
#include "kronsum/linalg.hpp"

namespace kronsum {

/// Entry distributions with mean 0 and unit variance.
enum class EntryLaw { gaussian, rademacher, uniform_scaled };

inline std::string to_string(EntryLaw law) {
  switch (law) {
    case EntryLaw::gaussian: return "gaussian";
    case EntryLaw::rademacher: return "rademacher";
    case EntryLaw::uniform_scaled: return "uniform";
  }
  return "gaussian";
}

inline EntryLaw parse_entry_law(std::string_view name) {
  if (name == "gaussian" || name == "normal") return EntryLaw::gaussian;
  if (name == "rademacher") return EntryLaw::rademacher;
  if (name == "uniform" || name == "uniform-scaled" || name == "uniform_scaled") return EntryLaw::uniform_scaled;
  throw ValidationError("unknown entry law '" + std::string(name) + "'");
}

struct SubgaussianSpec {
  EntryLaw law = EntryLaw::gaussian;
  /// Recorded upper bound on the psi_2 norm of an entry; 2 covers all three laws.
  double psi2_bound = 2.0;
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for an independent child stream; distinct `stream` ids give unrelated generators.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream * 0x632be59bd9b4e019ULL + 0x1d8e4e27c47d124fULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(seed, a), b);
}

/// Deterministic stream of entries under one law. Uses only std::mt19937_64 output bits,
/// so the values are identical on every standard library.
class EntryStream {
 public:
  EntryStream(EntryLaw law, std::uint64_t seed) : engine_(seed), law_(law) {}

  double next() {
    switch (law_) {
      case EntryLaw::rademacher: return (engine_() >> 63) ? 1.0 : -1.0;
      case EntryLaw::uniform_scaled: return std::sqrt(3.0) * (2.0 * unit() - 1.0);
      case EntryLaw::gaussian: break;
    }
    return normal();
  }

 private:
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0, v = 0.0, s = 0.0;
    do {
      u = 2.0 * unit() - 1.0;
      v = 2.0 * unit() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * factor;
    has_spare_ = true;
    return u * factor;
  }

  std::mt19937_64 engine_;
  EntryLaw law_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// rows x cols matrix of independent entries, filled column by column.
inline Matrix draw_matrix(Index rows, Index cols, EntryLaw law, std::uint64_t seed) {
  EntryStream stream(law, seed);
  Matrix z(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) z(i, j) = stream.next();
  return z;
}

}  // namespace kronsum
