#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace hens {

// Counter-based random numbers (Philox4x32-10).
//
// Every random quantity in the library is a pure function of a 64-bit seed
// and an integer counter, so results never depend on thread count or the
// order in which work items are scheduled.
//
//   key     = derive_key(seed, domain)      (two splitmix64 rounds)
//   block   = philox4x32_10(counter, key)    (four 32-bit words)
//   uniform = ((w1 << 32 | w0) >> 11) * 2^-53, shifted by half an ulp for (0,1)
//   normal  = Box-Muller cosine branch on the two 64-bit halves of one block
//
// Keyed draws place (cell, member) in the counter words; streams place
// (block index, stream id) there.

using PhiloxBlock = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxBlock philox4x32_10(PhiloxBlock counter, PhiloxKey key) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Separates independent uses of one user seed.
enum class RngDomain : std::uint64_t {
  stream = 1,
  member_noise = 2,
  checkpoint_mean = 3,
  verification_noise = 4,
  verification_checkpoint = 5,
  bootstrap_member = 6,
};

PhiloxKey derive_key(std::uint64_t seed, RngDomain domain) noexcept;

/// Maps 64 random bits to a double in [0, 1).
inline double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Maps 64 random bits to a double in (0, 1).
inline double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

double box_muller(std::uint64_t a, std::uint64_t b) noexcept;

/// Random access draws addressed by two 64-bit indices, typically
/// (cell, member). Stateless and safe to share across threads.
class KeyedGenerator {
 public:
  KeyedGenerator(std::uint64_t seed, RngDomain domain) noexcept
      : key_(derive_key(seed, domain)) {}

  PhiloxBlock block(std::uint64_t major, std::uint64_t minor) const noexcept;
  double uniform(std::uint64_t major, std::uint64_t minor) const noexcept;
  double open_uniform(std::uint64_t major, std::uint64_t minor) const noexcept;
  double normal(std::uint64_t major, std::uint64_t minor) const noexcept;

 private:
  PhiloxKey key_;
};

/// Sequential generator over one (seed, stream) pair. Satisfies
/// UniformRandomBitGenerator so it can drive boost.random distributions.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(derive_key(seed, RngDomain::stream)), stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  double uniform() noexcept { return to_unit((*this)()); }
  double open_uniform() noexcept { return to_open_unit((*this)()); }

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  double normal() noexcept;

 private:
  void refill() noexcept;

  PhiloxKey key_;
  std::uint64_t stream_;
  std::uint64_t block_index_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int available_ = 0;
};

}  // namespace hens
