#include "hens/rng.hpp"

#include <cmath>
#include <numbers>

namespace hens {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline std::uint64_t join(std::uint32_t lo, std::uint32_t hi) {
  return static_cast<std::uint64_t>(hi) << 32 | lo;
}

PhiloxBlock counter_of(std::uint64_t major, std::uint64_t minor) {
  return {static_cast<std::uint32_t>(minor), static_cast<std::uint32_t>(minor >> 32),
          static_cast<std::uint32_t>(major), static_cast<std::uint32_t>(major >> 32)};
}

}  // namespace

PhiloxBlock philox4x32_10(PhiloxBlock c, PhiloxKey k) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kWeyl0;
      k[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
  return c;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

PhiloxKey derive_key(std::uint64_t seed, RngDomain domain) noexcept {
  const std::uint64_t k = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(domain)));
  return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

double box_muller(std::uint64_t a, std::uint64_t b) noexcept {
  const double u1 = to_open_unit(a);
  const double u2 = to_unit(b);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

PhiloxBlock KeyedGenerator::block(std::uint64_t major, std::uint64_t minor) const noexcept {
  return philox4x32_10(counter_of(major, minor), key_);
}

double KeyedGenerator::uniform(std::uint64_t major, std::uint64_t minor) const noexcept {
  const auto b = block(major, minor);
  return to_unit(join(b[0], b[1]));
}

double KeyedGenerator::open_uniform(std::uint64_t major, std::uint64_t minor) const noexcept {
  const auto b = block(major, minor);
  return to_open_unit(join(b[0], b[1]));
}

double KeyedGenerator::normal(std::uint64_t major, std::uint64_t minor) const noexcept {
  const auto b = block(major, minor);
  return box_muller(join(b[0], b[1]), join(b[2], b[3]));
}

void RngStream::refill() noexcept {
  const auto b = philox4x32_10(counter_of(stream_, block_index_++), key_);
  buffer_ = {join(b[0], b[1]), join(b[2], b[3])};
  available_ = 2;
}

RngStream::result_type RngStream::operator()() noexcept {
  if (available_ == 0) refill();
  return buffer_[2 - available_--];
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
  // Lemire's multiply-shift with rejection.
  unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>((*this)()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double RngStream::normal() noexcept {
  const std::uint64_t a = (*this)();
  const std::uint64_t b = (*this)();
  return box_muller(a, b);
}

}  // namespace hens
