#pragma once

// Counter-based random streams.
//
// A stream is identified by a 64-bit key derived from a global seed and a
// path of labels. Draws are produced by Philox4x32-10 applied to an
// incrementing 128-bit counter, so the integer sequence depends only on
// (seed, labels) and never on evaluation order.

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string_view>

namespace aldi {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// One Philox4x32-10 block.
inline constexpr PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key) noexcept {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

/// Element of a stream label path: a string tag or an integer index.
class Label {
 public:
  constexpr Label(std::string_view tag) noexcept  // NOLINT(google-explicit-constructor)
      : hash_(detail::splitmix64(detail::fnv1a(tag) ^ 0x5354524E47ULL)) {}
  constexpr Label(const char* tag) noexcept : Label(std::string_view{tag}) {}  // NOLINT
  template <std::integral I>
  constexpr Label(I index) noexcept  // NOLINT(google-explicit-constructor)
      : hash_(detail::splitmix64(static_cast<std::uint64_t>(index) ^ 0x494E444558ULL)) {}

  constexpr std::uint64_t hash() const noexcept { return hash_; }

 private:
  std::uint64_t hash_;
};

inline constexpr std::uint64_t derive_key(std::uint64_t parent,
                                          std::initializer_list<Label> labels) noexcept {
  std::uint64_t h = detail::splitmix64(parent);
  for (const Label& label : labels) {
    h = detail::splitmix64(h ^ label.hash());
    h = detail::splitmix64(h + 0x632BE59BD9B4E019ULL);
  }
  return h;
}

/// Deterministic generator keyed by (seed, label path). Not thread-safe;
/// derive one stream per consumer.
class RandomStream {
 public:
  explicit constexpr RandomStream(std::uint64_t key) noexcept
      : key_(key), philox_key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  constexpr std::uint64_t key() const noexcept { return key_; }

  RandomStream derive(std::initializer_list<Label> labels) const noexcept {
    return RandomStream(derive_key(key_, labels));
  }

  std::uint32_t next_u32() noexcept {
    if (used_ == 4) refill();
    return buffer_[used_++];
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double radius = std::sqrt(-2.0 * std::log(uniform()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  void fill_normal(std::span<double> out) noexcept {
    for (double& v : out) v = normal();
  }

  /// Number of Philox blocks consumed so far.
  std::uint64_t blocks() const noexcept { return block_; }

 private:
  void refill() noexcept {
    buffer_ = philox4x32({static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32), 0u, 0u},
                         philox_key_);
    ++block_;
    used_ = 0;
  }

  std::uint64_t key_;
  PhiloxKey philox_key_;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Substream for a global seed and a label path, e.g.
/// `derive_stream(seed, {"aldi", step, particle})`.
inline RandomStream derive_stream(std::uint64_t seed, std::initializer_list<Label> labels = {}) noexcept {
  return RandomStream(derive_key(seed, labels));
}

}  // namespace aldi
