// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random number generation (Philox4x64-10).
//
// Every random draw in the library is addressed by (seed, domain, id1, id2,
// block), so draws are reproducible independently of thread count and
// evaluation order. Streams for different (domain, id1, id2) tuples under the
// same seed are statistically independent.

#pragma once

#include "fis/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>

namespace fis {

/// Stream domains keep RNG consumption of unrelated subsystems disjoint.
enum class RngDomain : std::uint64_t {
  net_init = 1,
  train = 2,
  sample = 3,
  estimate = 4,
  langevin = 5,
  target = 6,
  test = 7,
};

namespace detail {

struct Philox4x64Block {
  std::array<std::uint64_t, 4> words;
};

inline void mulhilo64(std::uint64_t a, std::uint64_t b, std::uint64_t& hi,
                      std::uint64_t& lo) {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

inline Philox4x64Block philox4x64_10(std::array<std::uint64_t, 4> ctr,
                                     std::array<std::uint64_t, 2> key) {
  constexpr std::uint64_t kM0 = 0xD2E7470EE14C6C93ULL;
  constexpr std::uint64_t kM1 = 0xCA5A826395121157ULL;
  constexpr std::uint64_t kW0 = 0x9E3779B97F4A7C15ULL;
  constexpr std::uint64_t kW1 = 0xBB67AE8584CAA73BULL;
  for (int round = 0; round < 10; ++round) {
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo64(kM0, ctr[0], hi0, lo0);
    mulhilo64(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return Philox4x64Block{ctr};
}

}  // namespace detail

/// A single Philox stream. Yields uint64s, uniforms in (0, 1], and standard
/// normals (Box-Muller). Cheap to construct; carries no heap state.
class PhiloxStream {
 public:
  PhiloxStream(std::uint64_t seed, RngDomain domain, std::uint64_t id1 = 0,
               std::uint64_t id2 = 0)
      : key_{seed, static_cast<std::uint64_t>(domain)}, ctr_{0, 0, id1, id2} {}

  std::uint64_t next_u64() {
    if (buf_pos_ == 4) refill();
    return buf_[buf_pos_++];
  }

  /// Uniform in (0, 1]; safe as a log() argument.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * M_PI * u2;
    spare_ = rad * std::sin(ang);
    have_spare_ = true;
    return rad * std::cos(ang);
  }

  /// Column-major fill with standard normals.
  template <typename Derived>
  void fill_normal(Eigen::DenseBase<Derived>& out) {
    for (Index j = 0; j < out.cols(); ++j)
      for (Index i = 0; i < out.rows(); ++i) out(i, j) = next_normal();
  }
  template <typename Derived>
  void fill_normal(Eigen::DenseBase<Derived>&& out) {
    fill_normal(out);
  }

 private:
  void refill() {
    buf_ = detail::philox4x64_10({block_, ctr_[1], ctr_[2], ctr_[3]}, key_).words;
    ++block_;
    buf_pos_ = 0;
  }

  std::array<std::uint64_t, 2> key_;
  std::array<std::uint64_t, 4> ctr_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 4> buf_{};
  int buf_pos_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fis
