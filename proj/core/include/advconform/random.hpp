#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace advconform {

//! SplitMix64 finalizer; the building block for all seed derivation.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

//! Combines a master seed with a list of coordinates into an independent
//! stream seed. Changing any coordinate changes the result; appending new
//! coordinates elsewhere in a grid never affects existing ones.
std::uint64_t derive_seed(std::uint64_t master,
                          std::initializer_list<std::uint64_t> coords) noexcept;

//! Bit pattern of a double, for use as a seed coordinate.
std::uint64_t seed_coordinate(double value) noexcept;

//! xoshiro256** generator with platform-independent sampling routines.
//! Standard library distributions are implementation-defined, so uniform,
//! normal and bounded-integer draws are implemented here.
class Rng
{
public:
  explicit Rng(std::uint64_t seed) noexcept;

  std::uint64_t next() noexcept;

  //! Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;

  //! Standard normal via Box-Muller (caches the second variate).
  double normal() noexcept;

  //! Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept;

  template<typename T>
  void shuffle(std::vector<T>& v) noexcept
  {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace advconform
