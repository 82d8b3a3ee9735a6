#include "advconform/random.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace advconform {

std::uint64_t derive_seed(std::uint64_t master,
                          std::initializer_list<std::uint64_t> coords) noexcept
{
  std::uint64_t h = mix64(master);
  for (std::uint64_t c : coords)
    h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

std::uint64_t seed_coordinate(double value) noexcept
{
  // +0.0 and -0.0 name the same grid point
  if (value == 0.0)
    value = 0.0;
  return std::bit_cast<std::uint64_t>(value);
}

namespace {
constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
{
  return (x << k) | (x >> (64 - k));
}
} // namespace

Rng::Rng(std::uint64_t seed) noexcept
{
  std::uint64_t z = seed;
  for (auto& s : s_) {
    z += 0x9e3779b97f4a7c15ULL;
    s = mix64(z);
  }
}

std::uint64_t Rng::next() noexcept
{
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() noexcept
{
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::normal() noexcept
{
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 == 0.0)
    u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept
{
  // rejection on the top of the range keeps the draw unbiased
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x = next();
  while (x >= limit)
    x = next();
  return x % bound;
}

} // namespace advconform
