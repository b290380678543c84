#include "cnls/random.hpp"

#include <cmath>
#include <numbers>

namespace cnls {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

Philox4x32::Counter Philox4x32::generate(Counter c, Key k) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kPhiloxW0;
      k[1] += kPhiloxW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, c[0], hi0, lo0);
    mulhilo(kPhiloxM1, c[2], hi1, lo1);
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

double uniform_from_bits(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi >> 5) << 26) | (lo >> 6);
  return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

CounterStream::CounterStream(StreamId id) noexcept : id_(id) {
  const std::uint64_t mixed = splitmix64(id.seed ^ splitmix64(id.lane + 0x632BE59BD9B4E019ull));
  key_ = {static_cast<std::uint32_t>(mixed), static_cast<std::uint32_t>(mixed >> 32)};
}

Philox4x32::Counter CounterStream::block(std::uint64_t step, std::uint32_t index) const noexcept {
  return Philox4x32::generate(
      {index, static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), id_.trajectory}, key_);
}

std::pair<double, double> CounterStream::normal_pair(std::uint64_t step, std::uint32_t index) const noexcept {
  const auto b = block(step, index);
  const double u1 = uniform_from_bits(b[0], b[1]);
  const double u2 = uniform_from_bits(b[2], b[3]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

double CounterStream::uniform(std::uint64_t step, std::uint32_t index) const noexcept {
  const auto b = block(step, index);
  return uniform_from_bits(b[0], b[1]);
}

std::uint64_t CounterStream::bits(std::uint64_t step, std::uint32_t index) const noexcept {
  const auto b = block(step, index);
  return (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
}

double SequentialRng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const auto [a, b] = stream_.normal_pair(counter_++, 1);
  spare_ = b;
  has_spare_ = true;
  return a;
}

SequentialRng::result_type SequentialRng::operator()() noexcept {
  // Index 2 keeps raw bits disjoint from the uniform/normal draws at the same counter.
  return stream_.bits(counter_++, 2);
}

}  // namespace cnls
