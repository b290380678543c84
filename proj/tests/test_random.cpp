#include <cmath>
#include <set>

#include "cnls/random.hpp"
#include "doctest.h"

using namespace cnls;

TEST_CASE("philox4x32-10 known answers") {
  // Reference vectors distributed with Random123.
  CHECK(Philox4x32::generate({0, 0, 0, 0}, {0, 0}) ==
        Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("uniforms lie in (0,1]") {
  CHECK(uniform_from_bits(0, 0) > 0.0);
  CHECK(uniform_from_bits(0xffffffffu, 0xffffffffu) == 1.0);
}

TEST_CASE("streams are pure functions of their address") {
  const StreamId id{42, 0, 7};
  const CounterStream a(id), b(id);
  CHECK(a.normal_pair(10, 3) == b.normal_pair(10, 3));
  CHECK(a.normal_pair(10, 3) != a.normal_pair(11, 3));
  CHECK(a.normal_pair(10, 3) != CounterStream(id.with_trajectory(8)).normal_pair(10, 3));
  CHECK(a.normal_pair(10, 3) != CounterStream(id.with_lane(Lane::kCoupling)).normal_pair(10, 3));
  CHECK(a.normal_pair(10, 3) != CounterStream(StreamId{43, 0, 7}).normal_pair(10, 3));
}

TEST_CASE("normal moments") {
  const CounterStream s(StreamId{1, 0, 0});
  const int n = 200000;
  double m1 = 0, m2 = 0, m4 = 0, cross = 0;
  for (int i = 0; i < n; ++i) {
    const auto [x, y] = s.normal_pair(static_cast<std::uint64_t>(i), 0);
    m1 += x + y;
    m2 += x * x + y * y;
    m4 += x * x * x * x + y * y * y * y;
    cross += x * y;
  }
  const double m = 2.0 * n;
  CHECK(std::abs(m1 / m) < 4.0 / std::sqrt(m));
  CHECK(std::abs(m2 / m - 1.0) < 4.0 * std::sqrt(2.0 / m));
  CHECK(std::abs(m4 / m - 3.0) < 4.0 * std::sqrt(96.0 / m));
  CHECK(std::abs(cross / n) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("sequential generator works with std distributions") {
  SequentialRng rng(StreamId{5, 6, 0});
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(rng());
  CHECK(seen.size() == 1000);
  double sum = 0;
  for (int i = 0; i < 100000; ++i) sum += rng.uniform();
  CHECK(std::abs(sum / 100000 - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / 100000));
}
