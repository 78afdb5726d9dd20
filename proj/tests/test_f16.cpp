#include "doctest.h"

#include <cmath>

#include "cloq/f16.hpp"

#include "support.hpp"

using namespace cloq;

TEST_CASE("f16 decode-encode identity over all finite patterns") {
  for (std::uint32_t h = 0; h < 0x10000u; ++h) {
    const std::uint16_t half = static_cast<std::uint16_t>(h);
    const float f = f16_to_f32(half);
    if (std::isnan(f)) continue;  // nan payloads need not round-trip bit-exactly
    CAPTURE(h);
    CHECK(f32_to_f16(f) == half);
  }
}

TEST_CASE("f16 encode picks the nearest representable half") {
  testing::Rng rng(42);
  for (int trial = 0; trial < 2000; ++trial) {
    const float f = static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform(-4, 4)));
    const std::uint16_t h = f32_to_f16(f);
    const float decoded = f16_to_f32(h);
    if (std::isinf(decoded)) {
      CHECK(std::abs(f) >= 65504.0f);  // beyond the largest finite half
      continue;
    }
    // No other half may be strictly closer.
    const double err = std::abs(static_cast<double>(decoded) - static_cast<double>(f));
    for (int delta : {-1, 1}) {
      const std::uint16_t other = static_cast<std::uint16_t>(h + delta);
      const float other_f = f16_to_f32(other);
      if (std::isnan(other_f) || std::isinf(other_f)) continue;
      if ((other & 0x8000u) != (h & 0x8000u)) continue;
      CHECK(err <= std::abs(static_cast<double>(other_f) - static_cast<double>(f)) + 0.0);
    }
  }
}

TEST_CASE("f16 specials") {
  CHECK(f16_to_f32(0x0000) == 0.0f);
  CHECK(f16_to_f32(0x8000) == -0.0f);
  CHECK(std::signbit(f16_to_f32(0x8000)));
  CHECK(f16_to_f32(0x7C00) == std::numeric_limits<float>::infinity());
  CHECK(f16_to_f32(0xFC00) == -std::numeric_limits<float>::infinity());
  CHECK(std::isnan(f16_to_f32(0x7E00)));
  CHECK(f32_to_f16(1.0f) == 0x3C00);
  CHECK(f32_to_f16(65504.0f) == 0x7BFF);
  CHECK(f32_to_f16(1.0e10f) == 0x7C00);  // overflow to +inf
  CHECK(std::isnan(f16_to_f32(f32_to_f16(std::nanf("")))));
}
