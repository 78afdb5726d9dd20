#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace cloq {

/// IEEE 754 binary16 <-> binary32 conversion. Encoding rounds to nearest,
/// ties to even; values beyond the half range become +/-inf.
inline std::uint16_t f32_to_f16(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  std::uint32_t mant = x & 0x007FFFFFu;
  const std::uint32_t exp32 = (x >> 23) & 0xFFu;

  if (exp32 == 0xFFu) {  // inf or nan
    if (mant == 0) return static_cast<std::uint16_t>(sign | 0x7C00u);
    std::uint32_t payload = mant >> 13;
    if (payload == 0) payload = 1;  // keep nan a nan
    return static_cast<std::uint16_t>(sign | 0x7C00u | payload);
  }

  const std::int32_t exp = static_cast<std::int32_t>(exp32) - 127 + 15;
  if (exp >= 0x1F) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow
  if (exp <= 0) {
    if (exp < -10) return static_cast<std::uint16_t>(sign);  // underflow to zero
    mant |= 0x00800000u;
    const std::uint32_t shift = static_cast<std::uint32_t>(14 - exp);  // 14..24
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) half++;
    return static_cast<std::uint16_t>(sign | half);  // carry lands in exp=1 correctly
  }

  std::uint32_t half = (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) half++;  // may carry to inf
  return static_cast<std::uint16_t>(sign | half);
}

inline float f16_to_f32(std::uint16_t h) {
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  const std::uint32_t mant = h & 0x3FFu;
  float val;
  if (exp == 0) {
    val = std::ldexp(static_cast<float>(mant), -24);
  } else if (exp == 0x1F) {
    if (mant != 0) {
      std::uint32_t bits = 0x7F800000u | (mant << 13);
      return std::bit_cast<float>(bits | ((h & 0x8000u) ? 0x80000000u : 0u));
    }
    val = std::numeric_limits<float>::infinity();
  } else {
    val = std::ldexp(static_cast<float>(mant | 0x400u), static_cast<int>(exp) - 25);
  }
  return (h & 0x8000u) ? -val : val;
}

}  // namespace cloq
