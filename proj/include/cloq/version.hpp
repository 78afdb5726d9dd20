#pragma once

#include <string_view>

namespace cloq {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr std::string_view kCreator = "cloq 0.1.0";

}  // namespace cloq
