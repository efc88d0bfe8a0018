#pragma once

namespace advsec {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace advsec
