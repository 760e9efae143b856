#pragma once

namespace carve {

inline constexpr const char* kCliVersion = "0.1.0";

}  // namespace carve
