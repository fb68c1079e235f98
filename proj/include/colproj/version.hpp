#pragma once

namespace colproj {

inline constexpr const char* kToolName = "colproj";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace colproj
