#pragma once

namespace aipw {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace aipw
