#pragma once

namespace featviz {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace featviz
