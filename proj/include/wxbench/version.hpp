// SPDX-License-Identifier: MIT
#pragma once

#define WXBENCH_VERSION_MAJOR 0
#define WXBENCH_VERSION_MINOR 1
#define WXBENCH_VERSION_PATCH 0
#define WXBENCH_VERSION_STRING "0.1.0"

namespace wxbench {
inline constexpr const char* version() { return WXBENCH_VERSION_STRING; }
}  // namespace wxbench
