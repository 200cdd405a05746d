#pragma once

#define IARS_VERSION_MAJOR 1
#define IARS_VERSION_MINOR 0
#define IARS_VERSION_PATCH 0
#define IARS_VERSION_STRING "1.0.0"

namespace iars {
inline const char* version() { return IARS_VERSION_STRING; }
}
