#pragma once

// Number formatting for the CSV surfaces. %.17g round-trips every double
// exactly through strtod, which the byte-identical rerun guarantee relies on.

#include <cstdio>
#include <string>

namespace fedsel {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

}  // namespace fedsel
