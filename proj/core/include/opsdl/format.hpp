#pragma once

#include <cstdio>
#include <string>

namespace opsdl {

// Shortest round-trippable decimal form; used for all CSV output so files are
// byte-reproducible.
inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace opsdl
