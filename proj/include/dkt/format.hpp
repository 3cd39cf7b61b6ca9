#pragma once

#include <charconv>
#include <string>

namespace dkt {

// Shortest round-trip decimal form, the same policy the JSON writer uses.
// Keeps every report byte-reproducible.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace dkt
