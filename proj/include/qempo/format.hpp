#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace qempo {

// Shortest round-trip decimal form of a double; non-finite values print as
// nan / inf / -inf.
inline std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

}  // namespace qempo
