#pragma once

#include <string>
#include <string_view>

namespace cotprobe {

/// Shortest decimal string that parses back to the same double. Used for
/// every float that crosses a file or wire boundary.
std::string real_to_string(double v);

/// Inverse of real_to_string; throws std::invalid_argument on junk.
double real_from_string(std::string_view s);

/// Fixed-point rendering with `digits` decimals ("0.921").
std::string fixed(double v, int digits);

}  // namespace cotprobe
