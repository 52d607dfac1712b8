#pragma once

#include <string>

namespace mbs {

/// 17 significant digits; parses back to the identical double.
std::string format_g17(double v);
/// Shortest decimal string that parses back to the identical double.
std::string format_shortest(double v);

}  // namespace mbs
