#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace glab {

// Shortest decimal text that parses back to the same double.
std::string format_shortest(double value);
// 17 significant digits, the CSV float format.
std::string format_g17(double value);

std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

// Strict numeric parsing: the whole (trimmed) string must be consumed.
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

}  // namespace glab
