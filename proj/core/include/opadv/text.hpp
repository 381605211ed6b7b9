#ifndef OPADV_TEXT_HPP_
#define OPADV_TEXT_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace opadv::text {

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string_view> split_lines(std::string_view s);

/// Shortest text that parses back to the identical double.
std::string format_exact(double value);
/// Fixed-point with `decimals` digits; "-0.000000" is normalized to "0.000000".
std::string format_fixed(double value, int decimals = 6);

double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);
bool parse_bool(std::string_view s);

/// Splits `key=value key=value ...` where a value may be a bracketed list
/// containing spaces.
struct Field {
  std::string_view key;
  std::string_view value;
};
std::vector<Field> split_fields(std::string_view line);

std::string format_int_list(const std::vector<std::int64_t>& values);
/// Parses "[1 2 3]". Throws std::invalid_argument on malformed input.
std::vector<std::int64_t> parse_int_list(std::string_view s);

}  // namespace opadv::text

#endif  // OPADV_TEXT_HPP_
