#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace paincast::csv {

/// Splits one line on commas. Quoting is not supported; ids and values in
/// every paincast file are comma-free.
std::vector<std::string_view> split(std::string_view line);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::string_view trim(std::string_view text);

}  // namespace paincast::csv
