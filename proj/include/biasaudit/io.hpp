#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace biasaudit {

// Filesystem-level failure, mapped to its own CLI exit code.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Locale-independent number formatting and CSV plumbing.
//
// Doubles are printed with std::to_chars shortest round-trip form, so a value
// written to CSV or JSON parses back bit-identical. This is what makes audit
// mode able to reproduce a run's metrics exactly from its exported scores.

std::string fmt_double(double v);               // "inf"/"-inf"/"nan" for non-finite
std::string fmt_optional(const std::optional<double>& v); // empty string when absent

double parse_double(std::string_view s);        // throws std::invalid_argument
long long parse_int(std::string_view s);        // throws std::invalid_argument
std::optional<double> parse_optional(std::string_view s); // empty -> nullopt

// Minimal CSV: comma-separated, no quoting. Field content is validated at
// write time instead (identifiers must not contain commas or newlines).
std::vector<std::string> split_csv_line(std::string_view line);
std::string join_csv(const std::vector<std::string>& fields);

std::string read_text_file(const std::string& path);   // throws IoError
void write_text_file(const std::string& path, std::string_view content);

} // namespace biasaudit
