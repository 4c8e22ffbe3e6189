#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ksac {

/// Parses line-oriented `key = value` text. `#` starts a comment; blank
/// lines are skipped. Throws ConfigError on malformed lines or duplicates.
std::map<std::string, std::string> parse_key_values(const std::string& text);

std::vector<std::int64_t> parse_int_list(const std::string& text);
std::string format_int_list(const std::vector<std::int64_t>& values);
std::int64_t parse_int(const std::string& key, const std::string& text);
std::uint64_t parse_u64(const std::string& key, const std::string& text);
double parse_real(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace ksac
