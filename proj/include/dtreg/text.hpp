#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dtreg::text {

std::string_view trim(std::string_view s) noexcept;
std::string lower(std::string_view s);
bool icontains(std::string_view haystack, std::string_view needle);
// Case-insensitive match of `needle` bounded by non-alphanumeric characters.
bool icontains_word(std::string_view haystack, std::string_view needle);
std::size_t word_count(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
// Lowercase, collapse internal whitespace/underscores/hyphens to one space.
std::string normalize_name(std::string_view s);

}  // namespace dtreg::text
