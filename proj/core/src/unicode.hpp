#pragma once

#include <string>
#include <string_view>
#include <vector>

// Minimal UTF-8 and letter-case support covering Latin (including the
// Vietnamese extended block), Greek and Cyrillic. Anything outside those
// ranges is treated as a caseless symbol.
namespace sqtag::unicode {

std::vector<char32_t> decode(std::string_view utf8);
std::string encode(const std::vector<char32_t>& code_points);

bool is_upper(char32_t c);
bool is_lower(char32_t c);
inline bool is_cased_letter(char32_t c) { return is_upper(c) || is_lower(c); }

char32_t to_lower(char32_t c);
std::string to_lower(std::string_view utf8);

}  // namespace sqtag::unicode
