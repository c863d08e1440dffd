#include "unicode.hpp"

namespace sqtag::unicode {

namespace {

constexpr char32_t kReplacement = 0xFFFD;

// Latin Extended-A alternates parity between its upper/lower pairs.
bool ext_a_is_upper(char32_t c) {
  if (c <= 0x0137) return c % 2 == 0;
  if (c == 0x0138) return false;
  if (c <= 0x0148) return c % 2 == 1;
  if (c == 0x0149) return false;
  if (c <= 0x0177) return c % 2 == 0;
  if (c == 0x0178) return true;
  if (c <= 0x017E) return c % 2 == 1;
  return false;  // U+017F long s
}

}  // namespace

std::vector<char32_t> decode(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    auto b = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b < 0x80) {
      len = 1;
      cp = b;
    } else if ((b & 0xE0) == 0xC0) {
      len = 2;
      cp = b & 0x1F;
    } else if ((b & 0xF0) == 0xE0) {
      len = 3;
      cp = b & 0x0F;
    } else if ((b & 0xF8) == 0xF0) {
      len = 4;
      cp = b & 0x07;
    } else {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out.push_back(kReplacement);
      break;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      auto cont = static_cast<unsigned char>(s[i + k]);
      if ((cont & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cont & 0x3F);
    }
    if (!ok) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode(const std::vector<char32_t>& cps) {
  std::string out;
  for (char32_t c : cps) {
    if (c < 0x80) {
      out += static_cast<char>(c);
    } else if (c < 0x800) {
      out += static_cast<char>(0xC0 | (c >> 6));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else if (c < 0x10000) {
      out += static_cast<char>(0xE0 | (c >> 12));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (c >> 18));
      out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    }
  }
  return out;
}

bool is_upper(char32_t c) {
  if (c >= 'A' && c <= 'Z') return true;
  if (c >= 0x00C0 && c <= 0x00DE) return c != 0x00D7;
  if (c >= 0x0100 && c <= 0x017F) return ext_a_is_upper(c);
  if (c == 0x01A0 || c == 0x01AF) return true;
  if (c >= 0x1E00 && c <= 0x1EFF) return c == 0x1E9E || (c % 2 == 0 && !(c >= 0x1E96 && c <= 0x1E9F));
  if (c >= 0x0391 && c <= 0x03A9) return c != 0x03A2;
  if (c >= 0x0400 && c <= 0x042F) return true;
  return false;
}

bool is_lower(char32_t c) {
  if (c >= 'a' && c <= 'z') return true;
  if (c >= 0x00DF && c <= 0x00FF) return c != 0x00F7;
  if (c >= 0x0100 && c <= 0x017F) return !ext_a_is_upper(c);
  if (c == 0x01A1 || c == 0x01B0) return true;
  if (c >= 0x1E00 && c <= 0x1EFF) return !is_upper(c);
  if (c >= 0x03B1 && c <= 0x03C9) return true;
  if (c >= 0x0430 && c <= 0x045F) return true;
  return false;
}

char32_t to_lower(char32_t c) {
  if (!is_upper(c)) return c;
  if (c <= 'Z') return c + 0x20;
  if (c <= 0x00DE) return c + 0x20;
  if (c == 0x0178) return 0x00FF;
  if (c >= 0x0100 && c <= 0x017F) return c + 1;
  if (c == 0x01A0 || c == 0x01AF) return c + 1;
  if (c == 0x1E9E) return 0x00DF;
  if (c >= 0x1E00 && c <= 0x1EFF) return c + 1;
  if (c >= 0x0391 && c <= 0x03A9) return c + 0x20;
  if (c >= 0x0410 && c <= 0x042F) return c + 0x20;
  if (c >= 0x0400 && c <= 0x040F) return c + 0x50;
  return c;
}

std::string to_lower(std::string_view utf8) {
  std::vector<char32_t> cps = decode(utf8);
  for (auto& c : cps) c = to_lower(c);
  return encode(cps);
}

}  // namespace sqtag::unicode
