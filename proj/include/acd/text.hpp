// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace acd {

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r' || s[i] == '\f' || s[i] == '\v')) ++i;
    std::size_t j = i;
    while (j < s.size() && !(s[j] == ' ' || s[j] == '\t' || s[j] == '\n' || s[j] == '\r' || s[j] == '\f' || s[j] == '\v')) ++j;
    if (j > i) words.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

/**
 * Open-domain QA answer normalization: lowercase, drop ASCII punctuation,
 * drop the articles a/an/the as standalone words, collapse whitespace.
 */
inline std::string normalize_answer(std::string_view text) {
  std::string stripped;
  stripped.reserve(text.size());
  for (char c : ascii_lower(text)) {
    const auto u = static_cast<unsigned char>(c);
    const bool punct = u < 128 && ((c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') ||
                                   (c >= '{' && c <= '~'));
    if (!punct) stripped += c;
  }
  std::string out;
  for (const auto& w : split_whitespace(stripped)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

/// True if the normalized needle occurs in the normalized haystack on word boundaries.
inline bool contains_normalized(std::string_view haystack, std::string_view needle) {
  const std::string n = normalize_answer(needle);
  if (n.empty()) return false;
  const std::string h = " " + normalize_answer(haystack) + " ";
  return h.find(" " + n + " ") != std::string::npos;
}

}  // namespace acd
