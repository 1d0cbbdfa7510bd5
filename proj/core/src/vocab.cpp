#include "mpc/vocab.hpp"

#include <algorithm>
#include <set>

namespace mpc {

std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      throw Error("utf8: invalid lead byte at offset " + std::to_string(i));
    }
    if (i + len > s.size()) throw Error("utf8: truncated sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) throw Error("utf8: invalid continuation byte at offset " + std::to_string(i + k));
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw Error("utf8: invalid code point at offset " + std::to_string(i));
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(std::u32string_view s) {
  std::string out;
  for (char32_t c : s) {
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else if (c < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else if (c < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (c >> 12)));
      out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (c >> 18)));
      out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::u32string chars) : chars_(std::move(chars)) {
  std::u32string sorted = chars_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw Error("vocabulary: duplicate character");
}

Vocabulary Vocabulary::from_transcripts(const std::vector<std::string>& transcripts) {
  std::set<char32_t> seen;
  for (const auto& t : transcripts) {
    for (char32_t c : utf8_decode(t)) seen.insert(c);
  }
  return Vocabulary(std::u32string(seen.begin(), seen.end()));
}

bool Vocabulary::contains(char32_t c) const { return chars_.find(c) != std::u32string::npos; }

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (char32_t c : utf8_decode(text)) {
    const auto pos = chars_.find(c);
    if (pos == std::u32string::npos) {
      throw Error("vocabulary: character '" + utf8_encode(std::u32string(1, c)) + "' is not in the vocabulary");
    }
    ids.push_back(pos + kFirstChar);
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::u32string out;
  for (TokenId id : ids) {
    if (is_char(id)) out.push_back(chars_[id - kFirstChar]);
  }
  return utf8_encode(out);
}

}  // namespace mpc
