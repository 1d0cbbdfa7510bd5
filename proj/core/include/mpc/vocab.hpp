#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mpc/ctc.hpp"

namespace mpc {

/// Decodes UTF-8 into Unicode scalar values. Throws on malformed input.
std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);

/// Character vocabulary with reserved ids: 0 = CTC blank, 1 = <sos>,
/// 2 = <eos>; characters start at 3 in the order given.
class Vocabulary {
 public:
  static constexpr TokenId kBlank = 0;
  static constexpr TokenId kSos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kFirstChar = 3;

  Vocabulary() = default;
  explicit Vocabulary(std::u32string chars);
  /// Sorted set of all characters appearing in the transcripts.
  static Vocabulary from_transcripts(const std::vector<std::string>& transcripts);
  static Vocabulary from_utf8(std::string_view chars) { return Vocabulary(utf8_decode(chars)); }

  std::size_t size() const { return chars_.size() + kFirstChar; }
  const std::u32string& chars() const { return chars_; }
  std::string chars_utf8() const { return utf8_encode(chars_); }

  bool contains(char32_t c) const;
  /// Throws mpc::Error naming the first out-of-vocabulary character.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(const std::vector<TokenId>& ids) const;
  bool is_char(TokenId id) const { return id >= kFirstChar && id < size(); }

 private:
  std::u32string chars_;
};

}  // namespace mpc
