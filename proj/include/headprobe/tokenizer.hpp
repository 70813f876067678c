#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace headprobe {

using Token = std::int32_t;

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by the two
/// dedicated answer tokens.
inline constexpr Token kHighToken = 256;
inline constexpr Token kLowToken = 257;
inline constexpr int kByteVocabSize = 258;

std::vector<Token> encode_bytes(std::string_view text);
std::string decode_tokens(const std::vector<Token>& tokens);

extern const std::string_view kSystemPrompt;
extern const std::string_view kReviewPrefix;  // user turn text before the review
extern const std::string_view kReviewSuffix;  // user turn text after the review, ends in "Answer:"

struct Prompt {
  std::vector<Token> tokens;
  std::size_t review_tokens = 0;  // review tokens kept
  std::size_t dropped = 0;        // review tokens removed by truncation
};

/// Renders the evaluator template around `review` and tokenizes it. When
/// the result exceeds `max_context`, tokens are dropped from the end of
/// the review body; the template prefix and the "Answer:" suffix are
/// always kept. Throws InvalidArgument for an empty review or a context
/// too short to hold the template plus one review token.
Prompt format_prompt(std::string_view review, std::size_t max_context);

std::size_t template_overhead_tokens();

}  // namespace headprobe
