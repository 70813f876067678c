#include "headprobe/tokenizer.hpp"

#include "headprobe/common.hpp"

namespace headprobe {

const std::string_view kSystemPrompt =
    "You are an evaluator trained to assess perceived trustworthiness– that is, whether you "
    "think a review seems trustworthy or not";
const std::string_view kReviewPrefix = "Review: ";
const std::string_view kReviewSuffix =
    ", After reading the product review, respond with ONLY ONE WORD: 'high' or 'low'. Answer:";

namespace {

constexpr std::string_view kSystemTag = "<system>\n";
constexpr std::string_view kUserTag = "\n<user>\n";

std::string rendered_head() {
  std::string s;
  s += kSystemTag;
  s += kSystemPrompt;
  s += kUserTag;
  s += kReviewPrefix;
  return s;
}

}  // namespace

std::vector<Token> encode_bytes(std::string_view text) {
  std::vector<Token> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<Token>(c));
  return out;
}

std::string decode_tokens(const std::vector<Token>& tokens) {
  std::string out;
  for (Token t : tokens) {
    if (t == kHighToken) {
      out += "high";
    } else if (t == kLowToken) {
      out += "low";
    } else {
      out += static_cast<char>(static_cast<unsigned char>(t));
    }
  }
  return out;
}

std::size_t template_overhead_tokens() {
  return rendered_head().size() + kReviewSuffix.size();
}

Prompt format_prompt(std::string_view review, std::size_t max_context) {
  auto body = encode_bytes(review);
  if (body.empty()) throw InvalidArgument("review tokenizes to zero tokens");
  const auto head = encode_bytes(rendered_head());
  const auto tail = encode_bytes(kReviewSuffix);
  const std::size_t overhead = head.size() + tail.size();
  if (max_context < overhead + 1) {
    throw InvalidArgument("max_context " + std::to_string(max_context) +
                          " cannot hold the prompt template (" + std::to_string(overhead) +
                          " tokens) plus a review");
  }
  Prompt p;
  const std::size_t budget = max_context - overhead;
  p.review_tokens = std::min(budget, body.size());
  p.dropped = body.size() - p.review_tokens;
  p.tokens.reserve(overhead + p.review_tokens);
  p.tokens.insert(p.tokens.end(), head.begin(), head.end());
  p.tokens.insert(p.tokens.end(), body.begin(), body.begin() + static_cast<std::ptrdiff_t>(p.review_tokens));
  p.tokens.insert(p.tokens.end(), tail.begin(), tail.end());
  return p;
}

}  // namespace headprobe
