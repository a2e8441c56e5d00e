#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgic {

using TokenId = std::uint32_t;

inline constexpr std::string_view kEndToken = "</s>";

// Fixed vocabulary with a reserved end-of-sequence token. Encoding is greedy
// longest match over the non-END tokens.
class Tokenizer {
public:
    // Throws if `end_token` is missing or tokens repeat.
    explicit Tokenizer(std::vector<std::string> tokens, std::string_view end_token = kEndToken);

    // One token per UTF-8 code point seen in `texts`, END first.
    static Tokenizer characters(std::span<const std::string> texts);

    TokenId end() const { return end_; }
    std::size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::optional<TokenId> find(std::string_view token) const;

    // Throws if some part of `text` cannot be covered.
    std::vector<TokenId> encode(std::string_view text) const;
    // Concatenation of the tokens, stopping at END.
    std::string decode(std::span<const TokenId> ids) const;
    bool round_trips(std::string_view text) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
    TokenId end_ = 0;
    std::size_t max_token_bytes_ = 0;
};

// Splits UTF-8 into code points; invalid bytes come out one per piece.
std::vector<std::string> utf8_code_points(std::string_view text);

}  // namespace kgic
