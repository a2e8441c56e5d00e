#include "kgic/tokenizer.hpp"

#include <algorithm>
#include <set>

#include "kgic/error.hpp"

namespace kgic {

Tokenizer::Tokenizer(std::vector<std::string> tokens, std::string_view end_token) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) throw Error("tokenizer: empty token at id " + std::to_string(i));
        if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
            throw Error("tokenizer: duplicate token '" + tokens_[i] + "'");
    }
    auto it = ids_.find(std::string(end_token));
    if (it == ids_.end()) throw Error("tokenizer: vocabulary lacks end token '" + std::string(end_token) + "'");
    end_ = it->second;
    for (std::size_t i = 0; i < tokens_.size(); ++i)
        if (i != end_) max_token_bytes_ = std::max(max_token_bytes_, tokens_[i].size());
}

Tokenizer Tokenizer::characters(std::span<const std::string> texts) {
    std::set<std::string> chars;
    for (const auto& t : texts)
        for (auto& cp : utf8_code_points(t)) chars.insert(std::move(cp));
    chars.erase(std::string(kEndToken));
    std::vector<std::string> vocab{std::string(kEndToken)};
    vocab.insert(vocab.end(), chars.begin(), chars.end());
    return Tokenizer(std::move(vocab));
}

std::optional<TokenId> Tokenizer::find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        bool matched = false;
        for (std::size_t len = std::min(max_token_bytes_, text.size() - pos); len > 0; --len) {
            auto it = ids_.find(std::string(text.substr(pos, len)));
            if (it == ids_.end() || it->second == end_) continue;
            out.push_back(it->second);
            pos += len;
            matched = true;
            break;
        }
        if (!matched)
            throw Error("tokenizer: cannot encode '" + std::string(text) + "' at byte " + std::to_string(pos));
    }
    return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (const auto id : ids) {
        if (id == end_) break;
        out += tokens_.at(id);
    }
    return out;
}

bool Tokenizer::round_trips(std::string_view text) const {
    try {
        return decode(encode(text)) == text;
    } catch (const Error&) {
        return false;
    }
}

std::vector<std::string> utf8_code_points(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (c >= 0xF0 && c < 0xF8) len = 4;
        else if (c >= 0xE0) len = 3;
        else if (c >= 0xC0) len = 2;
        if (c >= 0xF8 || (c >= 0x80 && c < 0xC0)) len = 1;
        if (i + len > text.size()) len = 1;
        for (std::size_t k = 1; k < len; ++k)
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) len = 1;
        out.emplace_back(text.substr(i, len));
        i += len;
    }
    return out;
}

}  // namespace kgic
