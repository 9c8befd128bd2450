#pragma once

#include <cctype>
#include <cstdint>
#include <memory>
#include <string_view>

#include "gatescope/messages.hpp"

namespace gatescope {

class TokenCounter {
public:
    virtual ~TokenCounter() = default;
    virtual std::int64_t count(std::string_view text) const = 0;
};

// Approximate counter: one token per alphanumeric run, one per other
// non-space character. Both the auditor's local estimates and the simulator's
// internal accounting use this same rule, so conformance checks of a
// simulated gateway agree exactly unless a misbehavior knob skews them.
class ApproxTokenCounter final : public TokenCounter {
public:
    std::int64_t count(std::string_view text) const override {
        std::int64_t n = 0;
        std::size_t i = 0;
        while (i < text.size()) {
            const unsigned char c = static_cast<unsigned char>(text[i]);
            if (std::isspace(c)) { ++i; continue; }
            if (std::isalnum(c)) {
                ++n;
                while (i < text.size() &&
                       std::isalnum(static_cast<unsigned char>(text[i]))) ++i;
            } else {
                ++n;
                ++i;
            }
        }
        return n;
    }
};

inline const TokenCounter& default_token_counter() {
    static const ApproxTokenCounter counter;
    return counter;
}

// Chat-format prompt size: content tokens plus a fixed 4-token envelope per
// message and a 2-token reply priming overhead.
inline std::int64_t message_tokens(const MessageList& messages,
                                   const TokenCounter& counter = default_token_counter()) {
    std::int64_t total = 2;
    for (const auto& m : messages) total += 4 + counter.count(m.content);
    return total;
}

}  // namespace gatescope
