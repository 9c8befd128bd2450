#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace gatescope {

struct ChatMessage {
    std::string role;
    std::string content;
};

inline void to_json(nlohmann::json& j, const ChatMessage& m) {
    j = nlohmann::json{{"role", m.role}, {"content", m.content}};
}

inline void from_json(const nlohmann::json& j, ChatMessage& m) {
    j.at("role").get_to(m.role);
    j.at("content").get_to(m.content);
}

using MessageList = std::vector<ChatMessage>;

}  // namespace gatescope
