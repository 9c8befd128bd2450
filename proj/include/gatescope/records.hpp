#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gatescope/jsonl.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

// Sentinel entries in status_history for failures that never produced an
// HTTP status.
inline constexpr int kStatusTimeout = -1;
inline constexpr int kStatusTransport = -2;

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t cached_tokens = 0;
    std::int64_t completion_tokens = 0;
    bool reported = false;              // gateway returned a usage object at all
    bool cache_field_reported = false;  // cached_tokens field present
};

inline void to_json(nlohmann::json& j, const Usage& u) {
    j = {{"prompt_tokens", u.prompt_tokens},
         {"cached_tokens", u.cached_tokens},
         {"completion_tokens", u.completion_tokens},
         {"reported", u.reported},
         {"cache_field_reported", u.cache_field_reported}};
}

inline void from_json(const nlohmann::json& j, Usage& u) {
    u.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
    u.cached_tokens = j.value("cached_tokens", std::int64_t{0});
    u.completion_tokens = j.value("completion_tokens", std::int64_t{0});
    u.reported = j.value("reported", false);
    u.cache_field_reported = j.value("cache_field_reported", false);
}

enum class CallOutcome { ok, auth_error, client_error, retries_exhausted, timeout };

inline const char* to_string(CallOutcome o) {
    switch (o) {
        case CallOutcome::ok: return "ok";
        case CallOutcome::auth_error: return "auth_error";
        case CallOutcome::client_error: return "client_error";
        case CallOutcome::retries_exhausted: return "retries_exhausted";
        case CallOutcome::timeout: return "timeout";
    }
    return "?";
}

inline CallOutcome parse_call_outcome(std::string_view s) {
    if (s == "ok") return CallOutcome::ok;
    if (s == "auth_error") return CallOutcome::auth_error;
    if (s == "client_error") return CallOutcome::client_error;
    if (s == "retries_exhausted") return CallOutcome::retries_exhausted;
    if (s == "timeout") return CallOutcome::timeout;
    throw Error("unknown call outcome: " + std::string(s));
}

struct CallRecord {
    std::string probe_id;
    std::string gateway;
    std::string model;
    int repetition_index = 0;
    std::string raw_text;
    Usage usage;
    std::optional<std::string> system_fingerprint;
    std::optional<std::string> response_id;
    int attempt_count = 0;
    std::vector<int> status_history;
    double wall_time = 0.0;
    std::string timestamp;
    CallOutcome outcome = CallOutcome::ok;
    std::string error_message;

    bool ok() const { return outcome == CallOutcome::ok; }
};

inline void to_json(nlohmann::json& j, const CallRecord& r) {
    j = {{"probe_id", r.probe_id},
         {"gateway", r.gateway},
         {"model", r.model},
         {"repetition", r.repetition_index},
         {"raw_text", r.raw_text},
         {"usage", r.usage},
         {"system_fingerprint",
          r.system_fingerprint ? nlohmann::json(*r.system_fingerprint) : nlohmann::json()},
         {"response_id", r.response_id ? nlohmann::json(*r.response_id) : nlohmann::json()},
         {"attempt_count", r.attempt_count},
         {"status_history", r.status_history},
         {"wall_time", r.wall_time},
         {"timestamp", r.timestamp},
         {"outcome", to_string(r.outcome)},
         {"error", r.error_message}};
}

inline void from_json(const nlohmann::json& j, CallRecord& r) {
    j.at("probe_id").get_to(r.probe_id);
    j.at("gateway").get_to(r.gateway);
    j.at("model").get_to(r.model);
    r.repetition_index = j.value("repetition", 0);
    j.at("raw_text").get_to(r.raw_text);
    r.usage = j.value("usage", Usage{});
    if (j.contains("system_fingerprint") && j.at("system_fingerprint").is_string()) {
        r.system_fingerprint = j.at("system_fingerprint").get<std::string>();
    } else {
        r.system_fingerprint.reset();
    }
    if (j.contains("response_id") && j.at("response_id").is_string()) {
        r.response_id = j.at("response_id").get<std::string>();
    } else {
        r.response_id.reset();
    }
    r.attempt_count = j.value("attempt_count", 0);
    r.status_history = j.value("status_history", std::vector<int>{});
    r.wall_time = j.value("wall_time", 0.0);
    r.timestamp = j.value("timestamp", std::string{});
    r.outcome = parse_call_outcome(j.value("outcome", std::string{"ok"}));
    r.error_message = j.value("error", std::string{});
}

inline std::vector<CallRecord> load_records(const std::string& path) {
    std::vector<CallRecord> out;
    for (const auto& j : read_jsonl(path)) out.push_back(j.get<CallRecord>());
    return out;
}

}  // namespace gatescope
