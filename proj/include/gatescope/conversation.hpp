#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <tuple>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatescope/client.hpp"
#include "gatescope/jsonl.hpp"
#include "gatescope/records.hpp"
#include "gatescope/text.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

// 25 user turns: identity and preference assigned up front, two distractor
// segments to build context pressure, a mid-run preference update, and
// checkpoints at turns 10, 24 and 25.
struct ConversationScript {
    std::vector<std::string> turns;
    std::string identity = "toy expert";
    std::string initial_pref = "LEGO";
    std::string updated_pref = "Transformers";

    static constexpr int kTurnCount = 25;
    static constexpr int kIdentityCheckpoint = 10;
    static constexpr int kPreferenceUpdateTurn = 11;
    static constexpr int kFinalIdentityCheckpoint = 24;
    static constexpr int kFinalPreferenceCheckpoint = 25;

    void validate() const {
        if (turns.size() != kTurnCount)
            throw Error("conversation script: expected " + std::to_string(kTurnCount) +
                        " turns, got " + std::to_string(turns.size()));
        for (std::size_t i = 0; i < turns.size(); ++i)
            if (turns[i].empty())
                throw Error("conversation script: empty turn " + std::to_string(i + 1));
        if (identity.empty() || initial_pref.empty() || updated_pref.empty())
            throw Error("conversation script: empty checkpoint value");
    }

    static ConversationScript standard() {
        ConversationScript s;
        s.turns = {
            "You are a toy expert. Your current favorite toy is LEGO.",
            "Discuss properties of plastics used in consumer goods.",
            "Summarize trade offs among durability, weight, and cost for those plastics.",
            "Which plastics are easiest to recycle, and why?",
            "Explain how injection molding shapes plastic parts.",
            "Compare ABS and polypropylene for impact resistance.",
            "What additives improve UV stability in outdoor plastics?",
            "Describe how recycled pellets are graded for quality.",
            "Give two examples of food-safe plastics and their limits.",
            "What is your professional identity now?",
            "Your favorite toy is now Transformers.",
            "Answer short questions about electric vehicles.",
            "How does regenerative braking recover energy?",
            "What factors limit fast-charging speed?",
            "Compute a simple battery charging time using t = C x (0.8 - 0.2) / (P x eta), "
            "with C = 75 kWh, P = 11 kW, and eta = 0.9.",
            "Explain the difference between AC and DC charging.",
            "Why do cold temperatures reduce driving range?",
            "What is battery preconditioning and when is it useful?",
            "Summarize common EV battery chemistries in one line each.",
            "How do thermal management systems protect battery packs?",
            "What does state of health mean for a traction battery?",
            "Describe vehicle-to-grid charging in two sentences.",
            "How often should tire pressure be checked on heavy EVs?",
            "What is your professional identity?",
            "What is your favorite toy now?",
        };
        return s;
    }
};

struct TranscriptTurn {
    int turn_index = 0;  // 1-based
    std::string user_message;
    std::string reply_text;
    std::optional<std::string> system_fingerprint;
    std::optional<std::string> response_id;
    Usage usage;
    double wall_time = 0.0;
    CallOutcome outcome = CallOutcome::ok;
};

struct TranscriptRecord {
    std::string gateway;
    std::string model;
    int run_index = 0;
    std::vector<TranscriptTurn> turns;
    bool failed = false;
    int failed_at_turn = 0;  // 1-based, 0 when the run completed

    bool complete() const { return !failed; }

    const TranscriptTurn& turn(int index_1based) const {
        if (index_1based < 1 || static_cast<std::size_t>(index_1based) > turns.size())
            throw Error("transcript: no turn " + std::to_string(index_1based));
        return turns[static_cast<std::size_t>(index_1based) - 1];
    }
};

// Each request carries the full prior history; transport-level retries resend
// that identical request, so the history is never silently truncated.
inline TranscriptRecord run_conversation(GatewayClient& client, const std::string& model,
                                         const ConversationScript& script,
                                         const RequestParams& base_params, int run_index = 0) {
    script.validate();
    TranscriptRecord tr;
    tr.gateway = client.profile().name;
    tr.model = model;
    tr.run_index = run_index;

    RequestParams params = base_params;
    params.model = model;

    MessageList history;
    for (std::size_t i = 0; i < script.turns.size(); ++i) {
        const int turn_no = static_cast<int>(i) + 1;
        history.push_back({"user", script.turns[i]});
        const std::string tag = "conv-turn-" + std::to_string(turn_no);
        const CallRecord rec = client.send_chat(history, params, tag, run_index);

        TranscriptTurn t;
        t.turn_index = turn_no;
        t.user_message = script.turns[i];
        t.reply_text = rec.raw_text;
        t.system_fingerprint = rec.system_fingerprint;
        t.response_id = rec.response_id;
        t.usage = rec.usage;
        t.wall_time = rec.wall_time;
        t.outcome = rec.outcome;
        tr.turns.push_back(std::move(t));

        if (!rec.ok()) {
            tr.failed = true;
            tr.failed_at_turn = turn_no;
            break;
        }
        history.push_back({"assistant", rec.raw_text});
    }
    return tr;
}

struct CheckpointScores {
    bool t10_pass = false;
    bool t24_pass = false;
    bool t25_pass = false;
};

inline CheckpointScores score_checkpoints(const TranscriptRecord& tr,
                                          const ConversationScript& script) {
    if (!tr.complete() || tr.turns.size() != ConversationScript::kTurnCount)
        throw Error("score_checkpoints: transcript incomplete");
    CheckpointScores s;
    const auto& r10 = tr.turn(ConversationScript::kIdentityCheckpoint).reply_text;
    const auto& r24 = tr.turn(ConversationScript::kFinalIdentityCheckpoint).reply_text;
    const auto& r25 = tr.turn(ConversationScript::kFinalPreferenceCheckpoint).reply_text;
    s.t10_pass = contains_normalized(r10, script.identity);
    s.t24_pass = contains_normalized(r24, script.identity);
    // The updated preference must be present and the stale one gone.
    s.t25_pass = contains_normalized(r25, script.updated_pref) &&
                 !contains_normalized(r25, script.initial_pref);
    return s;
}

struct ConversationMetrics {
    int runs_total = 0;
    int runs_effective = 0;  // completed runs; failed runs are excluded throughout
    int t10 = 0;
    int t24 = 0;
    int t25 = 0;
    int fingerprint_count = 0;
    std::int64_t pooled_cached_tokens = 0;
    std::int64_t pooled_prompt_tokens = 0;
    bool cache_reported = false;
    double cache_rate_percent = 0.0;  // meaningful only when cache_reported
};

inline ConversationMetrics aggregate_runs(const std::vector<TranscriptRecord>& runs,
                                          const ConversationScript& script) {
    ConversationMetrics m;
    std::set<std::string> fingerprints;
    for (const auto& run : runs) {
        m.runs_total += 1;
        if (!run.complete()) continue;
        m.runs_effective += 1;
        const CheckpointScores s = score_checkpoints(run, script);
        m.t10 += s.t10_pass ? 1 : 0;
        m.t24 += s.t24_pass ? 1 : 0;
        m.t25 += s.t25_pass ? 1 : 0;
        for (const auto& t : run.turns) {
            if (t.system_fingerprint.has_value() && !t.system_fingerprint->empty())
                fingerprints.insert(*t.system_fingerprint);
            if (t.usage.reported) {
                m.pooled_prompt_tokens += t.usage.prompt_tokens;
                if (t.usage.cache_field_reported) {
                    m.cache_reported = true;
                    m.pooled_cached_tokens += t.usage.cached_tokens;
                }
            }
        }
    }
    m.fingerprint_count = static_cast<int>(fingerprints.size());
    if (m.cache_reported && m.pooled_prompt_tokens > 0) {
        const double raw = static_cast<double>(m.pooled_cached_tokens) /
                           static_cast<double>(m.pooled_prompt_tokens) * 100.0;
        m.cache_rate_percent = std::round(raw * 10.0) / 10.0;
    }
    return m;
}

// Billing view of completed conversation runs: one record per turn, carrying
// the usage and response id needed to join against a gateway ledger.
inline std::vector<CallRecord> billing_records(const std::vector<TranscriptRecord>& runs) {
    std::vector<CallRecord> out;
    for (const auto& run : runs) {
        if (!run.complete()) continue;
        for (const auto& t : run.turns) {
            CallRecord rec;
            rec.probe_id = "conv-run" + std::to_string(run.run_index) + "-turn" +
                           std::to_string(t.turn_index);
            rec.gateway = run.gateway;
            rec.model = run.model;
            rec.repetition_index = run.run_index;
            rec.raw_text = t.reply_text;
            rec.usage = t.usage;
            rec.system_fingerprint = t.system_fingerprint;
            rec.response_id = t.response_id;
            rec.attempt_count = 1;
            rec.wall_time = t.wall_time;
            rec.outcome = t.outcome;
            out.push_back(std::move(rec));
        }
    }
    return out;
}

inline nlohmann::json transcript_turn_json(const TranscriptRecord& tr, const TranscriptTurn& t) {
    nlohmann::json j{{"gateway", tr.gateway},
                     {"model", tr.model},
                     {"run", tr.run_index},
                     {"turn", t.turn_index},
                     {"user_message", t.user_message},
                     {"reply_text", t.reply_text},
                     {"usage", t.usage},
                     {"wall_time", t.wall_time},
                     {"outcome", to_string(t.outcome)},
                     {"failed_at_turn", tr.failed_at_turn}};
    j["system_fingerprint"] =
        t.system_fingerprint.has_value() ? nlohmann::json(*t.system_fingerprint)
                                         : nlohmann::json(nullptr);
    j["response_id"] = t.response_id.has_value() ? nlohmann::json(*t.response_id)
                                                 : nlohmann::json(nullptr);
    return j;
}

inline void save_transcripts(const std::string& path, const std::vector<TranscriptRecord>& runs,
                             bool append = false) {
    JsonlWriter w(path, append);
    for (const auto& tr : runs)
        for (const auto& t : tr.turns) w.write(transcript_turn_json(tr, t));
}

inline std::vector<TranscriptRecord> load_transcripts(const std::string& path) {
    std::map<std::tuple<std::string, std::string, int>, TranscriptRecord> grouped;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
        const auto key = std::make_tuple(j.at("gateway").get<std::string>(),
                                         j.at("model").get<std::string>(), j.at("run").get<int>());
        auto& tr = grouped[key];
        tr.gateway = std::get<0>(key);
        tr.model = std::get<1>(key);
        tr.run_index = std::get<2>(key);
        TranscriptTurn t;
        t.turn_index = j.at("turn").get<int>();
        t.user_message = j.at("user_message").get<std::string>();
        t.reply_text = j.at("reply_text").get<std::string>();
        if (j.contains("system_fingerprint") && !j["system_fingerprint"].is_null())
            t.system_fingerprint = j["system_fingerprint"].get<std::string>();
        if (j.contains("response_id") && !j["response_id"].is_null())
            t.response_id = j["response_id"].get<std::string>();
        t.usage = j.at("usage").get<Usage>();
        t.wall_time = j.at("wall_time").get<double>();
        t.outcome = parse_call_outcome(j.at("outcome").get<std::string>());
        const int failed_at = j.value("failed_at_turn", 0);
        if (failed_at > 0) {
            tr.failed = true;
            tr.failed_at_turn = failed_at;
        }
        tr.turns.push_back(std::move(t));
    });
    std::vector<TranscriptRecord> out;
    out.reserve(grouped.size());
    for (auto& [key, tr] : grouped) {
        std::sort(tr.turns.begin(), tr.turns.end(),
                  [](const TranscriptTurn& a, const TranscriptTurn& b) {
                      return a.turn_index < b.turn_index;
                  });
        out.push_back(std::move(tr));
    }
    return out;
}

}  // namespace gatescope
