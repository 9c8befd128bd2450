#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatescope/billing.hpp"
#include "gatescope/http.hpp"
#include "gatescope/messages.hpp"
#include "gatescope/probe.hpp"
#include "gatescope/text.hpp"
#include "gatescope/tokenizer.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

struct LognormalParams {
    double mu = -2.0;
    double sigma = 0.3;
};

inline void to_json(nlohmann::json& j, const LognormalParams& p) {
    j = nlohmann::json{{"mu", p.mu}, {"sigma", p.sigma}};
}

inline void from_json(const nlohmann::json& j, LognormalParams& p) {
    j.at("mu").get_to(p.mu);
    j.at("sigma").get_to(p.sigma);
}

struct ModelPersona {
    std::string name;
    std::map<Domain, double> accuracy;  // per-domain correctness probability
    double accuracy_default = 0.9;
    int depth_min = 3;
    int depth_max = 5;
    double step_length_mean = 80.0;
    double step_length_spread = 12.0;
    double latex_prob = 0.1;
    double numeric_prob = 0.4;
    double parse_fail_prob = 0.02;
    double length_multiplier = 1.0;
    LognormalParams latency;

    double accuracy_for(Domain d) const {
        const auto it = accuracy.find(d);
        return it == accuracy.end() ? accuracy_default : it->second;
    }

    void validate() const {
        if (name.empty()) throw Error("persona: empty name");
        auto prob = [&](double p, const char* what) {
            if (p < 0.0 || p > 1.0)
                throw Error("persona '" + name + "': " + what + " outside [0,1]");
        };
        prob(accuracy_default, "accuracy_default");
        for (const auto& [d, p] : accuracy) prob(p, "accuracy");
        prob(latex_prob, "latex_prob");
        prob(numeric_prob, "numeric_prob");
        prob(parse_fail_prob, "parse_fail_prob");
        if (depth_min < 1 || depth_max < depth_min)
            throw Error("persona '" + name + "': bad depth range");
        if (step_length_mean <= 0 || step_length_spread < 0 || length_multiplier <= 0)
            throw Error("persona '" + name + "': bad step length profile");
        if (latency.sigma < 0) throw Error("persona '" + name + "': negative latency sigma");
    }

    // Number of profile parameters that differ from another persona.
    int differing_parameters(const ModelPersona& o) const {
        int n = 0;
        auto diff = [&](double a, double b) {
            if (std::abs(a - b) > 1e-12) ++n;
        };
        bool acc_differs = accuracy != o.accuracy;
        if (acc_differs || std::abs(accuracy_default - o.accuracy_default) > 1e-12) ++n;
        if (depth_min != o.depth_min || depth_max != o.depth_max) ++n;
        diff(step_length_mean, o.step_length_mean);
        diff(step_length_spread, o.step_length_spread);
        diff(latex_prob, o.latex_prob);
        diff(numeric_prob, o.numeric_prob);
        diff(parse_fail_prob, o.parse_fail_prob);
        diff(length_multiplier, o.length_multiplier);
        diff(latency.mu, o.latency.mu);
        diff(latency.sigma, o.latency.sigma);
        return n;
    }
};

inline void to_json(nlohmann::json& j, const ModelPersona& p) {
    nlohmann::json acc = nlohmann::json::object();
    for (const auto& [d, v] : p.accuracy) acc[to_string(d)] = v;
    j = nlohmann::json{{"name", p.name},
                       {"accuracy", acc},
                       {"accuracy_default", p.accuracy_default},
                       {"depth_range", {p.depth_min, p.depth_max}},
                       {"step_length_mean", p.step_length_mean},
                       {"step_length_spread", p.step_length_spread},
                       {"latex_prob", p.latex_prob},
                       {"numeric_prob", p.numeric_prob},
                       {"parse_fail_prob", p.parse_fail_prob},
                       {"length_multiplier", p.length_multiplier},
                       {"latency", p.latency}};
}

inline void from_json(const nlohmann::json& j, ModelPersona& p) {
    j.at("name").get_to(p.name);
    if (j.contains("accuracy"))
        for (const auto& [k, v] : j["accuracy"].items()) {
            const auto d = parse_domain(k);
            if (!d) throw Error("persona '" + p.name + "': unknown domain '" + k + "'");
            p.accuracy[*d] = v.get<double>();
        }
    p.accuracy_default = j.value("accuracy_default", 0.9);
    if (j.contains("depth_range")) {
        p.depth_min = j["depth_range"].at(0).get<int>();
        p.depth_max = j["depth_range"].at(1).get<int>();
    }
    p.step_length_mean = j.value("step_length_mean", 80.0);
    p.step_length_spread = j.value("step_length_spread", 12.0);
    p.latex_prob = j.value("latex_prob", 0.1);
    p.numeric_prob = j.value("numeric_prob", 0.4);
    p.parse_fail_prob = j.value("parse_fail_prob", 0.02);
    p.length_multiplier = j.value("length_multiplier", 1.0);
    if (j.contains("latency")) j["latency"].get_to(p.latency);
}

struct SubstitutionConfig {
    std::string target_persona;
    double probability = 0.0;
};

struct TruncationConfig {
    std::optional<std::int64_t> max_context_tokens;
};

struct BillingMisconfig {
    double markup_factor = 1.0;
    bool suppress_cache = false;
    double token_overreport_factor = 1.0;
    bool report_cache_field = true;
};

struct FingerprintConfig {
    std::optional<int> churn_period_turns;
};

struct LatencyMisconfig {
    std::optional<LognormalParams> secondary_mode;
    double mixture_weight = 0.0;
};

struct MisbehaviorConfig {
    SubstitutionConfig substitution;
    TruncationConfig truncation;
    BillingMisconfig billing;
    FingerprintConfig fingerprint;
    LatencyMisconfig latency;
};

inline void to_json(nlohmann::json& j, const MisbehaviorConfig& m) {
    j = nlohmann::json::object();
    j["substitution"] = {{"target_persona", m.substitution.target_persona},
                         {"probability", m.substitution.probability}};
    j["truncation"] = nlohmann::json::object();
    if (m.truncation.max_context_tokens.has_value())
        j["truncation"]["max_context_tokens"] = *m.truncation.max_context_tokens;
    j["billing"] = {{"markup_factor", m.billing.markup_factor},
                    {"suppress_cache", m.billing.suppress_cache},
                    {"token_overreport_factor", m.billing.token_overreport_factor},
                    {"report_cache_field", m.billing.report_cache_field}};
    j["fingerprint"] = nlohmann::json::object();
    if (m.fingerprint.churn_period_turns.has_value())
        j["fingerprint"]["churn_period_turns"] = *m.fingerprint.churn_period_turns;
    j["latency"] = nlohmann::json::object();
    j["latency"]["mixture_weight"] = m.latency.mixture_weight;
    if (m.latency.secondary_mode.has_value())
        j["latency"]["secondary_mode"] = *m.latency.secondary_mode;
}

inline void from_json(const nlohmann::json& j, MisbehaviorConfig& m) {
    if (j.contains("substitution")) {
        const auto& s = j["substitution"];
        m.substitution.target_persona = s.value("target_persona", std::string());
        m.substitution.probability = s.value("probability", 0.0);
    }
    if (j.contains("truncation") && j["truncation"].contains("max_context_tokens") &&
        !j["truncation"]["max_context_tokens"].is_null())
        m.truncation.max_context_tokens = j["truncation"]["max_context_tokens"].get<std::int64_t>();
    if (j.contains("billing")) {
        const auto& b = j["billing"];
        m.billing.markup_factor = b.value("markup_factor", 1.0);
        m.billing.suppress_cache = b.value("suppress_cache", false);
        m.billing.token_overreport_factor = b.value("token_overreport_factor", 1.0);
        m.billing.report_cache_field = b.value("report_cache_field", true);
    }
    if (j.contains("fingerprint") && j["fingerprint"].contains("churn_period_turns") &&
        !j["fingerprint"]["churn_period_turns"].is_null())
        m.fingerprint.churn_period_turns = j["fingerprint"]["churn_period_turns"].get<int>();
    if (j.contains("latency")) {
        const auto& l = j["latency"];
        m.latency.mixture_weight = l.value("mixture_weight", 0.0);
        if (l.contains("secondary_mode") && !l["secondary_mode"].is_null())
            m.latency.secondary_mode = l["secondary_mode"].get<LognormalParams>();
    }
}

struct Scenario {
    std::string name = "scenario";
    std::string gateway_name = "mock";
    std::uint64_t seed = 1;
    double latency_scale = 1.0;
    std::vector<ModelPersona> personas;
    std::map<std::string, ModelPricing> pricing;  // keyed by persona name
    MisbehaviorConfig misbehavior;
    std::vector<int> fault_schedule;  // 0 = respond normally

    void validate() const {
        if (personas.empty()) throw Error("scenario '" + name + "': no personas");
        if (latency_scale < 0) throw Error("scenario '" + name + "': negative latency_scale");
        std::set<std::string> names;
        for (const auto& p : personas) {
            p.validate();
            if (!names.insert(p.name).second)
                throw Error("scenario '" + name + "': duplicate persona '" + p.name + "'");
            if (pricing.find(p.name) == pricing.end())
                throw Error("scenario '" + name + "': persona '" + p.name + "' has no pricing");
        }
        for (const auto& [model, pr] : pricing) pr.validate(gateway_name + "/" + model);
        for (std::size_t i = 0; i < personas.size(); ++i)
            for (std::size_t k = i + 1; k < personas.size(); ++k)
                if (personas[i].differing_parameters(personas[k]) < 2)
                    throw Error("scenario '" + name + "': personas '" + personas[i].name +
                                "' and '" + personas[k].name +
                                "' differ in fewer than two profile parameters");
        const auto& m = misbehavior;
        if (m.substitution.probability < 0 || m.substitution.probability > 1)
            throw Error("scenario '" + name + "': substitution probability outside [0,1]");
        if (m.substitution.probability > 0 && names.count(m.substitution.target_persona) == 0)
            throw Error("scenario '" + name + "': substitution target '" +
                        m.substitution.target_persona + "' is not a persona");
        if (m.billing.markup_factor < 1.0)
            throw Error("scenario '" + name + "': markup_factor must be >= 1");
        if (m.billing.token_overreport_factor < 1.0)
            throw Error("scenario '" + name + "': token_overreport_factor must be >= 1");
        if (m.fingerprint.churn_period_turns.has_value() && *m.fingerprint.churn_period_turns < 1)
            throw Error("scenario '" + name + "': churn_period_turns must be >= 1");
        if (m.latency.mixture_weight < 0 || m.latency.mixture_weight > 1)
            throw Error("scenario '" + name + "': mixture_weight outside [0,1]");
        if (m.truncation.max_context_tokens.has_value() && *m.truncation.max_context_tokens < 1)
            throw Error("scenario '" + name + "': max_context_tokens must be >= 1");
        for (int f : fault_schedule)
            if (f != 0 && (f < 100 || f > 599))
                throw Error("scenario '" + name + "': bad fault status " + std::to_string(f));
    }

    nlohmann::json to_json() const {
        nlohmann::json pr = nlohmann::json::object();
        for (const auto& [model, p] : pricing) pr[model] = p;
        return nlohmann::json{{"name", name},
                              {"gateway_name", gateway_name},
                              {"seed", seed},
                              {"latency_scale", latency_scale},
                              {"personas", personas},
                              {"pricing", pr},
                              {"misbehavior", misbehavior},
                              {"fault_schedule", fault_schedule}};
    }

    static Scenario from_json(const nlohmann::json& j) {
        Scenario s;
        s.name = j.value("name", std::string("scenario"));
        s.gateway_name = j.value("gateway_name", std::string("mock"));
        s.seed = j.value("seed", std::uint64_t{1});
        s.latency_scale = j.value("latency_scale", 1.0);
        if (j.contains("personas")) s.personas = j["personas"].get<std::vector<ModelPersona>>();
        if (j.contains("pricing"))
            for (const auto& [model, p] : j["pricing"].items())
                s.pricing[model] = p.get<ModelPricing>();
        if (j.contains("misbehavior")) j["misbehavior"].get_to(s.misbehavior);
        if (j.contains("fault_schedule"))
            s.fault_schedule = j["fault_schedule"].get<std::vector<int>>();
        s.validate();
        return s;
    }
};

inline Scenario load_scenario(const std::string& path) {
    const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw Error("scenario: malformed json in " + path);
    return Scenario::from_json(j);
}

struct SimResponse {
    int status = 200;
    nlohmann::json body;
    double drawn_latency = 0.0;  // seconds before latency_scale
};

namespace sim_detail {

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double normal01(std::mt19937_64& rng) {
    const double u1 = std::max(uniform01(rng), 1e-12);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline double lognormal(std::mt19937_64& rng, const LognormalParams& p) {
    return std::exp(p.mu + p.sigma * normal01(rng));
}

// Digit-free, marker-free filler vocabulary for reasoning steps and replies.
inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words = {
        "the",      "concept",   "links",    "to",        "its",       "parent",
        "idea",     "through",   "shared",   "origin",    "which",     "implies",
        "a",        "relation",  "between",  "entities",  "under",     "review",
        "and",      "supporting","evidence", "aligns",    "with",      "established",
        "results",  "so",        "each",     "conclusion","follows",   "from",
        "prior",    "premises",  "while",    "remaining", "consistent","throughout"};
    return words;
}

inline std::string filler_sentence(std::mt19937_64& rng, std::size_t target_len) {
    const auto& words = filler_words();
    std::string s;
    while (s.size() < target_len) {
        if (!s.empty()) s += ' ';
        s += words[rng() % words.size()];
    }
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    s += '.';
    return s;
}

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Letters-only token derived from the reference answer; never matches a real
// reference under bidirectional normalized containment.
inline std::string scrambled_token(const std::string& ref) {
    const std::string hex = to_hex(fnv1a64(ref));
    std::string out;
    for (std::size_t i = 0; i < 6 && i < hex.size(); ++i) {
        const char c = hex[i];
        out += (c >= '0' && c <= '9') ? static_cast<char>('g' + (c - '0')) : c;
    }
    return out;
}

inline std::string wrong_answer(AnswerRule rule, const std::string& ref, std::uint64_t rep) {
    switch (rule) {
        case AnswerRule::numeric_exact: {
            errno = 0;
            char* end = nullptr;
            const long long v = std::strtoll(ref.c_str(), &end, 10);
            if (errno == 0 && end != ref.c_str() && *end == '\0')
                return std::to_string(v + 1 + static_cast<long long>(rep % 3));
            return "999999";
        }
        case AnswerRule::multiple_choice_letter: {
            char letter = 'a';
            for (char c : ref)
                if (std::isalpha(static_cast<unsigned char>(c))) {
                    letter = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                    break;
                }
            const int idx = letter - 'a';
            const int wrong = (idx + 1 + static_cast<int>(rep % 3)) % 4;
            return std::string(1, static_cast<char>('A' + wrong));
        }
        case AnswerRule::normalized_string_contains:
        default:
            return "unresolved " + scrambled_token(ref);
    }
}

// Finds "<marker><value>." in a user message and returns the value.
inline std::optional<std::string> value_after(const std::string& content,
                                              const std::string& marker) {
    const std::string low = lowercase(content);
    const std::size_t pos = low.find(lowercase(marker));
    if (pos == std::string::npos) return std::nullopt;
    const std::size_t start = pos + marker.size();
    std::size_t end = content.find('.', start);
    if (end == std::string::npos) end = content.size();
    std::string v = trim(content.substr(start, end - start));
    if (v.empty()) return std::nullopt;
    return v;
}

}  // namespace sim_detail

// In-process OpenAI-compatible gateway with configurable misbehavior. handle()
// never sleeps; respond() adds the drawn latency so both the direct and HTTP
// front ends share one timing path.
class MockGateway {
public:
    explicit MockGateway(Scenario scenario, ProbeSuite suite = ProbeSuite{},
                         const TokenCounter& counter = default_token_counter())
        : scenario_(std::move(scenario)), suite_(std::move(suite)), counter_(&counter) {
        scenario_.validate();
        for (const auto& p : scenario_.personas) personas_[p.name] = &p;
        for (const auto& probe : suite_.probes) probe_by_question_[probe.question_text] = &probe;
        fault_queue_.assign(scenario_.fault_schedule.begin(), scenario_.fault_schedule.end());
    }

    MockGateway(const MockGateway&) = delete;
    MockGateway& operator=(const MockGateway&) = delete;

    SimResponse handle(const nlohmann::json& request) {
        std::lock_guard lk(mu_);
        const std::uint64_t req_index = next_request_index_++;

        if (!fault_queue_.empty()) {
            const int fault = fault_queue_.front();
            fault_queue_.erase(fault_queue_.begin());
            if (fault != 0 && fault != 200) {
                SimResponse r;
                r.status = fault;
                r.body = {{"error",
                           {{"message", "injected fault"},
                            {"type", "server_error"},
                            {"code", fault}}}};
                r.drawn_latency = 0.01;
                drawn_latencies_.push_back(r.drawn_latency);
                return r;
            }
        }

        std::string bad_reason;
        MessageList messages;
        std::string claimed;
        if (!parse_request(request, messages, claimed, bad_reason)) {
            SimResponse r;
            r.status = 400;
            r.body = {{"error", {{"message", bad_reason}, {"type", "invalid_request_error"}}}};
            r.drawn_latency = 0.01;
            drawn_latencies_.push_back(r.drawn_latency);
            return r;
        }

        const auto persona_it = personas_.find(claimed);
        if (persona_it == personas_.end()) {
            SimResponse r;
            r.status = 404;
            r.body = {{"error",
                       {{"message", "model '" + claimed + "' not found"},
                        {"type", "invalid_request_error"},
                        {"code", "model_not_found"}}}};
            r.drawn_latency = 0.01;
            drawn_latencies_.push_back(r.drawn_latency);
            return r;
        }

        const ModelPersona* serving = persona_it->second;
        const auto& mis = scenario_.misbehavior;
        if (mis.substitution.probability > 0.0) {
            std::mt19937_64 rng(mix_hash(scenario_.seed, mix_hash(0x5b5bu, req_index)));
            if (sim_detail::uniform01(rng) < mis.substitution.probability) {
                serving = personas_.at(mis.substitution.target_persona);
                ++substituted_count_;
            }
        }

        // Turn number derives from the request itself (full-history protocol),
        // so fingerprint churn is reproducible across repeated runs.
        std::int64_t user_count = 0;
        for (const auto& m : messages)
            if (m.role == "user") ++user_count;

        if (mis.truncation.max_context_tokens.has_value()) {
            const std::int64_t limit = *mis.truncation.max_context_tokens;
            while (messages.size() > 1 && message_tokens(messages, *counter_) > limit)
                messages.erase(messages.begin());
        }

        const std::string reply = generate_reply(*serving, messages);

        const std::int64_t prompt_internal = message_tokens(messages, *counter_);
        const std::int64_t completion_internal = counter_->count(reply);
        const std::int64_t cached_internal = cache_lookup_and_store(claimed, messages);

        const double over = mis.billing.token_overreport_factor;
        const std::int64_t prompt_reported =
            static_cast<std::int64_t>(std::llround(static_cast<double>(prompt_internal) * over));
        const std::int64_t completion_reported = static_cast<std::int64_t>(
            std::llround(static_cast<double>(completion_internal) * over));
        const std::int64_t cached_reported = mis.billing.suppress_cache ? 0 : cached_internal;

        const ModelPricing& pricing = scenario_.pricing.at(claimed);
        const std::int64_t fair_pico =
            expected_cost_pico(prompt_reported, cached_reported, completion_reported, pricing);
        const std::int64_t charge_pico = static_cast<std::int64_t>(
            std::llround(static_cast<double>(fair_pico) * mis.billing.markup_factor));

        const std::string response_id = "chatcmpl-" + std::to_string(req_index);
        ledger_.entries.push_back({response_id, claimed, charge_pico});

        std::uint64_t churn_idx = 0;
        if (mis.fingerprint.churn_period_turns.has_value() && user_count > 0)
            churn_idx = static_cast<std::uint64_t>(user_count - 1) /
                        static_cast<std::uint64_t>(*mis.fingerprint.churn_period_turns);
        const std::string fingerprint =
            "fp-" + to_hex(mix_hash(fnv1a64(serving->name), churn_idx)).substr(0, 12);

        nlohmann::json usage{{"prompt_tokens", prompt_reported},
                             {"completion_tokens", completion_reported},
                             {"total_tokens", prompt_reported + completion_reported}};
        if (mis.billing.report_cache_field)
            usage["prompt_tokens_details"] = {{"cached_tokens", cached_reported}};

        SimResponse r;
        r.status = 200;
        r.body = {{"id", response_id},
                  {"object", "chat.completion"},
                  {"created", 1700000000 + static_cast<std::int64_t>(req_index)},
                  {"model", claimed},
                  {"system_fingerprint", fingerprint},
                  {"choices",
                   {{{"index", 0},
                     {"message", {{"role", "assistant"}, {"content", reply}}},
                     {"finish_reason", "stop"}}}},
                  {"usage", usage}};
        r.drawn_latency = draw_latency(*serving, req_index);
        drawn_latencies_.push_back(r.drawn_latency);
        return r;
    }

    // Blocking entry point used by both transports: tracks in-flight pressure
    // and sleeps the drawn latency scaled by the scenario's latency_scale.
    SimResponse respond(const nlohmann::json& request) {
        const int now = ++in_flight_;
        int seen = max_in_flight_.load();
        while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
        }
        SimResponse r = handle(request);
        if (scenario_.latency_scale > 0.0 && r.drawn_latency > 0.0)
            std::this_thread::sleep_for(
                std::chrono::duration<double>(r.drawn_latency * scenario_.latency_scale));
        --in_flight_;
        return r;
    }

    // Deterministic per (persona, question, repetition): probe answers with the
    // persona's per-domain accuracy, filler steps sized per profile, optional
    // markers, or a deliberately malformed body.
    std::string persona_answer(const ModelPersona& persona, const std::string& question,
                               std::uint64_t rep) const {
        std::mt19937_64 rng(mix_hash(scenario_.seed,
                                     mix_hash(fnv1a64(persona.name),
                                              mix_hash(fnv1a64(question), rep))));
        const Probe* probe = nullptr;
        const auto it = probe_by_question_.find(question);
        if (it != probe_by_question_.end()) probe = it->second;

        const double acc = probe ? persona.accuracy_for(probe->domain) : persona.accuracy_default;
        const bool correct = sim_detail::uniform01(rng) < acc;
        const bool malformed = sim_detail::uniform01(rng) < persona.parse_fail_prob;

        std::string answer;
        if (probe) {
            answer = correct ? probe->reference_answer
                             : sim_detail::wrong_answer(probe->answer_rule,
                                                        probe->reference_answer, rep);
        } else {
            answer = correct ? "unknown" : "indeterminate";
        }

        const int span = persona.depth_max - persona.depth_min + 1;
        const int depth = persona.depth_min + static_cast<int>(rng() % static_cast<unsigned>(span));
        std::vector<std::string> steps;
        steps.reserve(static_cast<std::size_t>(depth));
        for (int i = 0; i < depth; ++i) {
            const double raw = persona.step_length_mean +
                               persona.step_length_spread * sim_detail::normal01(rng);
            const auto target = static_cast<std::size_t>(
                std::max(8.0, raw * persona.length_multiplier));
            steps.push_back(sim_detail::filler_sentence(rng, target));
        }
        if (sim_detail::uniform01(rng) < persona.latex_prob)
            steps.front() += " This mirrors the ratio \\frac{1}{2} in normalized form.";
        if (sim_detail::uniform01(rng) < persona.numeric_prob)
            steps.back() += " The supporting magnitude is 37.";

        if (malformed)
            return "I believe the answer is " + answer +
                   ". My reasoning proceeds stepwise but is not formatted as requested.";
        const nlohmann::json body{{"knowledge_path", steps}, {"final_answer", answer}};
        return body.dump();
    }

    const Scenario& scenario() const { return scenario_; }
    const Ledger& current_ledger() {
        std::lock_guard lk(mu_);
        ledger_.gateway = scenario_.gateway_name;
        return ledger_;
    }
    void write_ledger(const std::string& path) {
        std::lock_guard lk(mu_);
        ledger_.gateway = scenario_.gateway_name;
        write_file(path, ledger_.to_json().dump(2) + "\n");
    }
    std::vector<double> drawn_latencies() {
        std::lock_guard lk(mu_);
        return drawn_latencies_;
    }
    std::uint64_t request_count() {
        std::lock_guard lk(mu_);
        return next_request_index_;
    }
    std::uint64_t substituted_count() {
        std::lock_guard lk(mu_);
        return substituted_count_;
    }
    int max_in_flight() const { return max_in_flight_.load(); }

private:
    static bool parse_request(const nlohmann::json& request, MessageList& messages,
                              std::string& claimed, std::string& reason) {
        if (!request.is_object()) {
            reason = "request body must be a JSON object";
            return false;
        }
        if (!request.contains("model") || !request["model"].is_string() ||
            request["model"].get<std::string>().empty()) {
            reason = "missing model";
            return false;
        }
        if (!request.contains("messages") || !request["messages"].is_array() ||
            request["messages"].empty()) {
            reason = "missing messages";
            return false;
        }
        for (const auto& m : request["messages"]) {
            if (!m.is_object() || !m.contains("role") || !m["role"].is_string() ||
                !m.contains("content") || !m["content"].is_string()) {
                reason = "each message needs string role and content";
                return false;
            }
            messages.push_back({m["role"].get<std::string>(), m["content"].get<std::string>()});
        }
        claimed = request["model"].get<std::string>();
        return true;
    }

    std::string generate_reply(const ModelPersona& persona, const MessageList& context) {
        const ChatMessage* last_user = nullptr;
        for (const auto& m : context)
            if (m.role == "user") last_user = &m;
        if (last_user == nullptr) return "I need a user message to respond to.";

        const std::string low = sim_detail::lowercase(last_user->content);

        const std::string q_prefix = dcc_question_prefix();
        const std::size_t qpos = last_user->content.find(q_prefix);
        if (qpos != std::string::npos) {
            std::size_t qend = last_user->content.find('\n', qpos);
            if (qend == std::string::npos) qend = last_user->content.size();
            const std::string question =
                trim(last_user->content.substr(qpos + q_prefix.size(), qend - qpos - q_prefix.size()));
            const std::uint64_t rep =
                rep_counters_[mix_hash(fnv1a64(persona.name), fnv1a64(question))]++;
            return persona_answer(persona, question, rep);
        }

        if (low.find("professional identity") != std::string::npos) {
            for (auto it = context.rbegin(); it != context.rend(); ++it) {
                if (it->role != "user") continue;
                auto v = sim_detail::value_after(it->content, "you are a ");
                if (!v) v = sim_detail::value_after(it->content, "you are an ");
                if (v) return "I am a " + *v + ".";
            }
            return "I am an assistant focused on the current topic.";
        }

        const bool preference_question =
            low.find("favorite toy") != std::string::npos && low.find('?') != std::string::npos;
        if (preference_question) {
            // Assignments are read from surviving user turns only, so recall
            // failure emerges mechanically once truncation drops them.
            std::optional<std::string> current;
            for (const auto& m : context) {
                if (m.role != "user") continue;
                if (m.content.find('?') != std::string::npos) continue;
                auto v = sim_detail::value_after(m.content, "favorite toy is now ");
                if (!v) v = sim_detail::value_after(m.content, "favorite toy is ");
                if (v) current = v;
            }
            if (current) return "My favorite toy is " + *current + ".";
            return "I do not have a stated preference right now.";
        }

        const bool assignment = low.find('?') == std::string::npos &&
                                (low.find("you are a") != std::string::npos ||
                                 low.find("favorite toy is") != std::string::npos);
        if (assignment) return "Understood.";

        std::mt19937_64 rng(mix_hash(scenario_.seed,
                                     mix_hash(fnv1a64(persona.name),
                                              fnv1a64(last_user->content))));
        const auto target = static_cast<std::size_t>(std::max(
            24.0, (persona.step_length_mean + persona.step_length_spread *
                                                  sim_detail::normal01(rng)) *
                      persona.length_multiplier));
        return sim_detail::filler_sentence(rng, target);
    }

    // Prompt-prefix cache: the longest strict prefix of the processed message
    // chain seen in any earlier request counts as cached, like provider-side
    // prompt caching. Chains are keyed by claimed model, so switching models
    // starts cold.
    std::int64_t cache_lookup_and_store(const std::string& claimed, const MessageList& messages) {
        std::uint64_t h = mix_hash(fnv1a64("prompt-chain"), fnv1a64(claimed));
        std::vector<std::pair<std::uint64_t, std::int64_t>> prefixes;
        std::int64_t cum = 2;  // reply priming overhead, matching message_tokens
        prefixes.reserve(messages.size());
        for (const auto& m : messages) {
            h = mix_hash(h, mix_hash(fnv1a64(m.role), fnv1a64(m.content)));
            cum += 4 + counter_->count(m.content);
            prefixes.emplace_back(h, cum);
        }
        std::int64_t cached = 0;
        for (std::size_t k = 0; k + 1 < prefixes.size(); ++k) {
            const auto it = cache_.find(prefixes[k].first);
            if (it != cache_.end()) cached = std::max(cached, it->second);
        }
        for (const auto& [hash, tokens] : prefixes) cache_.emplace(hash, tokens);
        return cached;
    }

    double draw_latency(const ModelPersona& persona, std::uint64_t req_index) const {
        std::mt19937_64 rng(mix_hash(scenario_.seed, mix_hash(0x1a7eu, req_index)));
        const auto& lm = scenario_.misbehavior.latency;
        if (lm.secondary_mode.has_value() && lm.mixture_weight > 0.0 &&
            sim_detail::uniform01(rng) < lm.mixture_weight)
            return sim_detail::lognormal(rng, *lm.secondary_mode);
        return sim_detail::lognormal(rng, persona.latency);
    }

    Scenario scenario_;
    ProbeSuite suite_;
    const TokenCounter* counter_;
    std::map<std::string, const ModelPersona*> personas_;
    std::map<std::string, const Probe*> probe_by_question_;

    std::mutex mu_;
    std::uint64_t next_request_index_ = 0;
    std::uint64_t substituted_count_ = 0;
    std::vector<int> fault_queue_;
    std::unordered_map<std::uint64_t, std::int64_t> cache_;
    std::unordered_map<std::uint64_t, std::uint64_t> rep_counters_;
    Ledger ledger_;
    std::vector<double> drawn_latencies_;

    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
};

// Transport that calls the gateway in-process; shares retry/backoff code
// paths with the HTTP transport.
class DirectTransport final : public Transport {
public:
    explicit DirectTransport(MockGateway& gw) : gw_(gw) {}

    WireResponse post(const std::string& path, const std::string& body, const HeaderList&,
                      double) override {
        WireResponse w;
        if (path != chat_completions_path()) {
            w.status = 404;
            w.body = R"({"error":{"message":"no such route"}})";
            return w;
        }
        const auto j = nlohmann::json::parse(body, nullptr, false);
        SimResponse r;
        if (j.is_discarded()) {
            r.status = 400;
            r.body = {{"error", {{"message", "malformed json"}, {"type", "invalid_request_error"}}}};
        } else {
            r = gw_.respond(j);
        }
        w.status = r.status;
        w.body = r.body.dump();
        return w;
    }

private:
    MockGateway& gw_;
};

// Loopback HTTP front end over the same gateway; binds an ephemeral port.
class MockServer {
public:
    // port 0 picks an ephemeral port; a fixed port that is already taken
    // raises an error instead of silently rebinding
    explicit MockServer(MockGateway& gw, const std::string& host = "127.0.0.1", int port = 0) {
        server_.Post(chat_completions_path(),
                     [&gw](const httplib::Request& req, httplib::Response& res) {
                         const auto j = nlohmann::json::parse(req.body, nullptr, false);
                         SimResponse r;
                         if (j.is_discarded()) {
                             r.status = 400;
                             r.body = {{"error",
                                        {{"message", "malformed json"},
                                         {"type", "invalid_request_error"}}}};
                         } else {
                             r = gw.respond(j);
                         }
                         res.status = r.status;
                         res.set_content(r.body.dump(), "application/json");
                     });
        if (port > 0) {
            if (!server_.bind_to_port(host, port))
                throw Error("mock server: could not bind " + host + ":" + std::to_string(port));
            port_ = port;
        } else {
            port_ = server_.bind_to_any_port(host);
        }
        if (port_ <= 0) throw Error("mock server: could not bind " + host);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        base_url_ = "http://" + host + ":" + std::to_string(port_);
    }

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;
    ~MockServer() { stop(); }

    void stop() {
        if (server_.is_running()) server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return port_; }
    const std::string& base_url() const { return base_url_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::string base_url_;
};

}  // namespace gatescope
