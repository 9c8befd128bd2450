#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatescope/probe.hpp"
#include "gatescope/records.hpp"
#include "gatescope/tokenizer.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

// Costs are integer pico-USD (1e-12 USD). Rates come in as USD per million
// tokens, so micro-USD per million gives cost_pico = tokens * rate_micro
// with no rounding until presentation.
inline std::int64_t usd_per_million_to_micro(double usd) {
    return static_cast<std::int64_t>(std::llround(usd * 1e6));
}

inline double pico_to_usd(std::int64_t pico) { return static_cast<double>(pico) * 1e-12; }

inline std::string format_usd(std::int64_t pico) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", pico_to_usd(pico));
    return buf;
}

struct ModelPricing {
    double input_per_million = 0.0;
    double cached_input_per_million = 0.0;
    double output_per_million = 0.0;
    bool supports_cache_pricing = true;

    void validate(const std::string& label) const {
        if (input_per_million < 0 || cached_input_per_million < 0 || output_per_million < 0)
            throw Error("pricing '" + label + "': negative rate");
        if (supports_cache_pricing && cached_input_per_million > input_per_million)
            throw Error("pricing '" + label + "': cached input rate exceeds input rate");
    }

    std::int64_t input_micro() const { return usd_per_million_to_micro(input_per_million); }
    std::int64_t cached_micro() const { return usd_per_million_to_micro(cached_input_per_million); }
    std::int64_t output_micro() const { return usd_per_million_to_micro(output_per_million); }
};

inline void to_json(nlohmann::json& j, const ModelPricing& p) {
    j = nlohmann::json{{"input", p.input_per_million},
                       {"cached_input", p.cached_input_per_million},
                       {"output", p.output_per_million},
                       {"supports_cache_pricing", p.supports_cache_pricing}};
}

inline void from_json(const nlohmann::json& j, ModelPricing& p) {
    j.at("input").get_to(p.input_per_million);
    p.cached_input_per_million = j.value("cached_input", 0.0);
    j.at("output").get_to(p.output_per_million);
    p.supports_cache_pricing = j.value("supports_cache_pricing", true);
}

class PricingTable {
public:
    std::map<std::string, std::map<std::string, ModelPricing>> gateways;

    const ModelPricing& lookup(const std::string& gateway, const std::string& model) const {
        const auto g = gateways.find(gateway);
        if (g == gateways.end()) throw Error("pricing table: unknown gateway '" + gateway + "'");
        const auto m = g->second.find(model);
        if (m == g->second.end())
            throw Error("pricing table: gateway '" + gateway + "' has no model '" + model + "'");
        return m->second;
    }

    bool has(const std::string& gateway, const std::string& model) const {
        const auto g = gateways.find(gateway);
        return g != gateways.end() && g->second.count(model) > 0;
    }

    void validate() const {
        for (const auto& [gw, models] : gateways)
            for (const auto& [model, pricing] : models) pricing.validate(gw + "/" + model);
    }

    static PricingTable from_json(const nlohmann::json& j) {
        PricingTable t;
        if (!j.is_object()) throw Error("pricing table: expected object");
        for (const auto& [gw, models] : j.items()) {
            if (!models.is_object()) throw Error("pricing table: gateway '" + gw + "' not object");
            for (const auto& [model, pj] : models.items())
                t.gateways[gw][model] = pj.get<ModelPricing>();
        }
        t.validate();
        return t;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [gw, models] : gateways)
            for (const auto& [model, pricing] : models) j[gw][model] = pricing;
        return j;
    }
};

inline PricingTable load_pricing(const std::string& path) {
    const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw Error("pricing table: malformed json in " + path);
    return PricingTable::from_json(j);
}

// Cost of one response. Cached tokens are billed at the cached rate and
// removed from the full-rate input count; a model without cache pricing
// bills every input token at the full rate.
inline std::int64_t expected_cost_pico(std::int64_t prompt_tokens, std::int64_t cached_tokens,
                                       std::int64_t completion_tokens, const ModelPricing& p) {
    if (prompt_tokens < 0 || cached_tokens < 0 || completion_tokens < 0)
        throw Error("expected_cost: negative token count");
    std::int64_t cached = p.supports_cache_pricing ? std::min(cached_tokens, prompt_tokens) : 0;
    return (prompt_tokens - cached) * p.input_micro() + cached * p.cached_micro() +
           completion_tokens * p.output_micro();
}

inline std::int64_t expected_cost_pico(const Usage& u, const ModelPricing& p) {
    return expected_cost_pico(u.prompt_tokens, u.cached_tokens, u.completion_tokens, p);
}

struct GapResult {
    bool defined = false;
    double percent = 0.0;
};

inline GapResult billing_gap(std::int64_t actual_pico, std::int64_t expected_pico) {
    GapResult g;
    if (expected_pico == 0) return g;
    g.defined = true;
    g.percent = (static_cast<double>(actual_pico) - static_cast<double>(expected_pico)) /
                static_cast<double>(expected_pico) * 100.0;
    return g;
}

// Presentation form, one decimal with explicit sign: "+62.8", "-3.1".
inline std::string format_gap(const GapResult& g) {
    if (!g.defined) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f", g.percent);
    return buf;
}

struct LedgerEntry {
    std::string response_id;
    std::string model;
    std::int64_t charge_pico = 0;
};

inline void to_json(nlohmann::json& j, const LedgerEntry& e) {
    j = nlohmann::json{{"response_id", e.response_id},
                       {"model", e.model},
                       {"charge_pico", e.charge_pico},
                       {"charge_usd", format_usd(e.charge_pico)}};
}

inline void from_json(const nlohmann::json& j, LedgerEntry& e) {
    j.at("response_id").get_to(e.response_id);
    e.model = j.value("model", std::string());
    j.at("charge_pico").get_to(e.charge_pico);
}

struct Ledger {
    std::string gateway;
    std::vector<LedgerEntry> entries;

    std::int64_t total_pico() const {
        std::int64_t t = 0;
        for (const auto& e : entries) t += e.charge_pico;
        return t;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"gateway", gateway},
                              {"entries", entries},
                              {"total_pico", total_pico()},
                              {"total_usd", format_usd(total_pico())}};
    }

    static Ledger from_json(const nlohmann::json& j) {
        Ledger l;
        l.gateway = j.value("gateway", std::string());
        if (j.contains("entries")) l.entries = j["entries"].get<std::vector<LedgerEntry>>();
        return l;
    }
};

inline Ledger load_ledger(const std::string& path) {
    const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw Error("ledger: malformed json in " + path);
    return Ledger::from_json(j);
}

struct ModelBillingLine {
    std::int64_t expected_pico = 0;
    std::int64_t actual_pico = 0;
    std::size_t records = 0;
};

struct BillingReport {
    std::int64_t expected_pico = 0;
    std::int64_t actual_pico = 0;
    std::size_t records_used = 0;
    std::size_t matched = 0;
    std::vector<std::string> unmatched_ids;
    std::map<std::string, ModelBillingLine> by_model;
    GapResult gap;
};

// Joins successful records against the gateway ledger by response id and
// prices each record's reported usage at its own model's rates.
inline BillingReport compare_billing(const std::vector<CallRecord>& records,
                                     const Ledger& ledger, const PricingTable& pricing) {
    std::map<std::string, std::int64_t> charges;
    for (const auto& e : ledger.entries) charges[e.response_id] = e.charge_pico;

    BillingReport r;
    for (const auto& rec : records) {
        if (!rec.ok() || !rec.usage.reported) continue;
        const ModelPricing& p = pricing.lookup(rec.gateway, rec.model);
        const std::int64_t exp = expected_cost_pico(rec.usage, p);
        r.expected_pico += exp;
        r.records_used += 1;
        auto& line = r.by_model[rec.model];
        line.expected_pico += exp;
        line.records += 1;
        if (rec.response_id.has_value()) {
            const auto it = charges.find(*rec.response_id);
            if (it != charges.end()) {
                r.actual_pico += it->second;
                line.actual_pico += it->second;
                r.matched += 1;
                continue;
            }
        }
        r.unmatched_ids.push_back(rec.response_id.value_or("(no id)"));
    }
    r.gap = billing_gap(r.actual_pico, r.expected_pico);
    return r;
}

struct TokenConformance {
    std::size_t checked = 0;
    std::size_t within = 0;
    double worst_rel_diff = 0.0;
    std::vector<std::string> offenders;

    double rate() const {
        return checked == 0 ? 1.0 : static_cast<double>(within) / static_cast<double>(checked);
    }
};

// Compares gateway-reported prompt token counts against a local recount of
// the prompt rebuilt from the probe suite.
inline TokenConformance check_token_conformance(const std::vector<CallRecord>& records,
                                                const ProbeSuite& suite,
                                                const TokenCounter& counter,
                                                double rel_tolerance = 0.15) {
    if (rel_tolerance <= 0) throw Error("token conformance: tolerance must be positive");
    TokenConformance tc;
    for (const auto& rec : records) {
        if (!rec.ok() || !rec.usage.reported) continue;
        const Probe* probe = suite.find(rec.probe_id);
        if (probe == nullptr) continue;
        const auto envelope = render_prompt(*probe);
        MessageList messages{{"system", envelope.system_message},
                             {"user", envelope.user_message}};
        const std::int64_t local = message_tokens(messages, counter);
        const double rel = std::abs(static_cast<double>(rec.usage.prompt_tokens - local)) /
                           static_cast<double>(std::max<std::int64_t>(local, 1));
        tc.checked += 1;
        tc.worst_rel_diff = std::max(tc.worst_rel_diff, rel);
        if (rel <= rel_tolerance) {
            tc.within += 1;
        } else if (tc.offenders.size() < 20) {
            tc.offenders.push_back(rec.probe_id + "#" + std::to_string(rec.repetition_index));
        }
    }
    return tc;
}

}  // namespace gatescope
