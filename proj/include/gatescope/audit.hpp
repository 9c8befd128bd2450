#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatescope/billing.hpp"
#include "gatescope/client.hpp"
#include "gatescope/conversation.hpp"
#include "gatescope/identifier.hpp"
#include "gatescope/jsonl.hpp"
#include "gatescope/latency.hpp"
#include "gatescope/probe.hpp"
#include "gatescope/records.hpp"
#include "gatescope/signature.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

// Alert rules live in config, not in analysis code. Claim/gap/FC/CV mirror the
// outlier cells the audit is meant to catch; the checkpoint-rate rule guards
// memory loss that FC alone cannot see.
struct FlagThresholds {
    double min_claim_fraction = 0.80;
    double max_gap_percent = 5.0;
    int max_fingerprints = 1;
    double cv_threshold = 1.0;
    double min_checkpoint_rate = 0.6;
};

inline void to_json(nlohmann::json& j, const FlagThresholds& t) {
    j = {{"min_claim_fraction", t.min_claim_fraction},
         {"max_gap_percent", t.max_gap_percent},
         {"max_fingerprints", t.max_fingerprints},
         {"cv_threshold", t.cv_threshold},
         {"min_checkpoint_rate", t.min_checkpoint_rate}};
}

inline void from_json(const nlohmann::json& j, FlagThresholds& t) {
    t.min_claim_fraction = j.value("min_claim_fraction", 0.80);
    t.max_gap_percent = j.value("max_gap_percent", 5.0);
    t.max_fingerprints = j.value("max_fingerprints", 1);
    t.cv_threshold = j.value("cv_threshold", 1.0);
    t.min_checkpoint_rate = j.value("min_checkpoint_rate", 0.6);
}

struct RepetitionDefaults {
    int baseline = 12;
    int audit = 5;
    int conversation = 5;
};

inline void to_json(nlohmann::json& j, const RepetitionDefaults& r) {
    j = {{"baseline", r.baseline}, {"audit", r.audit}, {"conversation", r.conversation}};
}

inline void from_json(const nlohmann::json& j, RepetitionDefaults& r) {
    r.baseline = j.value("baseline", 12);
    r.audit = j.value("audit", 5);
    r.conversation = j.value("conversation", 5);
}

struct GatewayEntry {
    GatewayProfile profile;
    std::string ledger_path;  // empty: billing section unavailable
    std::map<std::string, double> baseline_cache_rates;  // model -> percent
};

inline void to_json(nlohmann::json& j, const GatewayEntry& e) {
    j = nlohmann::json(e.profile);
    if (!e.ledger_path.empty()) j["ledger_path"] = e.ledger_path;
    if (!e.baseline_cache_rates.empty()) j["baseline_cache_rates"] = e.baseline_cache_rates;
}

inline void from_json(const nlohmann::json& j, GatewayEntry& e) {
    j.get_to(e.profile);
    e.ledger_path = j.value("ledger_path", std::string());
    if (j.contains("baseline_cache_rates"))
        e.baseline_cache_rates =
            j["baseline_cache_rates"].get<std::map<std::string, double>>();
}

inline void to_json(nlohmann::json& j, const RequestParams& p) {
    j = {{"temperature", p.temperature},
         {"total_timeout", p.total_timeout},
         {"per_attempt_timeout", p.per_attempt_timeout},
         {"max_retries", p.max_retries},
         {"retrieval_disabled", p.retrieval_disabled},
         {"repetition_spacing", p.repetition_spacing}};
}

inline void from_json(const nlohmann::json& j, RequestParams& p) {
    p.temperature = j.value("temperature", 0.7);
    p.total_timeout = j.value("total_timeout", 900.0);
    p.per_attempt_timeout = j.value("per_attempt_timeout", 300.0);
    p.max_retries = j.value("max_retries", 15);
    p.retrieval_disabled = j.value("retrieval_disabled", true);
    p.repetition_spacing = j.value("repetition_spacing", 7200.0);
}

struct RunConfig {
    std::uint64_t seed = 42;
    std::string suite_path;
    std::string pricing_path;
    std::string output_dir = "out";
    std::string store_dir;  // default: <output_dir>/classifiers
    RepetitionDefaults repetitions;
    std::vector<GatewayEntry> gateways;
    FlagThresholds thresholds;
    TrainingConfig training;
    RequestParams request;
    int elite_q = kDefaultEliteQ;
    double elite_delta = kDefaultEliteDelta;

    std::string store_directory() const {
        return store_dir.empty() ? output_dir + "/classifiers" : store_dir;
    }

    void validate() const {
        if (suite_path.empty()) throw Error("config: suite path missing");
        if (output_dir.empty()) throw Error("config: output_dir missing");
        if (gateways.empty()) throw Error("config: no gateways");
        for (const auto& e : gateways) e.profile.validate();
        if (repetitions.baseline < 1 || repetitions.audit < 1 || repetitions.conversation < 1)
            throw Error("config: repetitions must be >= 1");
        if (elite_q <= 0) throw Error("config: elite_q must be positive");
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        c.seed = j.value("seed", std::uint64_t{42});
        c.suite_path = j.value("suite", std::string());
        c.pricing_path = j.value("pricing", std::string());
        c.output_dir = j.value("output_dir", std::string("out"));
        c.store_dir = j.value("store_dir", std::string());
        if (j.contains("repetitions")) j["repetitions"].get_to(c.repetitions);
        if (j.contains("gateways")) c.gateways = j["gateways"].get<std::vector<GatewayEntry>>();
        if (j.contains("thresholds")) j["thresholds"].get_to(c.thresholds);
        if (j.contains("training")) {
            j["training"].get_to(c.training);
            if (!j["training"].contains("seed")) c.training.seed = c.seed;
        } else {
            c.training.seed = c.seed;
        }
        if (j.contains("request")) j["request"].get_to(c.request);
        c.elite_q = j.value("elite_q", kDefaultEliteQ);
        c.elite_delta = j.value("elite_delta", kDefaultEliteDelta);
        c.validate();
        return c;
    }

    nlohmann::json to_json() const {
        return {{"seed", seed},
                {"suite", suite_path},
                {"pricing", pricing_path},
                {"output_dir", output_dir},
                {"store_dir", store_dir},
                {"repetitions", repetitions},
                {"gateways", gateways},
                {"thresholds", thresholds},
                {"training", training},
                {"request", request},
                {"elite_q", elite_q},
                {"elite_delta", elite_delta}};
    }
};

inline RunConfig load_config(const std::string& path) {
    const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw Error("config: malformed json in " + path);
    return RunConfig::from_json(j);
}

// Builds a transport factory for a profile; tests substitute in-process ones.
using TransportMaker = std::function<TransportFactory(const GatewayProfile&)>;

inline TransportMaker http_transport_maker() {
    return [](const GatewayProfile& p) -> TransportFactory {
        return [base = p.base_url]() -> std::unique_ptr<Transport> {
            return std::make_unique<HttpTransport>(base);
        };
    };
}

// ---------------------------------------------------------------------------
// Collection

struct CollectSummary {
    std::string records_path;
    std::size_t written = 0;
    std::size_t skipped = 0;
    std::map<std::string, std::string> gateway_errors;

    bool all_failed(std::size_t gateway_count) const {
        return gateway_count > 0 && gateway_errors.size() == gateway_count;
    }
};

inline std::string collect_key(const std::string& gateway, const std::string& model,
                               const std::string& probe_id, int rep) {
    return gateway + "\x1f" + model + "\x1f" + probe_id + "\x1f" + std::to_string(rep);
}

// Streams records to <output_dir>/<filename> as they complete; reruns skip
// (gateway, model, probe, repetition) keys already present in the file.
inline CollectSummary run_collect(const RunConfig& config, const ProbeSuite& suite,
                                  const TransportMaker& maker, Sleeper sleeper = real_sleeper(),
                                  bool baseline_mode = false,
                                  const std::string& filename = "records.jsonl") {
    std::filesystem::create_directories(config.output_dir);
    CollectSummary summary;
    summary.records_path = config.output_dir + "/" + filename;

    std::set<std::string> have;
    if (std::filesystem::exists(summary.records_path)) {
        for (const auto& rec : load_records(summary.records_path))
            have.insert(collect_key(rec.gateway, rec.model, rec.probe_id, rec.repetition_index));
    }

    JsonlWriter writer(summary.records_path, /*append=*/true);
    const int reps = baseline_mode ? config.repetitions.baseline : config.repetitions.audit;

    for (const auto& entry : config.gateways) {
        try {
            GatewayClient client(entry.profile, maker(entry.profile), sleeper, config.seed);
            GatewayClient::CollectOptions opts;
            opts.repetitions = reps;
            opts.skip = [&](const std::string& model, const std::string& probe_id, int rep) {
                const bool present =
                    have.count(collect_key(entry.profile.name, model, probe_id, rep)) > 0;
                if (present) ++summary.skipped;
                return present;
            };
            opts.sink = [&](const CallRecord& rec) {
                writer.write(nlohmann::json(rec));
                ++summary.written;
            };
            client.collect(suite, config.request, opts);
        } catch (const std::exception& e) {
            summary.gateway_errors[entry.profile.name] = e.what();
        }
    }
    return summary;
}

// ---------------------------------------------------------------------------
// Training

struct TrainSummaryRow {
    std::string model;
    Difficulty difficulty = Difficulty::medium;
    double threshold = 0.5;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool unconstrained = false;
    std::size_t trees = 0;
};

struct TrainResult {
    ReferenceBank reference;
    std::vector<ModelClassifier> ensemble;
    std::map<std::string, EliteSubset> elites;
    std::vector<TrainSummaryRow> summary;
};

// Trains one binary classifier and pins its operating threshold by sweeping
// on the held-out split.
inline ModelClassifier fit_classifier(const DatasetSplit& split, const std::string& model_name,
                                      const TrainingConfig& config) {
    ModelClassifier c = train_one_vs_rest(split.train, model_name, config);
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(split.test.rows.size());
    labels.reserve(split.test.rows.size());
    for (const auto& row : split.test.rows) {
        scores.push_back(c.proba(row));
        labels.push_back(row.model_name == model_name ? 1 : 0);
    }
    const SweepResult sweep =
        sweep_threshold(scores, labels, ThresholdPolicy::for_difficulty(c.difficulty));
    c.threshold = sweep.threshold;
    c.sweep = sweep;
    return c;
}

inline TrainResult run_train(const std::vector<CallRecord>& records, const ProbeSuite& suite,
                             const RunConfig& config) {
    std::vector<CallRecord> usable;
    for (const auto& r : records)
        if (r.ok()) usable.push_back(r);
    if (usable.empty()) throw Error("train: no successful records");

    std::set<std::string> model_set;
    for (const auto& r : usable) model_set.insert(r.model);
    if (model_set.size() < 2)
        throw Error("train: need records from at least 2 models, have " +
                    std::to_string(model_set.size()));

    TrainResult out;
    out.reference = ReferenceBank::from_records(usable, suite);
    const SignatureMatrix matrix = build_matrix(usable, suite, out.reference);
    const DatasetSplit split = split_dataset(matrix, config.training);

    for (const auto& name : model_set) {
        ModelClassifier c = fit_classifier(split, name, config.training);
        TrainSummaryRow row;
        row.model = name;
        row.difficulty = c.difficulty;
        row.threshold = c.threshold;
        row.precision = c.sweep.precision;
        row.recall = c.sweep.recall;
        row.f1 = c.sweep.f1;
        row.unconstrained = c.sweep.unconstrained;
        row.trees = c.booster.tree_count();
        out.summary.push_back(row);
        out.elites[name] = select_elite(c, matrix, config.elite_q, config.elite_delta);
        out.ensemble.push_back(std::move(c));
    }
    return out;
}

inline void save_training(ClassifierStore& store, const TrainResult& result) {
    for (const auto& c : result.ensemble) store.save(c);
    store.save_elites(result.elites);
    store.save_reference(result.reference);
}

inline std::string render_train_summary(const TrainResult& result) {
    std::ostringstream os;
    os << "model,difficulty,threshold,precision,recall,f1,unconstrained,trees,elite_probes\n";
    for (const auto& r : result.summary) {
        const auto e = result.elites.find(r.model);
        os << csv_escape(r.model) << ',' << to_string(r.difficulty) << ',' << r.threshold << ','
           << r.precision << ',' << r.recall << ',' << r.f1 << ','
           << (r.unconstrained ? "yes" : "no") << ',' << r.trees << ','
           << (e == result.elites.end() ? 0 : e->second.probe_ids.size()) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Audit

struct AnomalyFlag {
    std::string gateway;
    std::string model;
    std::string rule;      // machine-readable rule id
    double measured = 0.0;
    double threshold = 0.0;
    std::string detail;
};

struct ModelAudit {
    std::string gateway;
    std::string model;

    bool claim_checked = false;
    double fraction_claimed = 0.0;
    std::size_t claim_records = 0;

    bool conversation_checked = false;
    ConversationMetrics conversation;

    bool billing_available = false;
    std::string billing_note;
    BillingReport billing;

    std::map<std::string, LatencyStats> latency;  // domain -> stats

    std::vector<AnomalyFlag> flags;
};

struct AuditReport {
    std::string records_digest;
    std::string transcript_digest;
    std::vector<ModelAudit> models;
    std::map<std::string, std::string> gateway_errors;

    bool any_flags() const {
        for (const auto& m : models)
            if (!m.flags.empty()) return true;
        return false;
    }

    std::vector<AnomalyFlag> all_flags() const {
        std::vector<AnomalyFlag> out;
        for (const auto& m : models) out.insert(out.end(), m.flags.begin(), m.flags.end());
        return out;
    }
};

// 0 clean, 1 at least one flag fired, 2 operational failure.
inline int exit_code_for(const AuditReport& report) {
    if (!report.gateway_errors.empty() && report.models.empty()) return 2;
    return report.any_flags() ? 1 : 0;
}

// Override point for tests and in-process simulators; the default reads the
// ledger file configured on the gateway entry.
using LedgerProvider = std::function<std::optional<Ledger>(const GatewayEntry&)>;

inline LedgerProvider file_ledger_provider() {
    return [](const GatewayEntry& entry) -> std::optional<Ledger> {
        if (entry.ledger_path.empty() || !std::filesystem::exists(entry.ledger_path))
            return std::nullopt;
        return load_ledger(entry.ledger_path);
    };
}

namespace detail {

inline void add_flag(ModelAudit& ma, const std::string& rule, double measured, double threshold,
                     std::string detail_text) {
    ma.flags.push_back({ma.gateway, ma.model, rule, measured, threshold, std::move(detail_text)});
}

inline ProbeSuite subset_suite(const ProbeSuite& suite, const std::vector<std::string>& ids,
                               const std::string& label) {
    ProbeSuite out;
    out.name = suite.name + ":" + label;
    for (const auto& id : ids) {
        const Probe* p = suite.find(id);
        if (p == nullptr) throw Error("elite probe '" + id + "' not in suite");
        out.probes.push_back(*p);
    }
    return out;
}

inline std::string fmt1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

inline std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace detail

// Computes every audit section from already-collected traffic; run_audit
// calls this after live collection, and the offline report path calls it on
// records and transcripts loaded back from disk. Gateways named in
// skip_errors are carried over as failures without analysis.
inline AuditReport analyze_audit(const RunConfig& config, const ProbeSuite& suite,
                                 const std::optional<PricingTable>& pricing,
                                 const ClassifierStore& store,
                                 const std::vector<CallRecord>& records,
                                 const std::vector<TranscriptRecord>& transcripts,
                                 const LedgerProvider& ledger_provider = file_ledger_provider(),
                                 const std::map<std::string, std::string>& skip_errors = {}) {
    const std::vector<ModelClassifier> ensemble = store.load_all();
    const std::map<std::string, EliteSubset> elites = store.load_elites();
    const ReferenceBank reference = store.load_reference();
    const ConversationScript script = ConversationScript::standard();

    AuditReport report;
    report.gateway_errors = skip_errors;

    for (const auto& entry : config.gateways) {
        if (report.gateway_errors.count(entry.profile.name)) continue;

        const std::optional<Ledger> gateway_ledger = ledger_provider(entry);

        for (const auto& model : entry.profile.models) {
            ModelAudit ma;
            ma.gateway = entry.profile.name;
            ma.model = model;
            std::vector<CallRecord> probe_records;
            for (const auto& r : records)
                if (r.gateway == entry.profile.name && r.model == model) probe_records.push_back(r);
            std::vector<TranscriptRecord> model_transcripts;
            for (const auto& t : transcripts)
                if (t.gateway == entry.profile.name && t.model == model)
                    model_transcripts.push_back(t);

            // Which model does the response content look like?
            try {
                const auto elite_it = elites.find(model);
                if (elite_it == elites.end())
                    throw Error("no trained elite subset for model '" + model + "'");
                const ClaimReport claim = verify_claim(probe_records, model, suite, reference,
                                                       ensemble, &elite_it->second);
                ma.claim_checked = true;
                ma.fraction_claimed = claim.fraction_claimed;
                ma.claim_records = claim.record_count;
                if (claim.fraction_claimed < config.thresholds.min_claim_fraction)
                    detail::add_flag(ma, "claim_fraction", claim.fraction_claimed,
                                     config.thresholds.min_claim_fraction,
                                     "fraction of elite-probe responses verified as '" + model +
                                         "' fell below the minimum");
            } catch (const std::exception& e) {
                ma.claim_checked = false;
                detail::add_flag(ma, "claim_unavailable", 0, 0,
                                 std::string("claim verification failed: ") + e.what());
            }

            // Memory, fingerprints, cache.
            ma.conversation = aggregate_runs(model_transcripts, script);
            ma.conversation_checked = ma.conversation.runs_effective > 0;
            if (ma.conversation_checked) {
                const auto& c = ma.conversation;
                const double rate = static_cast<double>(c.t10 + c.t24 + c.t25) /
                                    (3.0 * static_cast<double>(c.runs_effective));
                if (rate < config.thresholds.min_checkpoint_rate)
                    detail::add_flag(ma, "memory_checkpoints", rate,
                                     config.thresholds.min_checkpoint_rate,
                                     "checkpoint pass rate across T10/T24/T25 below minimum");
                if (c.fingerprint_count > config.thresholds.max_fingerprints)
                    detail::add_flag(ma, "fingerprint_churn",
                                     static_cast<double>(c.fingerprint_count),
                                     static_cast<double>(config.thresholds.max_fingerprints),
                                     "distinct system_fingerprint values exceeded the maximum");
                const auto base_it = entry.baseline_cache_rates.find(model);
                if (base_it != entry.baseline_cache_rates.end() && base_it->second > 0.0 &&
                    c.cache_reported && c.cache_rate_percent == 0.0)
                    detail::add_flag(ma, "cache_rate_zero", 0.0, base_it->second,
                                     "cache rate is zero while the baseline reported " +
                                         detail::fmt1(base_it->second) + "%");
            } else {
                detail::add_flag(ma, "conversation_unavailable", 0, 0,
                                 "no conversation run completed");
            }

            // Billing reconciliation.
            const std::vector<CallRecord> bill_records = billing_records(model_transcripts);
            if (!pricing.has_value() || !pricing->has(entry.profile.name, model)) {
                ma.billing_note = "pricing unavailable";
            } else if (!gateway_ledger.has_value()) {
                ma.billing_note = "ledger unavailable";
            } else {
                try {
                    ma.billing = compare_billing(bill_records, *gateway_ledger, *pricing);
                    ma.billing_available = true;
                    if (ma.billing.gap.defined &&
                        ma.billing.gap.percent > config.thresholds.max_gap_percent)
                        detail::add_flag(ma, "billing_gap", ma.billing.gap.percent,
                                         config.thresholds.max_gap_percent,
                                         "actual charges exceed expected cost by " +
                                             format_gap(ma.billing.gap) + "%");
                } catch (const std::exception& e) {
                    ma.billing_note = e.what();
                }
            }

            // Latency stability per domain.
            const auto groups = group_latency_samples(probe_records, suite);
            for (const auto& [key, samples] : groups) {
                if (key.gateway != entry.profile.name || key.model != model) continue;
                const LatencyStats stats = compute_latency_stats(samples);
                ma.latency[key.domain] = stats;
                if (flag_instability(stats, config.thresholds.cv_threshold))
                    detail::add_flag(ma, "latency_cv", stats.cv, config.thresholds.cv_threshold,
                                     "latency coefficient of variation in domain '" + key.domain +
                                         "' at or above threshold");
            }

            report.models.push_back(std::move(ma));
        }
    }
    return report;
}

inline AuditReport run_audit(const RunConfig& config, const ProbeSuite& suite,
                             const std::optional<PricingTable>& pricing,
                             const ClassifierStore& store, const TransportMaker& maker,
                             Sleeper sleeper = real_sleeper(),
                             LedgerProvider ledger_provider = file_ledger_provider()) {
    std::filesystem::create_directories(config.output_dir);
    const std::map<std::string, EliteSubset> elites = store.load_elites();
    const ConversationScript script = ConversationScript::standard();

    const std::string records_path = config.output_dir + "/audit_records.jsonl";
    const std::string transcripts_path = config.output_dir + "/transcripts.jsonl";
    JsonlWriter record_writer(records_path, /*append=*/false);

    std::map<std::string, std::string> gateway_errors;
    std::vector<CallRecord> all_records;
    std::vector<TranscriptRecord> all_transcripts;

    for (const auto& entry : config.gateways) {
        std::unique_ptr<GatewayClient> client;
        try {
            client = std::make_unique<GatewayClient>(entry.profile, maker(entry.profile), sleeper,
                                                     config.seed);
        } catch (const std::exception& e) {
            gateway_errors[entry.profile.name] = e.what();
            continue;
        }

        try {
            for (const auto& model : entry.profile.models) {
                const auto elite_it = elites.find(model);
                if (elite_it == elites.end())
                    throw Error("audit: no trained elite subset for model '" + model + "'");

                const ProbeSuite elite_suite =
                    detail::subset_suite(suite, elite_it->second.probe_ids, model);
                GatewayClient::CollectOptions opts;
                opts.models = {model};
                opts.repetitions = config.repetitions.audit;
                opts.sink = [&](const CallRecord& rec) { record_writer.write(nlohmann::json(rec)); };
                const auto collected = client->collect(elite_suite, config.request, opts);
                all_records.insert(all_records.end(), collected.begin(), collected.end());

                for (int run = 0; run < config.repetitions.conversation; ++run)
                    all_transcripts.push_back(
                        run_conversation(*client, model, script, config.request, run));
            }
        } catch (const std::exception& e) {
            gateway_errors[entry.profile.name] = e.what();
            continue;
        }
    }

    save_transcripts(transcripts_path, all_transcripts);
    AuditReport report = analyze_audit(config, suite, pricing, store, all_records, all_transcripts,
                                       ledger_provider, gateway_errors);
    report.records_digest = file_digest(records_path);
    report.transcript_digest = file_digest(transcripts_path);
    return report;
}

// ---------------------------------------------------------------------------
// Report rendering

inline std::string render_audit_csv(const AuditReport& report) {
    std::ostringstream os;
    os << "gateway,model,fraction_claimed,t10,t24,t25,runs_effective,fc,cr,"
          "expected_usd,actual_usd,gap_percent,max_domain_cv,flags\n";
    for (const auto& m : report.models) {
        double max_cv = 0.0;
        for (const auto& [domain, s] : m.latency)
            if (!s.insufficient) max_cv = std::max(max_cv, s.cv);
        std::string flags;
        for (const auto& f : m.flags) {
            if (!flags.empty()) flags += ';';
            flags += f.rule;
        }
        os << csv_escape(m.gateway) << ',' << csv_escape(m.model) << ','
           << (m.claim_checked ? detail::fmt3(m.fraction_claimed) : "n/a") << ','
           << m.conversation.t10 << ',' << m.conversation.t24 << ',' << m.conversation.t25 << ','
           << m.conversation.runs_effective << ',' << m.conversation.fingerprint_count << ','
           << (m.conversation.cache_reported ? detail::fmt1(m.conversation.cache_rate_percent)
                                             : "null")
           << ','
           << (m.billing_available ? format_usd(m.billing.expected_pico) : "n/a") << ','
           << (m.billing_available ? format_usd(m.billing.actual_pico) : "n/a") << ','
           << (m.billing_available && m.billing.gap.defined ? format_gap(m.billing.gap) : "n/a")
           << ',' << detail::fmt3(max_cv) << ',' << csv_escape(flags) << '\n';
    }
    return os.str();
}

inline std::string render_conversation_csv(const AuditReport& report) {
    std::ostringstream os;
    os << "gateway,model,t10,t24,t25,fc,cr\n";
    for (const auto& m : report.models) {
        os << csv_escape(m.gateway) << ',' << csv_escape(m.model) << ',' << m.conversation.t10
           << ',' << m.conversation.t24 << ',' << m.conversation.t25 << ','
           << m.conversation.fingerprint_count << ','
           << (m.conversation.cache_reported ? detail::fmt1(m.conversation.cache_rate_percent)
                                             : "null")
           << '\n';
    }
    return os.str();
}

inline std::string render_billing_csv(const AuditReport& report) {
    std::ostringstream os;
    os << "gateway,model,records,matched,expected_usd,actual_usd,gap_percent,note\n";
    for (const auto& m : report.models) {
        os << csv_escape(m.gateway) << ',' << csv_escape(m.model) << ',';
        if (m.billing_available) {
            os << m.billing.records_used << ',' << m.billing.matched << ','
               << format_usd(m.billing.expected_pico) << ',' << format_usd(m.billing.actual_pico)
               << ',' << (m.billing.gap.defined ? format_gap(m.billing.gap) : "undefined") << ',';
        } else {
            os << "0,0,n/a,n/a,n/a," << csv_escape(m.billing_note);
        }
        os << '\n';
    }
    return os.str();
}

inline std::string render_latency_csv(const AuditReport& report) {
    std::ostringstream os;
    os << "gateway,model,domain,n,min,max,mean,std_dev,cv,p50,p90,p99\n";
    for (const auto& m : report.models) {
        for (const auto& [domain, s] : m.latency) {
            os << csv_escape(m.gateway) << ',' << csv_escape(m.model) << ',' << csv_escape(domain)
               << ',' << s.n << ',' << s.min << ',' << s.max << ',' << s.mean << ',' << s.std_dev
               << ',' << s.cv << ',' << s.p50 << ',' << s.p90 << ',' << s.p99 << '\n';
        }
    }
    return os.str();
}

inline std::string render_audit_summary(const AuditReport& report) {
    std::ostringstream os;
    os << "audit summary\n";
    os << "records: " << report.records_digest << "\n";
    os << "transcripts: " << report.transcript_digest << "\n\n";
    for (const auto& m : report.models) {
        os << m.gateway << " / " << m.model << "\n";
        if (m.claim_checked)
            os << "  claim: " << detail::fmt3(m.fraction_claimed) << " of " << m.claim_records
               << " elite responses verified as claimed\n";
        else
            os << "  claim: unavailable\n";
        os << "  memory: T10=" << m.conversation.t10 << " T24=" << m.conversation.t24
           << " T25=" << m.conversation.t25 << " over " << m.conversation.runs_effective << "/"
           << m.conversation.runs_total << " runs\n";
        os << "  fingerprints: " << m.conversation.fingerprint_count << " distinct; cache rate: "
           << (m.conversation.cache_reported ? detail::fmt1(m.conversation.cache_rate_percent) + "%"
                                             : std::string("null"))
           << "\n";
        if (m.billing_available)
            os << "  billing: expected $" << format_usd(m.billing.expected_pico) << ", actual $"
               << format_usd(m.billing.actual_pico) << ", gap "
               << (m.billing.gap.defined ? format_gap(m.billing.gap) + "%"
                                         : std::string("undefined"))
               << "\n";
        else
            os << "  billing: " << (m.billing_note.empty() ? "unavailable" : m.billing_note)
               << "\n";
        for (const auto& [domain, s] : m.latency)
            os << "  latency[" << domain << "]: mean=" << detail::fmt3(s.mean)
               << "s cv=" << detail::fmt3(s.cv) << " p99=" << detail::fmt3(s.p99) << "s\n";
        if (m.flags.empty()) {
            os << "  flags: none\n";
        } else {
            for (const auto& f : m.flags)
                os << "  FLAG " << f.rule << ": measured " << f.measured << " vs threshold "
                   << f.threshold << " (" << f.detail << ")\n";
        }
        os << "\n";
    }
    for (const auto& [gw, err] : report.gateway_errors)
        os << "gateway " << gw << " failed: " << err << "\n";
    return os.str();
}

inline void write_audit_artifacts(const RunConfig& config, const AuditReport& report) {
    std::filesystem::create_directories(config.output_dir);
    write_file(config.output_dir + "/audit_report.csv", render_audit_csv(report));
    write_file(config.output_dir + "/conversation.csv", render_conversation_csv(report));
    write_file(config.output_dir + "/billing.csv", render_billing_csv(report));
    write_file(config.output_dir + "/latency.csv", render_latency_csv(report));
    write_file(config.output_dir + "/audit_summary.txt", render_audit_summary(report));
}

}  // namespace gatescope
