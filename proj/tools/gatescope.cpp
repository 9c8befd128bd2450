// Command-line front end: audits OpenAI-compatible chat gateways and serves
// scripted mock gateways for testing. Exit codes: 0 clean, 1 anomaly flags
// fired, 2 operational failure.

#include <atomic>
#include <csignal>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gatescope/audit.hpp"
#include "gatescope/mock_gateway.hpp"

namespace {

using namespace gatescope;

struct CommonOpts {
    std::string config_path;
    std::string suite_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int reps = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool reps_used) {
    cmd->add_option("--config", o.config_path, "run configuration (json)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--suite", o.suite_path, "probe suite override (json)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out_dir, "output directory override");
    cmd->add_option("--seed", o.seed, "seed override")->each([&o](const std::string&) {
        o.seed_set = true;
    });
    if (reps_used) cmd->add_option("--reps", o.reps, "repetition count override");
}

RunConfig load_run_config(const CommonOpts& o) {
    RunConfig cfg = load_config(o.config_path);
    if (!o.suite_path.empty()) cfg.suite_path = o.suite_path;
    if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
    if (o.seed_set) cfg.seed = o.seed;
    return cfg;
}

ProbeSuite suite_for(const RunConfig& cfg) { return load_suite(cfg.suite_path); }

std::optional<PricingTable> pricing_for(const RunConfig& cfg) {
    if (cfg.pricing_path.empty()) return std::nullopt;
    return load_pricing(cfg.pricing_path);
}

void print_gateway_errors(const std::map<std::string, std::string>& errors) {
    for (const auto& [gw, err] : errors) std::cerr << "gateway " << gw << " failed: " << err << "\n";
}

// ---------------------------------------------------------------------------

int cmd_collect(const CommonOpts& o, bool baseline) {
    RunConfig cfg = load_run_config(o);
    if (o.reps > 0) {
        if (baseline)
            cfg.repetitions.baseline = o.reps;
        else
            cfg.repetitions.audit = o.reps;
    }
    const ProbeSuite suite = suite_for(cfg);

    const CollectSummary summary = run_collect(cfg, suite, http_transport_maker(), real_sleeper(),
                                               baseline);
    std::cout << "wrote " << summary.written << " records to " << summary.records_path;
    if (summary.skipped > 0) std::cout << " (skipped " << summary.skipped << " already present)";
    std::cout << "\n";
    print_gateway_errors(summary.gateway_errors);
    return summary.all_failed(cfg.gateways.size()) ? 2 : 0;
}

int cmd_train(const CommonOpts& o, const std::string& records_path) {
    RunConfig cfg = load_run_config(o);
    if (o.seed_set) cfg.training.seed = o.seed;
    const ProbeSuite suite = suite_for(cfg);

    const std::string path =
        records_path.empty() ? cfg.output_dir + "/records.jsonl" : records_path;
    const std::vector<CallRecord> records = load_records(path);
    const TrainResult result = run_train(records, suite, cfg);

    ClassifierStore store(cfg.store_directory());
    save_training(store, result);

    std::vector<CallRecord> usable;
    for (const auto& r : records)
        if (r.ok()) usable.push_back(r);
    const SignatureMatrix matrix = build_matrix(usable, suite, result.reference);
    save_matrix_csv(matrix, cfg.output_dir + "/signatures.csv");

    const std::string summary = render_train_summary(result);
    write_file(cfg.output_dir + "/train_summary.csv", summary);
    std::cout << summary;
    std::cout << "classifiers stored in " << cfg.store_directory() << "\n";
    return 0;
}

int cmd_audit(const CommonOpts& o) {
    RunConfig cfg = load_run_config(o);
    if (o.reps > 0) cfg.repetitions.audit = o.reps;
    const ProbeSuite suite = suite_for(cfg);

    const ClassifierStore store(cfg.store_directory());
    const AuditReport report =
        run_audit(cfg, suite, pricing_for(cfg), store, http_transport_maker());
    write_audit_artifacts(cfg, report);
    std::cout << render_audit_summary(report);
    return exit_code_for(report);
}

int cmd_report(const CommonOpts& o) {
    RunConfig cfg = load_run_config(o);
    const ProbeSuite suite = suite_for(cfg);

    const std::string records_path = cfg.output_dir + "/audit_records.jsonl";
    const std::string transcripts_path = cfg.output_dir + "/transcripts.jsonl";
    const std::vector<CallRecord> records = load_records(records_path);
    const std::vector<TranscriptRecord> transcripts = load_transcripts(transcripts_path);

    const ClassifierStore store(cfg.store_directory());
    AuditReport report =
        analyze_audit(cfg, suite, pricing_for(cfg), store, records, transcripts);
    report.records_digest = file_digest(records_path);
    report.transcript_digest = file_digest(transcripts_path);

    write_audit_artifacts(cfg, report);
    std::cout << render_audit_summary(report);
    return exit_code_for(report);
}

int cmd_converse(const CommonOpts& o) {
    RunConfig cfg = load_run_config(o);
    if (o.reps > 0) cfg.repetitions.conversation = o.reps;
    std::filesystem::create_directories(cfg.output_dir);
    const ConversationScript script = ConversationScript::standard();

    std::map<std::string, std::string> errors;
    std::vector<TranscriptRecord> transcripts;
    for (const auto& entry : cfg.gateways) {
        try {
            GatewayClient client(entry.profile, http_transport_maker()(entry.profile),
                                 real_sleeper(), cfg.seed);
            for (const auto& model : entry.profile.models)
                for (int run = 0; run < cfg.repetitions.conversation; ++run)
                    transcripts.push_back(
                        run_conversation(client, model, script, cfg.request, run));
        } catch (const std::exception& e) {
            errors[entry.profile.name] = e.what();
        }
    }

    const std::string path = cfg.output_dir + "/transcripts.jsonl";
    save_transcripts(path, transcripts);

    AuditReport shell;  // conversation columns only, for the csv renderer
    for (const auto& entry : cfg.gateways) {
        for (const auto& model : entry.profile.models) {
            std::vector<TranscriptRecord> mine;
            for (const auto& t : transcripts)
                if (t.gateway == entry.profile.name && t.model == model) mine.push_back(t);
            if (mine.empty()) continue;
            ModelAudit ma;
            ma.gateway = entry.profile.name;
            ma.model = model;
            ma.conversation = aggregate_runs(mine, script);
            ma.conversation_checked = true;
            shell.models.push_back(std::move(ma));
        }
    }
    write_file(cfg.output_dir + "/conversation.csv", render_conversation_csv(shell));

    for (const auto& m : shell.models) {
        const auto& c = m.conversation;
        std::cout << m.gateway << " / " << m.model << ": T10=" << c.t10 << " T24=" << c.t24
                  << " T25=" << c.t25 << " over " << c.runs_effective << "/" << c.runs_total
                  << " runs; " << c.fingerprint_count << " fingerprints; cache "
                  << (c.cache_reported
                          ? std::to_string(c.cache_rate_percent).substr(0, 5) + "%"
                          : std::string("null"))
                  << "\n";
    }
    std::cout << "transcripts written to " << path << "\n";
    print_gateway_errors(errors);
    return !errors.empty() && errors.size() == cfg.gateways.size() ? 2 : 0;
}

int cmd_bill(const CommonOpts& o, const std::string& transcripts_path) {
    RunConfig cfg = load_run_config(o);
    const std::optional<PricingTable> pricing = pricing_for(cfg);
    if (!pricing.has_value()) throw Error("bill: config has no pricing table");

    const std::string path =
        transcripts_path.empty() ? cfg.output_dir + "/transcripts.jsonl" : transcripts_path;
    const std::vector<TranscriptRecord> transcripts = load_transcripts(path);
    const LedgerProvider ledgers = file_ledger_provider();

    AuditReport shell;
    for (const auto& entry : cfg.gateways) {
        const std::optional<Ledger> ledger = ledgers(entry);
        for (const auto& model : entry.profile.models) {
            ModelAudit ma;
            ma.gateway = entry.profile.name;
            ma.model = model;
            std::vector<TranscriptRecord> mine;
            for (const auto& t : transcripts)
                if (t.gateway == entry.profile.name && t.model == model) mine.push_back(t);
            const std::vector<CallRecord> bill_records = billing_records(mine);
            if (!pricing->has(entry.profile.name, model)) {
                ma.billing_note = "pricing unavailable";
            } else if (!ledger.has_value()) {
                ma.billing_note = "ledger unavailable";
            } else if (bill_records.empty()) {
                ma.billing_note = "no usage records";
            } else {
                ma.billing = compare_billing(bill_records, *ledger, *pricing);
                ma.billing_available = true;
            }
            shell.models.push_back(std::move(ma));
        }
    }
    write_file(cfg.output_dir + "/billing.csv", render_billing_csv(shell));

    for (const auto& m : shell.models) {
        std::cout << m.gateway << " / " << m.model << ": ";
        if (!m.billing_available) {
            std::cout << m.billing_note << "\n";
            continue;
        }
        std::cout << "expected $" << format_usd(m.billing.expected_pico) << ", actual $"
                  << format_usd(m.billing.actual_pico) << ", gap "
                  << (m.billing.gap.defined ? format_gap(m.billing.gap) + "%"
                                            : std::string("undefined"))
                  << " over " << m.billing.records_used << " records\n";
    }
    return 0;
}

int cmd_latency(const CommonOpts& o, const std::string& records_path) {
    RunConfig cfg = load_run_config(o);
    const ProbeSuite suite = suite_for(cfg);

    const std::string path =
        records_path.empty() ? cfg.output_dir + "/audit_records.jsonl" : records_path;
    const std::vector<CallRecord> records = load_records(path);

    AuditReport shell;
    std::map<std::pair<std::string, std::string>, ModelAudit> by_model;
    for (const auto& [key, samples] : group_latency_samples(records, suite)) {
        ModelAudit& ma = by_model[{key.gateway, key.model}];
        ma.gateway = key.gateway;
        ma.model = key.model;
        ma.latency[key.domain] = compute_latency_stats(samples);
    }
    for (auto& [key, ma] : by_model) shell.models.push_back(std::move(ma));
    write_file(cfg.output_dir + "/latency.csv", render_latency_csv(shell));

    for (const auto& m : shell.models) {
        for (const auto& [domain, s] : m.latency) {
            std::cout << m.gateway << " / " << m.model << " [" << domain << "]: n=" << s.n
                      << " mean=" << s.mean << "s cv=" << s.cv << " p50=" << s.p50
                      << "s p99=" << s.p99 << "s";
            if (s.insufficient) std::cout << " (insufficient samples)";
            if (!s.insufficient && s.cv >= cfg.thresholds.cv_threshold) std::cout << " UNSTABLE";
            std::cout << "\n";
        }
    }
    return 0;
}

std::atomic<bool> g_stop{false};

int cmd_simulate(const std::string& scenario_path, const std::string& suite_path,
                 const std::string& host, int port, const std::string& ledger_path) {
    const Scenario scenario = load_scenario(scenario_path);
    const ProbeSuite suite = load_suite(suite_path);
    MockGateway gw(scenario, suite);
    MockServer server(gw, host, port);

    std::cout << "serving scenario '" << scenario.name << "' at " << server.base_url()
              << chat_completions_path() << "\n"
              << "ledger mirrored to " << ledger_path << "\n"
              << std::flush;

    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });

    // keep the ledger file current so audits can reconcile billing while the
    // simulator is still serving
    std::uint64_t flushed_at = 0;
    gw.write_ledger(ledger_path);
    while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        const std::uint64_t seen = gw.request_count();
        if (seen != flushed_at) {
            gw.write_ledger(ledger_path);
            flushed_at = seen;
        }
    }

    server.stop();
    gw.write_ledger(ledger_path);
    std::cout << "ledger written to " << ledger_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"black-box audit toolkit for OpenAI-compatible chat gateways"};
    app.require_subcommand(1);

    CommonOpts collect_o, train_o, audit_o, converse_o, bill_o, latency_o, report_o;
    bool baseline = false;
    std::string train_records, bill_transcripts, latency_records;
    std::string sim_scenario, sim_suite, sim_host = "127.0.0.1", sim_ledger = "ledger.json";
    int sim_port = 0;

    auto* collect = app.add_subcommand("collect", "gather probe responses into records.jsonl");
    add_common(collect, collect_o, true);
    collect->add_flag("--baseline", baseline, "baseline mode: more repetitions per probe");

    auto* train = app.add_subcommand("train", "fit per-model classifiers and elite probe subsets");
    add_common(train, train_o, false);
    train->add_option("--records", train_records, "records file (default <out>/records.jsonl)")
        ->check(CLI::ExistingFile);

    auto* audit = app.add_subcommand("audit", "run the full audit against live gateways");
    add_common(audit, audit_o, true);

    auto* converse = app.add_subcommand("converse", "run the memory retention protocol");
    add_common(converse, converse_o, true);

    auto* bill = app.add_subcommand("bill", "reconcile transcripts against gateway ledgers");
    add_common(bill, bill_o, false);
    bill->add_option("--transcripts", bill_transcripts,
                     "transcripts file (default <out>/transcripts.jsonl)")
        ->check(CLI::ExistingFile);

    auto* latency = app.add_subcommand("latency", "summarize latency stability per domain");
    add_common(latency, latency_o, false);
    latency->add_option("--records", latency_records,
                        "records file (default <out>/audit_records.jsonl)")
        ->check(CLI::ExistingFile);

    auto* report = app.add_subcommand("report", "recompute audit reports from persisted records");
    add_common(report, report_o, false);

    auto* simulate = app.add_subcommand("simulate", "serve a scenario as a local mock gateway");
    simulate->add_option("--scenario", sim_scenario, "scenario file (json)")
        ->required()
        ->check(CLI::ExistingFile);
    simulate->add_option("--suite", sim_suite, "probe suite (json)")
        ->required()
        ->check(CLI::ExistingFile);
    simulate->add_option("--host", sim_host, "bind address");
    simulate->add_option("--port", sim_port, "port (0 picks an ephemeral port)");
    simulate->add_option("--ledger", sim_ledger, "ledger output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (collect->parsed()) return cmd_collect(collect_o, baseline);
        if (train->parsed()) return cmd_train(train_o, train_records);
        if (audit->parsed()) return cmd_audit(audit_o);
        if (converse->parsed()) return cmd_converse(converse_o);
        if (bill->parsed()) return cmd_bill(bill_o, bill_transcripts);
        if (latency->parsed()) return cmd_latency(latency_o, latency_records);
        if (report->parsed()) return cmd_report(report_o);
        if (simulate->parsed())
            return cmd_simulate(sim_scenario, sim_suite, sim_host, sim_port, sim_ledger);
    } catch (const std::exception& e) {
        std::cerr << "gatescope: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
