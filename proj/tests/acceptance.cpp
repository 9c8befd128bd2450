// Acceptance gate: nine end-to-end checks run as separate ctest entries.
// Each criterion prints exactly one PASS/FAIL line; the process exits
// nonzero if any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "gatescope/audit.hpp"
#include "gatescope/mock_gateway.hpp"

using namespace gatescope;

namespace {

struct Failures {
    std::vector<std::string> msgs;

    void expect(bool ok, const std::string& msg) {
        if (!ok) msgs.push_back(msg);
    }
    void expect_near(double got, double want, double tol, const std::string& what) {
        if (!(std::abs(got - want) <= tol))
            msgs.push_back(what + ": got " + std::to_string(got) + ", want " +
                           std::to_string(want) + " +/- " + std::to_string(tol));
    }
};

std::string data_path(const std::string& leaf) {
    return std::string(GATESCOPE_DATA_DIR) + "/" + leaf;
}

std::string fresh_tmp(const std::string& leaf) {
    const std::string dir = std::string(GATESCOPE_TEST_TMP) + "/acceptance/" + leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// criterion 1: billing arithmetic

void criterion1(Failures& f) {
    const auto t0 = std::chrono::steady_clock::now();

    const ModelPricing rates{2.50, 1.25, 10.00, true};
    const std::int64_t cost = expected_cost_pico(139025, 67705, 201060, rates);
    f.expect_near(pico_to_usd(cost), 2.27, 0.005, "expected_cost usd");

    const auto usd_to_pico = [](double usd) {
        return static_cast<std::int64_t>(std::llround(usd * 1e12));
    };
    const GapResult g1 = billing_gap(usd_to_pico(11.09), usd_to_pico(6.81));
    f.expect(g1.defined, "gap(11.09, 6.81) must be defined");
    f.expect_near(g1.percent, 62.8, 0.05, "gap(11.09 vs 6.81)");
    f.expect(format_gap(g1) == "+62.8", "gap formats as +62.8, got " + format_gap(g1));

    const GapResult g2 = billing_gap(usd_to_pico(6.53), usd_to_pico(6.07));
    f.expect_near(g2.percent, 7.6, 0.05, "gap(6.53 vs 6.07)");
    f.expect(format_gap(g2) == "+7.6", "gap formats as +7.6, got " + format_gap(g2));

    f.expect(seconds_since(t0) < 1.0, "billing arithmetic must run in under 1s");
}

// ---------------------------------------------------------------------------
// criterion 2: feature-extraction fixture

void criterion2(Failures& f) {
    Probe p;
    p.id = "geo-chain";
    p.domain = Domain::geo;
    p.question_text = "Which mountain overlooks the city where Starbucks was founded?";
    p.reference_answer = "Mount Rainier";
    p.answer_rule = AnswerRule::normalized_string_contains;

    const nlohmann::json body = {
        {"knowledge_path",
         {"Starbucks began in Seattle.", "Seattle is in Washington.",
          "Washington contains the Cascades.", "Its highest peak is Mount Rainier."}},
        {"final_answer", "Mount Rainier"}};
    const std::string raw = body.dump();

    const BaseFeatures feat = extract_base(parse_structured(raw), raw, p);
    f.expect(feat.answer_match == 1.0, "answer_match must be 1");
    f.expect(feat.answer_position == 1.0, "answer_position must be 1");
    f.expect(feat.depth == 4.0, "depth must be 4, got " + std::to_string(feat.depth));
    f.expect(feat.parse_success == 1.0, "parse_success must be 1");
    f.expect(feat.has_latex == 0.0, "has_latex must be 0");
}

// ---------------------------------------------------------------------------
// criterion 3: classifier oracle suite

ModelPersona sim_persona(const std::string& name, int index, int dmin, int dmax,
                         double step_mean, double step_spread) {
    ModelPersona p;
    p.name = name;
    p.accuracy_default = 0.9;
    p.depth_min = dmin;
    p.depth_max = dmax;
    p.step_length_mean = step_mean;
    p.step_length_spread = step_spread;
    p.latex_prob = 0.3;
    p.numeric_prob = 0.5;
    p.parse_fail_prob = 0.0;
    p.length_multiplier = 1.0;
    // unique latency per persona; has no effect on response content
    p.latency = {-2.0 - 0.05 * index, 0.3};
    return p;
}

// Six trained personas tile three depth levels by two step-length levels.
// The held-out sim-7 reuses the middle depth level but centres its step
// length in the gap between the two trained levels: every classifier then
// owns at least one response-shape condition that rejects it, while its
// depth stays well represented among negatives. sim-2's longer steps give
// it the same total response length as sim-5, so neither classifier can
// lean on response length alone.
std::vector<ModelPersona> seven_personas() {
    return {
        sim_persona("sim-1", 1, 3, 4, 60, 8),      // depth low,  steps short
        sim_persona("sim-2", 2, 3, 4, 317, 20),    // depth low,  steps long
        sim_persona("sim-3", 3, 9, 10, 60, 8),     // depth mid,  steps short
        sim_persona("sim-4", 4, 9, 10, 300, 20),   // depth mid,  steps long
        sim_persona("sim-5", 5, 15, 16, 60, 8),    // depth high, steps short
        sim_persona("sim-6", 6, 15, 16, 300, 20),  // depth high, steps long
        sim_persona("sim-7", 7, 9, 10, 150, 10),   // held out: depth mid, steps between levels
    };
}

std::vector<CallRecord> persona_corpus(MockGateway& gw, const ModelPersona& persona,
                                       const ProbeSuite& suite, int repetitions) {
    std::vector<CallRecord> out;
    for (const auto& probe : suite.probes) {
        for (int rep = 0; rep < repetitions; ++rep) {
            CallRecord r;
            r.probe_id = probe.id;
            r.gateway = "sim";
            r.model = persona.name;
            r.repetition_index = rep;
            r.raw_text =
                gw.persona_answer(persona, probe.question_text, static_cast<std::uint64_t>(rep));
            r.attempt_count = 1;
            r.status_history = {200};
            r.outcome = CallOutcome::ok;
            out.push_back(std::move(r));
        }
    }
    return out;
}

void criterion3(Failures& f) {
    const auto t0 = std::chrono::steady_clock::now();

    ProbeSuite suite = load_suite(data_path("suite.sample.json"));
    suite.probes.resize(12);

    Scenario sc;
    sc.name = "oracle";
    sc.seed = 7;
    sc.latency_scale = 0.0;
    sc.personas = seven_personas();
    for (const auto& p : sc.personas) sc.pricing[p.name] = ModelPricing{1.0, 0.5, 2.0, true};
    MockGateway gw(sc, suite);

    std::vector<CallRecord> corpus6;
    for (int i = 0; i < 6; ++i) {
        const auto part = persona_corpus(gw, sc.personas[static_cast<std::size_t>(i)], suite, 12);
        corpus6.insert(corpus6.end(), part.begin(), part.end());
    }

    TrainingConfig cfg;
    cfg.tree.rounds = 150;
    cfg.seed = 20260825;
    cfg.difficulty = Difficulty::medium;

    const ReferenceBank reference = ReferenceBank::from_records(corpus6, suite);
    const SignatureMatrix matrix = build_matrix(corpus6, suite, reference);
    const DatasetSplit split = split_dataset(matrix, cfg);

    std::vector<ModelClassifier> ensemble;
    for (int i = 0; i < 6; ++i) {
        const std::string& name = sc.personas[static_cast<std::size_t>(i)].name;
        ModelClassifier c = fit_classifier(split, name, cfg);
        f.expect(c.sweep.f1 >= 0.90, name + ": held-out F1 " + std::to_string(c.sweep.f1) +
                                         " below 0.90");
        ensemble.push_back(std::move(c));
    }

    // an unseen persona must receive zero positive classifications
    const auto corpus7 = persona_corpus(gw, sc.personas[6], suite, 12);
    const SignatureMatrix unseen = build_matrix(corpus7, suite, reference);
    std::size_t positives = 0;
    for (const auto& row : unseen.rows) {
        const auto features = row.flatten();
        for (const auto& c : ensemble)
            if (c.fires(features)) ++positives;
    }
    f.expect(positives == 0, "unseen persona drew " + std::to_string(positives) +
                                 " positive classifications; want 0");

    // adding the 7th classifier later must not rewrite the stored six
    ClassifierStore store(fresh_tmp("criterion3_store"));
    for (const auto& c : ensemble) store.save(c);
    std::map<std::string, std::string> before;
    for (const auto& c : ensemble)
        before[c.model_name] = read_file(store.path_of(store.file_for(c.model_name)));

    const auto t_add = std::chrono::steady_clock::now();
    std::vector<CallRecord> corpus_all = corpus6;
    corpus_all.insert(corpus_all.end(), corpus7.begin(), corpus7.end());
    const ReferenceBank reference_all = ReferenceBank::from_records(corpus_all, suite);
    const SignatureMatrix matrix_all = build_matrix(corpus_all, suite, reference_all);
    const DatasetSplit split_all = split_dataset(matrix_all, cfg);
    ModelClassifier c7 = fit_classifier(split_all, "sim-7", cfg);
    store.save(c7);
    const double add_seconds = seconds_since(t_add);
    f.expect(add_seconds <= 5.0,
             "adding the 7th classifier took " + std::to_string(add_seconds) + "s; budget 5s");

    for (const auto& [name, bytes] : before)
        f.expect(read_file(store.path_of(store.file_for(name))) == bytes,
                 name + ": stored classifier changed while adding sim-7");

    f.expect(seconds_since(t0) <= 300.0, "criterion 3 exceeded its 5 minute budget");
}

// ---------------------------------------------------------------------------
// criterion 4: elite selection equivalence

// Independent selection: repeatedly scan for the highest-probability probe,
// first among margin-qualified probes, then backfilling from the rest.
std::vector<std::string> brute_force_elite(const EliteScoreTable& table,
                                           const std::string& target, int q, double delta) {
    struct Item {
        std::string probe;
        double p = 0;
        bool qualified = false;
    };
    std::vector<Item> items;
    for (const auto& [probe, per_model] : table) {
        const auto it = per_model.find(target);
        if (it == per_model.end()) continue;
        bool any_other = false;
        double other_best = 0;
        for (const auto& [model, p] : per_model) {
            if (model == target) continue;
            if (!any_other || p > other_best) other_best = p;
            any_other = true;
        }
        const bool qualified = !any_other || (it->second - other_best >= delta);
        items.push_back({probe, it->second, qualified});
    }

    std::vector<std::string> chosen;
    std::set<std::size_t> used;
    auto take_best = [&](bool qualified_pass) -> bool {
        std::size_t best = items.size();
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (used.count(i) || items[i].qualified != qualified_pass) continue;
            if (best == items.size() || items[i].p > items[best].p ||
                (items[i].p == items[best].p && items[i].probe < items[best].probe))
                best = i;
        }
        if (best == items.size()) return false;
        used.insert(best);
        chosen.push_back(items[best].probe);
        return true;
    };
    while (static_cast<int>(chosen.size()) < q && take_best(true)) {
    }
    while (static_cast<int>(chosen.size()) < q && take_best(false)) {
    }
    return chosen;
}

void criterion4(Failures& f) {
    std::mt19937_64 rng(40);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double deltas[] = {0.1, 0.35, 0.6};
    const int qs[] = {3, 12};

    for (int trial = 0; trial < 100; ++trial) {
        const int n_probes = 5 + static_cast<int>(rng() % 56);
        const int n_models = 3 + static_cast<int>(rng() % 8);
        const double delta = deltas[trial % 3];
        const int q = qs[trial % 2];

        EliteScoreTable table;
        for (int pi = 0; pi < n_probes; ++pi) {
            char pname[8];
            std::snprintf(pname, sizeof(pname), "p%02d", pi);
            for (int mi = 0; mi < n_models; ++mi) {
                if (mi != 0 && u(rng) < 0.05) continue;  // sparse rows exercise missing entries
                table[pname]["m" + std::to_string(mi)] = u(rng);
            }
        }

        const EliteSubset got = select_elite_from_table(table, "m0", q, delta);
        std::vector<std::string> want = brute_force_elite(table, "m0", q, delta);

        std::vector<std::string> got_sorted = got.probe_ids;
        std::sort(got_sorted.begin(), got_sorted.end());
        std::sort(want.begin(), want.end());
        if (got_sorted != want) {
            f.msgs.push_back("trial " + std::to_string(trial) + ": elite sets differ (q=" +
                             std::to_string(q) + ", delta=" + std::to_string(delta) + ")");
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// criterion 5: threshold sweep equivalence

void criterion5(Failures& f) {
    std::mt19937_64 rng(50);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double precisions[] = {0.35, 0.5, 0.7};

    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 20 + rng() % 181;
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = u(rng);
            labels[i] = u(rng) < 0.3 ? 1 : 0;
        }
        ThresholdPolicy policy;
        policy.objective = (trial % 2 == 0) ? ThresholdPolicy::Objective::f1
                                            : ThresholdPolicy::Objective::recall;
        policy.min_precision = precisions[trial % 3];

        const SweepResult got = sweep_threshold(scores, labels, policy);

        // independent exhaustive pass over the same 0.10..0.95 grid
        bool have_best = false, have_fallback = false;
        double best_t = 0, best_prec = 0, best_rec = 0, best_f1 = 0, best_obj = 0;
        double fb_t = 0, fb_prec = 0, fb_rec = 0, fb_f1 = 0;
        for (int i = 10; i <= 95; i += 5) {
            const double t = static_cast<double>(i) / 100.0;
            long tp = 0, fp = 0, fn = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const bool pred = scores[k] >= t;
                if (pred && labels[k]) ++tp;
                else if (pred && !labels[k]) ++fp;
                else if (!pred && labels[k]) ++fn;
            }
            const double prec = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
            const double rec = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
            const double f1v =
                (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
            const double obj = policy.objective == ThresholdPolicy::Objective::recall ? rec : f1v;
            if (prec >= policy.min_precision && (!have_best || obj > best_obj)) {
                have_best = true;
                best_t = t; best_prec = prec; best_rec = rec; best_f1 = f1v; best_obj = obj;
            }
            if (!have_fallback || prec > fb_prec) {
                have_fallback = true;
                fb_t = t; fb_prec = prec; fb_rec = rec; fb_f1 = f1v;
            }
        }
        const double want_t = have_best ? best_t : fb_t;
        const double want_prec = have_best ? best_prec : fb_prec;
        const double want_rec = have_best ? best_rec : fb_rec;
        const double want_f1 = have_best ? best_f1 : fb_f1;
        const bool want_unconstrained = !have_best;

        if (got.threshold != want_t || got.precision != want_prec || got.recall != want_rec ||
            got.f1 != want_f1 || got.unconstrained != want_unconstrained) {
            f.msgs.push_back("trial " + std::to_string(trial) + ": sweep mismatch at threshold " +
                             std::to_string(got.threshold) + " vs " + std::to_string(want_t));
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// criterion 6: conversation detection

GatewayClient make_direct_client(MockGateway& gw) {
    GatewayProfile profile;
    profile.name = gw.scenario().gateway_name;
    profile.base_url = "http://mock.invalid";
    profile.models = {"model-a", "model-b"};
    return GatewayClient(profile,
                         [&gw]() -> std::unique_ptr<Transport> {
                             return std::make_unique<DirectTransport>(gw);
                         },
                         [](double) {});
}

std::vector<TranscriptRecord> run_five(const std::string& scenario_leaf) {
    Scenario sc = load_scenario(data_path(scenario_leaf));
    sc.latency_scale = 0.0;  // sleeps mocked out
    MockGateway gw(sc, ProbeSuite{});
    GatewayClient client = make_direct_client(gw);
    RequestParams params;
    std::vector<TranscriptRecord> runs;
    for (int r = 0; r < 5; ++r)
        runs.push_back(
            run_conversation(client, "model-a", ConversationScript::standard(), params, r));
    return runs;
}

void criterion6(Failures& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const ConversationScript script = ConversationScript::standard();

    const auto clean = run_five("scenario.clean.json");
    const ConversationMetrics mc = aggregate_runs(clean, script);
    f.expect(mc.runs_effective == 5, "clean: all 5 runs must complete");
    f.expect(mc.t10 == 5, "clean: T10 must be 5, got " + std::to_string(mc.t10));
    f.expect(mc.t24 == 5, "clean: T24 must be 5, got " + std::to_string(mc.t24));
    f.expect(mc.t25 == 5, "clean: T25 must be 5, got " + std::to_string(mc.t25));
    f.expect(mc.fingerprint_count == 1,
             "clean: FC must be 1, got " + std::to_string(mc.fingerprint_count));

    const auto truncated = run_five("scenario.truncation.json");
    const ConversationMetrics mt = aggregate_runs(truncated, script);
    f.expect(mt.runs_effective == 5, "truncation: all 5 runs must complete");
    f.expect(mt.t24 == 0, "truncation: T24 must be 0, got " + std::to_string(mt.t24));
    f.expect(mt.t25 == 0, "truncation: T25 must be 0, got " + std::to_string(mt.t25));

    const auto churned = run_five("scenario.churn.json");
    const ConversationMetrics mf = aggregate_runs(churned, script);
    f.expect(mf.fingerprint_count == 5,
             "churn period 5: FC must be 5, got " + std::to_string(mf.fingerprint_count));

    // determinism: a second pass reproduces every content field; wall times are
    // the only part allowed to differ
    const auto again = run_five("scenario.clean.json");
    const auto content = [](const TranscriptRecord& tr, const TranscriptTurn& t) {
        nlohmann::json j = transcript_turn_json(tr, t);
        j.erase("wall_time");
        return j.dump();
    };
    bool same = again.size() == clean.size();
    for (std::size_t r = 0; same && r < clean.size(); ++r) {
        same = clean[r].turns.size() == again[r].turns.size();
        for (std::size_t t = 0; same && t < clean[r].turns.size(); ++t)
            same = content(clean[r], clean[r].turns[t]) == content(again[r], again[r].turns[t]);
    }
    f.expect(same, "clean scenario replies are not deterministic per seed");

    f.expect(seconds_since(t0) <= 30.0, "criterion 6 exceeded its 30s budget");
}

// ---------------------------------------------------------------------------
// criterion 7: latency properties

void criterion7(Failures& f) {
    std::mt19937_64 rng(70);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> base(40);
    for (auto& v : base) v = std::exp(-2.0 + 0.5 * z(rng));

    const double reference_cv = compute_latency_stats(base).cv;
    for (const double c : {0.1, 1.0, 10.0}) {
        std::vector<double> scaled = base;
        for (auto& v : scaled) v *= c;
        const double cv = compute_latency_stats(scaled).cv;
        f.expect(std::abs(cv - reference_cv) <= 1e-12 * reference_cv,
                 "cv not scale-invariant at c=" + std::to_string(c));
    }

    const LatencyStats tiny = compute_latency_stats({1.0, 2.0, 3.0});
    f.expect(tiny.cv == 0.5, "cv of [1,2,3] must be exactly 0.5");

    // simulator draws: the mixed secondary mode must raise dispersion
    auto drawn_for = [&](const std::string& leaf) {
        Scenario sc = load_scenario(data_path(leaf));
        sc.latency_scale = 0.0;
        MockGateway gw(sc, ProbeSuite{});
        const MessageList msgs{{"user", "Briefly describe polymer recycling."}};
        for (int i = 0; i < 200; ++i)
            gw.handle({{"model", "model-a"}, {"messages", msgs}, {"temperature", 0.7}});
        return gw.drawn_latencies();
    };
    const auto unimodal = drawn_for("scenario.clean.json");
    const auto bimodal = drawn_for("scenario.bimodal.json");
    f.expect(unimodal.size() == 200 && bimodal.size() == 200, "latency draw count mismatch");
    const double cv_uni = compute_latency_stats(unimodal).cv;
    const double cv_bi = compute_latency_stats(bimodal).cv;
    f.expect(cv_bi > cv_uni, "bimodal cv " + std::to_string(cv_bi) +
                                 " not above unimodal cv " + std::to_string(cv_uni));
}

// ---------------------------------------------------------------------------
// criterion 8: retry policy

struct ScriptedTransport : Transport {
    std::vector<int> schedule;  // HTTP codes; -1 timeout, -2 transport failure
    std::size_t cursor = 0;
    double per_attempt_sleep = 0.0;

    explicit ScriptedTransport(std::vector<int> s, double nap = 0.0)
        : schedule(std::move(s)), per_attempt_sleep(nap) {}

    WireResponse post(const std::string&, const std::string&, const HeaderList&,
                      double) override {
        if (per_attempt_sleep > 0)
            std::this_thread::sleep_for(std::chrono::duration<double>(per_attempt_sleep));
        const int code = cursor < schedule.size() ? schedule[cursor++] : 200;
        WireResponse r;
        if (code == kStatusTimeout) {
            r.timeout = true;
            r.error = "scripted timeout";
        } else if (code == kStatusTransport) {
            r.transport_error = true;
            r.error = "scripted transport failure";
        } else {
            r.status = code;
            r.body = code == 200
                         ? nlohmann::json{
                               {"id", "chatcmpl-1"},
                               {"model", "m"},
                               {"choices",
                                {{{"index", 0},
                                  {"message", {{"role", "assistant"}, {"content", "ok"}}}}}},
                               {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 2}}}}
                               .dump()
                         : "{}";
        }
        return r;
    }
};

CallRecord scripted_call(std::vector<int> schedule, double nap = 0.0) {
    GatewayProfile profile;
    profile.name = "scripted";
    profile.base_url = "http://scripted.invalid";
    profile.models = {"m"};
    GatewayClient client(profile,
                         [schedule = std::move(schedule), nap]() -> std::unique_ptr<Transport> {
                             return std::make_unique<ScriptedTransport>(schedule, nap);
                         },
                         [](double) {});
    RequestParams params;
    params.model = "m";
    return client.send_chat({{"user", "hi"}}, params);
}

void criterion8(Failures& f) {
    // the retryable set, byte for byte
    const std::set<int> want_retry{429, 500, 502, 503, 504, 529};
    for (int code = 100; code <= 599; ++code)
        f.expect(is_retryable_status(code) == (want_retry.count(code) > 0),
                 "is_retryable_status(" + std::to_string(code) + ") wrong");
    f.expect(is_retryable_status(kStatusTimeout), "timeout sentinel must be retryable");

    for (const int code : {429, 500, 502, 503, 504, 529, kStatusTimeout}) {
        const CallRecord rec = scripted_call({code, 200});
        f.expect(rec.outcome == CallOutcome::ok && rec.attempt_count == 2,
                 "code " + std::to_string(code) + " must be retried once then succeed");
    }

    for (const int code : {400, 401, 404}) {
        const CallRecord rec = scripted_call({code, 200});
        f.expect(rec.outcome != CallOutcome::ok && rec.attempt_count == 1,
                 "code " + std::to_string(code) + " must fail without retry");
    }

    const CallRecord capped = scripted_call(std::vector<int>(20, 429));
    f.expect(capped.outcome == CallOutcome::retries_exhausted,
             "a persistent 429 must exhaust retries");
    f.expect(capped.attempt_count == 16,
             "attempt cap must be 16, got " + std::to_string(capped.attempt_count));

    // wall time includes injected per-attempt delays (30ms x 3 attempts)
    const CallRecord timed = scripted_call({429, 429, 200}, 0.030);
    f.expect(timed.outcome == CallOutcome::ok && timed.attempt_count == 3,
             "timed call must succeed on the third attempt");
    f.expect(timed.wall_time >= 0.090 - 0.001,
             "wall_time " + std::to_string(timed.wall_time) + " misses injected delays");
    f.expect(timed.wall_time <= 0.090 + 0.150,
             "wall_time " + std::to_string(timed.wall_time) + " above scheduler tolerance");
}

// ---------------------------------------------------------------------------
// criterion 9: end-to-end audit

RunConfig audit_run_config(const std::string& out_dir, const std::string& store_dir) {
    RunConfig cfg;
    cfg.seed = 42;
    cfg.suite_path = data_path("suite.sample.json");
    cfg.pricing_path = data_path("pricing.sample.json");
    cfg.output_dir = out_dir;
    cfg.store_dir = store_dir;
    cfg.repetitions.baseline = 12;
    cfg.repetitions.audit = 5;
    cfg.repetitions.conversation = 5;
    cfg.training.tree.rounds = 150;
    cfg.training.seed = 42;
    // compressed sleeps make scheduler jitter a larger share of measured
    // latency than in real deployments; widen the instability bound to match
    cfg.thresholds.cv_threshold = 2.5;
    cfg.request.repetition_spacing = 0.0;
    GatewayEntry entry;
    entry.profile.name = "mock";
    entry.profile.base_url = "http://mock.invalid";
    entry.profile.models = {"model-a", "model-b"};
    entry.profile.max_concurrency = 1;
    cfg.gateways = {entry};
    return cfg;
}

TransportMaker maker_for(MockGateway& gw) {
    return [&gw](const GatewayProfile&) -> TransportFactory {
        return [&gw]() -> std::unique_ptr<Transport> {
            return std::make_unique<DirectTransport>(gw);
        };
    };
}

// latency_scale compresses sleeps so the suite stays fast; cv is scale-free
// so the audit still sees each persona's true dispersion. Scheduler jitter
// is absolute, so the scale must keep sleeps well above the jitter floor.
constexpr double kAuditLatencyScale = 0.1;

std::map<std::string, std::vector<std::string>> audit_scenario_flags(
    const std::string& scenario_leaf, const std::string& store_dir, const ProbeSuite& suite,
    const PricingTable& pricing, int* exit_code) {
    Scenario sc = load_scenario(data_path(scenario_leaf));
    sc.latency_scale = kAuditLatencyScale;
    MockGateway gw(sc, suite);

    RunConfig cfg = audit_run_config(fresh_tmp("criterion9_" + sc.name), store_dir);
    const ClassifierStore store(cfg.store_directory());
    const AuditReport report =
        run_audit(cfg, suite, pricing, store, maker_for(gw), [](double) {},
                  [&gw](const GatewayEntry&) -> std::optional<Ledger> {
                      return gw.current_ledger();
                  });
    *exit_code = exit_code_for(report);

    std::map<std::string, std::vector<std::string>> rules;
    for (const auto& m : report.models) {
        auto& v = rules[m.model];  // ensure every audited model has an entry
        for (const auto& flag : m.flags) v.push_back(flag.rule);
        std::sort(v.begin(), v.end());
    }
    return rules;
}

void criterion9(Failures& f) {
    const ProbeSuite suite = load_suite(data_path("suite.sample.json"));
    const PricingTable pricing = load_pricing(data_path("pricing.sample.json"));

    // baseline corpus and training against the honest gateway
    Scenario base_sc = load_scenario(data_path("scenario.clean.json"));
    base_sc.latency_scale = kAuditLatencyScale;
    MockGateway base_gw(base_sc, suite);
    const std::string store_dir = fresh_tmp("criterion9_store");
    RunConfig base_cfg = audit_run_config(fresh_tmp("criterion9_baseline"), store_dir);

    const CollectSummary collected =
        run_collect(base_cfg, suite, maker_for(base_gw), [](double) {}, /*baseline_mode=*/true);
    f.expect(collected.gateway_errors.empty(), "baseline collection failed");
    const TrainResult trained = run_train(load_records(collected.records_path), suite, base_cfg);
    ClassifierStore store(store_dir);
    save_training(store, trained);

    using FlagMap = std::map<std::string, std::vector<std::string>>;
    struct Case {
        const char* leaf;
        FlagMap want;
        int want_exit;
    };
    const std::vector<Case> cases = {
        {"scenario.clean.json", {{"model-a", {}}, {"model-b", {}}}, 0},
        {"scenario.substitution.json", {{"model-a", {"claim_fraction"}}, {"model-b", {}}}, 1},
        {"scenario.markup.json",
         {{"model-a", {"billing_gap"}}, {"model-b", {"billing_gap"}}},
         1},
        {"scenario.truncation.json",
         {{"model-a", {"memory_checkpoints"}}, {"model-b", {"memory_checkpoints"}}},
         1},
    };

    for (const auto& c : cases) {
        int exit_code = -1;
        const FlagMap got = audit_scenario_flags(c.leaf, store_dir, suite, pricing, &exit_code);
        if (got != c.want) {
            std::string detail = std::string(c.leaf) + ": flags ";
            for (const auto& [model, rules] : got) {
                detail += model + "=[";
                for (const auto& r : rules) detail += r + " ";
                detail += "] ";
            }
            f.msgs.push_back(detail);
        }
        f.expect(exit_code == c.want_exit, std::string(c.leaf) + ": exit code " +
                                               std::to_string(exit_code) + ", want " +
                                               std::to_string(c.want_exit));
    }
}

// ---------------------------------------------------------------------------

struct Criterion {
    int id;
    const char* title;
    std::function<void(Failures&)> run;
};

const std::vector<Criterion>& all_criteria() {
    static const std::vector<Criterion> list = {
        {1, "billing arithmetic reproduction", criterion1},
        {2, "feature-extraction worked example", criterion2},
        {3, "classifier oracle suite", criterion3},
        {4, "elite selection equals brute force", criterion4},
        {5, "threshold sweep equals exhaustive grid", criterion5},
        {6, "conversation memory and fingerprint detection", criterion6},
        {7, "latency statistic properties", criterion7},
        {8, "retry policy conformance", criterion8},
        {9, "end-to-end audit flag sets", criterion9},
    };
    return list;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    if (selected.empty())
        for (const auto& c : all_criteria()) selected.push_back(c.id);

    int failures = 0;
    for (const int id : selected) {
        const Criterion* crit = nullptr;
        for (const auto& c : all_criteria())
            if (c.id == id) crit = &c;
        if (crit == nullptr) {
            std::printf("FAIL criterion %d: unknown criterion\n", id);
            ++failures;
            continue;
        }
        Failures f;
        try {
            crit->run(f);
        } catch (const std::exception& e) {
            f.msgs.push_back(std::string("exception: ") + e.what());
        }
        if (f.msgs.empty()) {
            std::printf("PASS criterion %d: %s\n", crit->id, crit->title);
        } else {
            std::printf("FAIL criterion %d: %s :: %s\n", crit->id, crit->title,
                        f.msgs.front().c_str());
            for (std::size_t i = 1; i < f.msgs.size(); ++i)
                std::printf("     %s\n", f.msgs[i].c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
