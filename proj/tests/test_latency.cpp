#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "gatescope/latency.hpp"

using namespace gatescope;

namespace {

CallRecord timed_record(const std::string& probe, const std::string& model, double wall,
                        CallOutcome outcome = CallOutcome::ok) {
    CallRecord r;
    r.probe_id = probe;
    r.gateway = "mock";
    r.model = model;
    r.wall_time = wall;
    r.outcome = outcome;
    return r;
}

}  // namespace

TEST_CASE("latency stats on a tiny hand-checked sample", "[latency]") {
    const LatencyStats s = compute_latency_stats({3.0, 1.0, 2.0});
    CHECK(s.n == 3);
    CHECK(s.min == 1.0);
    CHECK(s.max == 3.0);
    CHECK(s.mean == 2.0);
    CHECK(s.std_dev == 1.0);  // sample variance ((1)^2+(0)^2+(1)^2)/2 = 1
    CHECK(s.cv == 0.5);
    CHECK(s.p50 == 2.0);
    CHECK(s.p90 == Catch::Approx(2.8));
    CHECK_FALSE(s.insufficient);
}

TEST_CASE("degenerate latency inputs", "[latency]") {
    CHECK_THROWS_AS(compute_latency_stats({}), Error);

    const LatencyStats one = compute_latency_stats({0.7});
    CHECK(one.n == 1);
    CHECK(one.insufficient);
    CHECK(one.cv == 0.0);
    CHECK(one.p50 == 0.7);
    CHECK(one.p99 == 0.7);

    const LatencyStats flat = compute_latency_stats({2.0, 2.0, 2.0, 2.0});
    CHECK(flat.std_dev == 0.0);
    CHECK(flat.cv == 0.0);

    // nonpositive mean leaves cv at zero rather than dividing by it
    const LatencyStats zero_mean = compute_latency_stats({0.0, 0.0});
    CHECK(zero_mean.cv == 0.0);
}

TEST_CASE("cv is invariant under positive scaling", "[latency]") {
    std::mt19937_64 rng(20260825);
    std::uniform_real_distribution<double> u(0.05, 4.0);
    std::vector<double> base(40);
    for (auto& v : base) v = u(rng);

    const double reference = compute_latency_stats(base).cv;
    for (const double c : {0.1, 10.0, 1234.5}) {
        std::vector<double> scaled = base;
        for (auto& v : scaled) v *= c;
        const double cv = compute_latency_stats(scaled).cv;
        CHECK(std::abs(cv - reference) <= 1e-12 * reference);
    }

    // adding a constant shifts the mean only, so cv must drop
    std::vector<double> shifted = base;
    for (auto& v : shifted) v += 5.0;
    CHECK(compute_latency_stats(shifted).cv < reference);
}

TEST_CASE("percentiles are ordered and interpolate linearly", "[latency]") {
    std::vector<double> samples;
    for (int i = 1; i <= 101; ++i) samples.push_back(static_cast<double>(i));
    const LatencyStats s = compute_latency_stats(samples);
    CHECK(s.p50 == 51.0);
    CHECK(s.p90 == 91.0);
    CHECK(s.p99 == 100.0);
    CHECK(s.p50 <= s.p90);
    CHECK(s.p90 <= s.p99);
    CHECK(s.p99 <= s.max);

    // two samples: p50 falls halfway between them
    CHECK(compute_latency_stats({1.0, 2.0}).p50 == 1.5);
}

TEST_CASE("instability flag requires enough samples and a high cv", "[latency]") {
    LatencyStats s = compute_latency_stats({1.0, 4.0});  // cv > 0.8
    CHECK(flag_instability(s, 0.8));
    CHECK_FALSE(flag_instability(s, 2.0));

    const LatencyStats one = compute_latency_stats({9.0});
    CHECK_FALSE(flag_instability(one, 0.0));  // insufficient, never flagged

    // threshold is inclusive
    const LatencyStats tight = compute_latency_stats({1.0, 3.0});  // mean 2, sd sqrt(2)
    CHECK(flag_instability(tight, tight.cv));
}

TEST_CASE("grouping pools wall times by gateway, model and domain", "[latency]") {
    ProbeSuite suite;
    suite.name = "unit";
    Probe math;
    math.id = "math-1";
    math.domain = Domain::math;
    math.question_text = "Add two and two.";
    math.reference_answer = "4";
    math.answer_rule = AnswerRule::numeric_exact;
    Probe geo = math;
    geo.id = "geo-1";
    geo.domain = Domain::geo;
    suite.probes = {math, geo};

    std::vector<CallRecord> records;
    records.push_back(timed_record("math-1", "model-a", 0.5));
    records.push_back(timed_record("math-1", "model-a", 0.7));
    records.push_back(timed_record("geo-1", "model-a", 1.5));
    records.push_back(timed_record("math-1", "model-b", 0.9));
    records.push_back(timed_record("conv-run0-turn3", "model-a", 2.0));  // not in suite
    records.push_back(timed_record("math-1", "model-a", 9.0, CallOutcome::timeout));  // dropped

    const auto groups = group_latency_samples(records, suite);
    REQUIRE(groups.size() == 4);
    CHECK(groups.at({"mock", "model-a", "math"}) == std::vector<double>{0.5, 0.7});
    CHECK(groups.at({"mock", "model-a", "geo"}) == std::vector<double>{1.5});
    CHECK(groups.at({"mock", "model-b", "math"}) == std::vector<double>{0.9});
    CHECK(groups.at({"mock", "model-a", "other"}) == std::vector<double>{2.0});
}

TEST_CASE("bimodal mixtures raise cv over the primary mode alone", "[latency]") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> pick(0.0, 1.0);

    std::vector<double> unimodal, bimodal;
    for (int i = 0; i < 200; ++i) {
        const double primary = std::exp(-2.3 + 0.25 * z(rng));
        unimodal.push_back(primary);
        const double secondary = std::exp(1.0 + 0.3 * z(rng));
        bimodal.push_back(pick(rng) < 0.3 ? secondary : primary);
    }
    CHECK(compute_latency_stats(bimodal).cv > compute_latency_stats(unimodal).cv);
}
