#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "gatescope/probe.hpp"
#include "gatescope/records.hpp"
#include "gatescope/stats.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

struct LatencyStats {
    std::size_t n = 0;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double std_dev = 0.0;  // sample standard deviation
    double cv = 0.0;       // std_dev / mean
    double p50 = 0.0;
    double p90 = 0.0;
    double p99 = 0.0;
    bool insufficient = false;  // fewer than two samples: cv not meaningful
};

inline LatencyStats compute_latency_stats(std::vector<double> samples) {
    if (samples.empty()) throw Error("latency stats: no samples");
    LatencyStats s;
    s.n = samples.size();
    std::sort(samples.begin(), samples.end());
    s.min = samples.front();
    s.max = samples.back();
    s.mean = mean_of(samples);
    s.std_dev = stddev_sample(samples);
    s.cv = s.mean > 0.0 ? s.std_dev / s.mean : 0.0;
    s.p50 = percentile_sorted(samples, 0.50);
    s.p90 = percentile_sorted(samples, 0.90);
    s.p99 = percentile_sorted(samples, 0.99);
    s.insufficient = s.n < 2;
    return s;
}

inline bool flag_instability(const LatencyStats& s, double cv_threshold = 1.0) {
    return !s.insufficient && s.cv >= cv_threshold;
}

struct LatencyKey {
    std::string gateway;
    std::string model;
    std::string domain;

    bool operator<(const LatencyKey& o) const {
        return std::tie(gateway, model, domain) < std::tie(o.gateway, o.model, o.domain);
    }
};

// Pools wall times of successful calls per (gateway, model, domain). Records
// whose probe id is not in the suite land in the "other" bucket.
inline std::map<LatencyKey, std::vector<double>> group_latency_samples(
    const std::vector<CallRecord>& records, const ProbeSuite& suite) {
    std::map<LatencyKey, std::vector<double>> out;
    for (const auto& rec : records) {
        if (!rec.ok()) continue;
        const Probe* probe = suite.find(rec.probe_id);
        const std::string domain = probe ? to_string(probe->domain) : std::string("other");
        out[LatencyKey{rec.gateway, rec.model, domain}].push_back(rec.wall_time);
    }
    return out;
}

}  // namespace gatescope
