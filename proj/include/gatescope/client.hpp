#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatescope/http.hpp"
#include "gatescope/messages.hpp"
#include "gatescope/probe.hpp"
#include "gatescope/records.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

struct GatewayProfile {
    std::string name;
    std::string base_url;
    std::string auth_env_var;  // empty means unauthenticated
    std::vector<std::string> models;
    int max_concurrency = 1;
    std::string pricing_ref;

    void validate() const {
        if (name.empty()) throw Error("gateway profile: name empty");
        if (base_url.empty()) throw Error("gateway profile '" + name + "': base_url empty");
        if (models.empty()) throw Error("gateway profile '" + name + "': no models");
        if (max_concurrency < 1)
            throw Error("gateway profile '" + name + "': max_concurrency must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const GatewayProfile& p) {
    j = nlohmann::json{{"name", p.name},
                       {"base_url", p.base_url},
                       {"auth_env_var", p.auth_env_var},
                       {"models", p.models},
                       {"max_concurrency", p.max_concurrency},
                       {"pricing_ref", p.pricing_ref}};
}

inline void from_json(const nlohmann::json& j, GatewayProfile& p) {
    j.at("name").get_to(p.name);
    j.at("base_url").get_to(p.base_url);
    p.auth_env_var = j.value("auth_env_var", std::string());
    j.at("models").get_to(p.models);
    p.max_concurrency = j.value("max_concurrency", 1);
    p.pricing_ref = j.value("pricing_ref", std::string());
}

struct RequestParams {
    std::string model;
    double temperature = 0.7;
    double total_timeout = 900.0;       // budget across all attempts, seconds
    double per_attempt_timeout = 300.0; // read timeout per attempt, seconds
    int max_retries = 15;               // 16 attempts total
    bool retrieval_disabled = true;     // no tool or retrieval fields in the body
    double repetition_spacing = 7200.0; // pause between collection rounds, seconds
};

inline bool is_retryable_status(int status) {
    if (status == kStatusTimeout || status == kStatusTransport) return true;
    switch (status) {
        case 429: case 500: case 502: case 503: case 504: case 529: return true;
        default: return false;
    }
}

struct BackoffPolicy {
    double base = 1.0;
    double factor = 2.0;
    double cap = 60.0;

    // Full jitter: uniform in [0, min(cap, base*factor^(retry-1))).
    double delay(int retry_number, std::uint64_t bits) const {
        const double ceiling = std::min(cap, base * std::pow(factor, retry_number - 1));
        const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
        return u * ceiling;
    }
};

using Sleeper = std::function<void(double)>;

inline Sleeper real_sleeper() {
    return [](double seconds) {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    };
}

inline std::string build_chat_body(const std::string& model, const MessageList& messages,
                                   double temperature) {
    nlohmann::json j{{"model", model}, {"messages", messages}, {"temperature", temperature}};
    return j.dump();
}

namespace detail {

inline std::int64_t json_int(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number()) return 0;
    return j[key].get<std::int64_t>();
}

// Fills content, usage, fingerprint and id from a 2xx envelope. A body that
// is not a JSON object is kept verbatim as raw_text so nothing is lost.
inline void parse_chat_envelope(const std::string& body, CallRecord& rec) {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        rec.raw_text = body;
        return;
    }
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
        const auto& c0 = j["choices"][0];
        if (c0.is_object() && c0.contains("message") && c0["message"].is_object()) {
            const auto& msg = c0["message"];
            if (msg.contains("content") && msg["content"].is_string())
                rec.raw_text = msg["content"].get<std::string>();
        }
    }
    if (j.contains("usage") && j["usage"].is_object()) {
        const auto& u = j["usage"];
        rec.usage.reported = true;
        rec.usage.prompt_tokens = json_int(u, "prompt_tokens");
        rec.usage.completion_tokens = json_int(u, "completion_tokens");
        if (u.contains("prompt_tokens_details") && u["prompt_tokens_details"].is_object() &&
            u["prompt_tokens_details"].contains("cached_tokens")) {
            rec.usage.cache_field_reported = true;
            rec.usage.cached_tokens = json_int(u["prompt_tokens_details"], "cached_tokens");
        }
    }
    if (j.contains("system_fingerprint") && j["system_fingerprint"].is_string())
        rec.system_fingerprint = j["system_fingerprint"].get<std::string>();
    if (j.contains("id") && j["id"].is_string())
        rec.response_id = j["id"].get<std::string>();
}

}  // namespace detail

class GatewayClient {
public:
    GatewayClient(GatewayProfile profile, TransportFactory factory,
                  Sleeper sleeper = real_sleeper(), std::uint64_t seed = 0x6a7e5c09u)
        : profile_(std::move(profile)), factory_(std::move(factory)),
          sleeper_(std::move(sleeper)), seed_(seed) {
        profile_.validate();
        if (!factory_) throw Error("gateway client: null transport factory");
    }

    const GatewayProfile& profile() const { return profile_; }

    CallRecord send_chat(const MessageList& messages, const RequestParams& params,
                         const std::string& probe_id = std::string(), int repetition = 0) {
        std::lock_guard lk(own_mutex_);
        if (!own_transport_) own_transport_ = factory_();
        return send_chat_with(*own_transport_, messages, params, probe_id, repetition);
    }

    CallRecord send_chat_with(Transport& transport, const MessageList& messages,
                              const RequestParams& params, const std::string& probe_id,
                              int repetition) {
        if (params.model.empty()) throw Error("send_chat: model empty");
        if (params.max_retries < 0) throw Error("send_chat: max_retries < 0");

        CallRecord rec;
        rec.probe_id = probe_id;
        rec.gateway = profile_.name;
        rec.model = params.model;
        rec.repetition_index = repetition;
        rec.timestamp = iso8601_utc_now();

        const HeaderList headers = auth_headers();
        const std::string body = build_chat_body(params.model, messages, params.temperature);
        std::mt19937_64 rng(mix_hash(seed_, call_counter_.fetch_add(1)));

        const auto t0 = std::chrono::steady_clock::now();
        const auto elapsed = [&] {
            return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        };
        const int max_attempts = params.max_retries + 1;

        for (int attempt = 1; attempt <= max_attempts; ++attempt) {
            const double remaining = params.total_timeout - elapsed();
            if (remaining <= 0.0) {
                rec.outcome = CallOutcome::timeout;
                rec.error_message = "total timeout of " + std::to_string(params.total_timeout) +
                                    "s exceeded before attempt " + std::to_string(attempt);
                break;
            }
            const double attempt_timeout = std::min(params.per_attempt_timeout, remaining);
            const WireResponse w = transport.post(chat_completions_path(), body, headers,
                                                  attempt_timeout);
            const int code = w.wire_ok() ? w.status
                                         : (w.timeout ? kStatusTimeout : kStatusTransport);
            rec.status_history.push_back(code);

            if (w.wire_ok() && w.status / 100 == 2) {
                rec.outcome = CallOutcome::ok;
                detail::parse_chat_envelope(w.body, rec);
                break;
            }
            if (w.wire_ok() && !is_retryable_status(w.status)) {
                rec.outcome = (w.status == 401 || w.status == 403) ? CallOutcome::auth_error
                                                                   : CallOutcome::client_error;
                rec.error_message = "HTTP " + std::to_string(w.status);
                if (!w.body.empty()) rec.raw_text = w.body;
                break;
            }
            if (attempt == max_attempts) {
                rec.outcome = CallOutcome::retries_exhausted;
                rec.error_message = "gave up after " + std::to_string(max_attempts) +
                                    " attempts; last status " + std::to_string(code);
                break;
            }
            const double delay = backoff_.delay(attempt, rng());
            if (elapsed() + delay >= params.total_timeout) {
                rec.outcome = CallOutcome::timeout;
                rec.error_message = "total timeout of " + std::to_string(params.total_timeout) +
                                    "s exceeded during backoff after attempt " +
                                    std::to_string(attempt);
                break;
            }
            if (delay > 0.0) sleeper_(delay);
        }

        rec.attempt_count = static_cast<int>(rec.status_history.size());
        rec.wall_time = elapsed();
        return rec;
    }

    struct CollectOptions {
        std::vector<std::string> models;  // empty: use profile models
        int repetitions = 12;
        std::function<bool(const std::string& model, const std::string& probe_id, int rep)> skip;
        std::function<void(const CallRecord&)> sink;  // called serialized, record order
    };

    // Runs repetitions as sequential rounds separated by repetition_spacing.
    // Within a round, model x probe tasks run on up to max_concurrency workers.
    std::vector<CallRecord> collect(const ProbeSuite& suite, const RequestParams& base_params,
                                    const CollectOptions& opts) {
        if (opts.repetitions < 1) throw Error("collect: repetitions must be >= 1");
        const std::vector<std::string>& models =
            opts.models.empty() ? profile_.models : opts.models;
        if (models.empty()) throw Error("collect: no models");
        if (suite.probes.empty()) throw Error("collect: empty probe suite");

        std::vector<CallRecord> out;
        std::mutex out_mutex;

        for (int rep = 0; rep < opts.repetitions; ++rep) {
            if (rep > 0 && base_params.repetition_spacing > 0.0)
                sleeper_(base_params.repetition_spacing);

            struct Task { const Probe* probe; const std::string* model; };
            std::vector<Task> tasks;
            for (const auto& model : models)
                for (const auto& probe : suite.probes) {
                    if (opts.skip && opts.skip(model, probe.id, rep)) continue;
                    tasks.push_back({&probe, &model});
                }
            if (tasks.empty()) continue;

            std::atomic<std::size_t> next{0};
            std::atomic<bool> aborted{false};
            std::exception_ptr first_error;
            const std::size_t n_workers =
                std::min<std::size_t>(static_cast<std::size_t>(profile_.max_concurrency),
                                      tasks.size());
            auto worker = [&] {
                try {
                    auto transport = factory_();
                    while (!aborted.load()) {
                        const std::size_t i = next.fetch_add(1);
                        if (i >= tasks.size()) break;
                        const Task& t = tasks[i];
                        RequestParams params = base_params;
                        params.model = *t.model;
                        const auto envelope = render_prompt(*t.probe);
                        MessageList messages{{"system", envelope.system_message},
                                             {"user", envelope.user_message}};
                        CallRecord rec =
                            send_chat_with(*transport, messages, params, t.probe->id, rep);
                        std::lock_guard lk(out_mutex);
                        out.push_back(rec);
                        if (opts.sink) opts.sink(rec);
                    }
                } catch (...) {
                    std::lock_guard lk(out_mutex);
                    if (!first_error) first_error = std::current_exception();
                    aborted.store(true);
                }
            };

            if (n_workers <= 1) {
                worker();
            } else {
                std::vector<std::thread> pool;
                pool.reserve(n_workers);
                for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
                for (auto& th : pool) th.join();
            }
            if (first_error) std::rethrow_exception(first_error);
        }
        return out;
    }

private:
    HeaderList auth_headers() const {
        HeaderList h;
        if (!profile_.auth_env_var.empty()) {
            const char* key = std::getenv(profile_.auth_env_var.c_str());
            if (key == nullptr || *key == '\0')
                throw Error("gateway '" + profile_.name + "': environment variable '" +
                            profile_.auth_env_var + "' is not set");
            h.emplace_back("Authorization", std::string("Bearer ") + key);
        }
        return h;
    }

    GatewayProfile profile_;
    TransportFactory factory_;
    Sleeper sleeper_;
    std::uint64_t seed_;
    BackoffPolicy backoff_;
    std::atomic<std::uint64_t> call_counter_{0};
    std::mutex own_mutex_;
    std::unique_ptr<Transport> own_transport_;
};

}  // namespace gatescope
