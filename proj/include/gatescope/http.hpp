#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>

#include "gatescope/util.hpp"

namespace gatescope {

inline std::string chat_completions_path() { return "/v1/chat/completions"; }

struct WireResponse {
    int status = 0;
    std::string body;
    bool timeout = false;
    bool transport_error = false;
    std::string error;

    bool wire_ok() const { return !timeout && !transport_error; }
};

using HeaderList = std::vector<std::pair<std::string, std::string>>;

// One POST round trip. Implementations need not be thread-safe; callers give
// each worker its own instance.
class Transport {
public:
    virtual ~Transport() = default;
    virtual WireResponse post(const std::string& path, const std::string& body,
                              const HeaderList& headers, double timeout_seconds) = 0;
};

using TransportFactory = std::function<std::unique_ptr<Transport>()>;

// Splits "http://host:port/prefix" into origin and path prefix.
struct ParsedBaseUrl {
    std::string origin;
    std::string path_prefix;
};

inline ParsedBaseUrl parse_base_url(const std::string& base_url) {
    if (base_url.empty()) throw Error("base_url empty");
    const std::size_t scheme_end = base_url.find("://");
    const std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const std::size_t slash = base_url.find('/', host_start);
    ParsedBaseUrl p;
    if (slash == std::string::npos) {
        p.origin = base_url;
    } else {
        p.origin = base_url.substr(0, slash);
        p.path_prefix = base_url.substr(slash);
        while (!p.path_prefix.empty() && p.path_prefix.back() == '/') p.path_prefix.pop_back();
    }
    return p;
}

class HttpTransport final : public Transport {
public:
    explicit HttpTransport(const std::string& base_url)
        : parsed_(parse_base_url(base_url)), client_(parsed_.origin) {
        client_.set_keep_alive(true);
    }

    WireResponse post(const std::string& path, const std::string& body,
                      const HeaderList& headers, double timeout_seconds) override {
        const auto micros = static_cast<time_t>(timeout_seconds * 1e6);
        client_.set_connection_timeout(micros / 1000000, micros % 1000000);
        client_.set_read_timeout(micros / 1000000, micros % 1000000);
        client_.set_write_timeout(micros / 1000000, micros % 1000000);

        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        const auto result = client_.Post(parsed_.path_prefix + path, h, body, "application/json");

        WireResponse w;
        if (result) {
            w.status = result->status;
            w.body = result->body;
            return w;
        }
        // A read timeout mid-response surfaces as Error::Read here and is
        // classed as a transport failure; both classes retry identically.
        if (result.error() == httplib::Error::ConnectionTimeout) {
            w.timeout = true;
        } else {
            w.transport_error = true;
        }
        w.error = httplib::to_string(result.error());
        return w;
    }

private:
    ParsedBaseUrl parsed_;
    httplib::Client client_;
};

}  // namespace gatescope
