#pragma once

#include <cstddef>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatescope/text.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

// Append-oriented JSONL sink. Every record is flushed as soon as it is
// written so an interrupted run loses at most the line in flight.
class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path, bool append = true)
        : path_(path),
          out_(path, append ? (std::ios::out | std::ios::app) : (std::ios::out | std::ios::trunc)) {
        if (!out_) throw Error("cannot open jsonl file for writing: " + path);
    }

    void write(const nlohmann::json& record) {
        out_ << record.dump() << '\n';
        out_.flush();
        if (!out_) throw Error("jsonl write failed: " + path_);
        ++count_;
    }

    std::size_t count() const { return count_; }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream out_;
    std::size_t count_ = 0;
};

inline void for_each_jsonl(const std::string& path,
                           const std::function<void(const nlohmann::json&, std::size_t line)>& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open jsonl file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw Error(path + ":" + std::to_string(lineno) + ": malformed jsonl line");
        }
        fn(j, lineno);
    }
}

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::vector<nlohmann::json> out;
    for_each_jsonl(path, [&out](const nlohmann::json& j, std::size_t) { out.push_back(j); });
    return out;
}

}  // namespace gatescope
