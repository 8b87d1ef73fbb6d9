#pragma once

// Persisted LLM call traces: JSON Lines, one record per line, keys exactly
// seq, kind, prompt, schema_id, response, model, latency_ms.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace efx {

struct LLMCallRecord {
  std::int64_t seq = 0;
  std::string kind;  // "complete" | "parse"
  std::string prompt;
  std::optional<std::string> schema_id;
  std::string response;
  std::string model;
  double latency_ms = 0;

  bool operator==(const LLMCallRecord& o) const {
    return seq == o.seq && kind == o.kind && prompt == o.prompt &&
           schema_id == o.schema_id && response == o.response &&
           model == o.model && latency_ms == o.latency_ms;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"seq", seq},       {"kind", kind},
                     {"prompt", prompt}, {"response", response},
                     {"model", model},   {"latency_ms", latency_ms}};
    j["schema_id"] = schema_id ? nlohmann::json(*schema_id) : nlohmann::json();
    return j;
  }
};

class TraceFormatError : public std::runtime_error {
 public:
  TraceFormatError(const std::string& what, int line)
      : std::runtime_error("trace line " + std::to_string(line) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct Trace {
  std::vector<LLMCallRecord> records;

  bool operator==(const Trace& o) const { return records == o.records; }

  void check_well_formed() const {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.seq != static_cast<std::int64_t>(i))
        throw TraceFormatError("seq values must be contiguous from 0",
                               static_cast<int>(i) + 1);
      if (r.kind != "complete" && r.kind != "parse")
        throw TraceFormatError("kind must be \"complete\" or \"parse\"",
                               static_cast<int>(i) + 1);
      if ((r.kind == "parse") != r.schema_id.has_value())
        throw TraceFormatError("kind \"parse\" iff schema_id is non-null",
                               static_cast<int>(i) + 1);
    }
  }

  std::string serialize() const {
    std::ostringstream out;
    for (const auto& r : records) out << r.to_json().dump() << "\n";
    return out.str();
  }

  void save(const std::string& path) const {
    check_well_formed();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    out << serialize();
  }

  static LLMCallRecord parse_line(const std::string& line, int lineno) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw TraceFormatError(e.what(), lineno);
    }
    static const char* keys[] = {"seq",      "kind",  "prompt", "schema_id",
                                 "response", "model", "latency_ms"};
    for (const char* k : keys)
      if (!j.contains(k)) throw TraceFormatError(std::string("missing key '") + k + "'", lineno);
    LLMCallRecord r;
    try {
      r.seq = j.at("seq").get<std::int64_t>();
      r.kind = j.at("kind").get<std::string>();
      r.prompt = j.at("prompt").get<std::string>();
      if (!j.at("schema_id").is_null())
        r.schema_id = j.at("schema_id").get<std::string>();
      r.response = j.at("response").get<std::string>();
      r.model = j.at("model").get<std::string>();
      r.latency_ms = j.at("latency_ms").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw TraceFormatError(e.what(), lineno);
    }
    return r;
  }

  static Trace deserialize(std::istream& in) {
    Trace t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      t.records.push_back(parse_line(line, lineno));
    }
    t.check_well_formed();
    return t;
  }

  static Trace load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read trace file: " + path);
    return deserialize(in);
  }
};

}  // namespace efx
