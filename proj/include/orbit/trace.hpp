#pragma once

// Per-decision rollout traces, serialised as JSONL. One header line per
// episode ("kind":"episode") followed by one line per sampled decision.

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbit/graph.hpp"

namespace orbit {

enum class DecisionKind { activate, spatial, temporal };

inline const char* to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::activate: return "activate";
    case DecisionKind::spatial: return "spatial";
    case DecisionKind::temporal: return "temporal";
  }
  return "?";
}

inline DecisionKind decision_kind_from_string(const std::string& s) {
  if (s == "activate") return DecisionKind::activate;
  if (s == "spatial") return DecisionKind::spatial;
  if (s == "temporal") return DecisionKind::temporal;
  throw std::invalid_argument("unknown decision kind '" + s + "'");
}

// `probability` is the conditional probability of the realised outcome.
struct DecisionRecord {
  DecisionKind kind = DecisionKind::activate;
  std::vector<AgentId> ids;
  double logit = 0.0;
  double probability = 1.0;
  bool accepted = false;
};

struct EpisodeHeader {
  long episode = 0;
  std::string task_id;
  int budget = 0;
  int active_count = 0;
  int rounds = 1;
  double r_task = 0.0;
  double lambda_cost = 0.0;
  double density = 0.0;
  double reward = 0.0;
};

struct EpisodeTraceLog {
  EpisodeHeader header;
  std::vector<DecisionRecord> decisions;
};

inline nlohmann::ordered_json to_json(const EpisodeHeader& h) {
  nlohmann::ordered_json j;
  j["kind"] = "episode";
  j["episode"] = h.episode;
  j["task_id"] = h.task_id;
  j["budget"] = h.budget;
  j["active_count"] = h.active_count;
  j["rounds"] = h.rounds;
  j["r_task"] = h.r_task;
  j["lambda_cost"] = h.lambda_cost;
  j["density"] = h.density;
  j["reward"] = h.reward;
  return j;
}

inline nlohmann::ordered_json to_json(const DecisionRecord& d) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(d.kind);
  j["ids"] = d.ids;
  j["logit"] = d.logit;
  j["probability"] = d.probability;
  j["accepted"] = d.accepted;
  return j;
}

inline void write_trace(std::ostream& os, const EpisodeTraceLog& log) {
  os << to_json(log.header).dump() << '\n';
  for (const auto& d : log.decisions) os << to_json(d).dump() << '\n';
}

struct TraceFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<EpisodeTraceLog> read_traces(std::istream& is) {
  std::vector<EpisodeTraceLog> out;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      const std::string kind = j.at("kind");
      if (kind == "episode") {
        EpisodeTraceLog log;
        auto& h = log.header;
        h.episode = j.at("episode");
        h.task_id = j.at("task_id");
        h.budget = j.at("budget");
        h.active_count = j.at("active_count");
        h.rounds = j.at("rounds");
        h.r_task = j.at("r_task");
        h.lambda_cost = j.at("lambda_cost");
        h.density = j.at("density");
        h.reward = j.at("reward");
        out.push_back(std::move(log));
        continue;
      }
      if (out.empty()) throw TraceFormatError("decision before any episode header");
      DecisionRecord d;
      d.kind = decision_kind_from_string(kind);
      d.ids = j.at("ids").get<std::vector<AgentId>>();
      d.logit = j.at("logit");
      d.probability = j.at("probability");
      d.accepted = j.at("accepted");
      out.back().decisions.push_back(std::move(d));
    } catch (const TraceFormatError& e) {
      throw TraceFormatError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw TraceFormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace orbit
