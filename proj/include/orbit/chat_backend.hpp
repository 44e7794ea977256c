#pragma once

// Agent backend for a JSON chat-completion endpoint (OpenAI-style request
// body: model, messages[{role, content}], temperature, max_tokens). Only
// plain http:// endpoints are supported.

#include <cstdlib>
#include <optional>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "orbit/execution.hpp"

namespace orbit {

struct EndpointConfig {
  std::string url = "http://127.0.0.1:8000/v1/chat/completions";
  std::string auth_token;
  std::string model = "default";
  double timeout_seconds = 60.0;
  double temperature = 0.0;
  int max_tokens = 512;

  // ORBIT_CHAT_URL, ORBIT_CHAT_TOKEN, ORBIT_CHAT_MODEL, ORBIT_CHAT_TIMEOUT
  static EndpointConfig from_env() {
    EndpointConfig c;
    if (const char* v = std::getenv("ORBIT_CHAT_URL")) c.url = v;
    if (const char* v = std::getenv("ORBIT_CHAT_TOKEN")) c.auth_token = v;
    if (const char* v = std::getenv("ORBIT_CHAT_MODEL")) c.model = v;
    if (const char* v = std::getenv("ORBIT_CHAT_TIMEOUT")) c.timeout_seconds = std::stod(v);
    return c;
  }
};

struct ChatParseError : BackendError {
  ChatParseError(const std::string& what, std::string body) : BackendError(what, false), raw_body(std::move(body)) {}
  std::string raw_body;
};

struct ParsedUrl {
  std::string host_port;  // scheme://host:port
  std::string path;
};

inline ParsedUrl parse_endpoint_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint url needs a scheme: " + url);
  if (url.substr(0, scheme_end) != "http") throw std::invalid_argument("only http:// endpoints are supported: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

// Role and state go in the system slot; the query and every predecessor
// message (tagged with sender role and round) in the user slot.
inline nlohmann::ordered_json build_chat_request(const EndpointConfig& cfg, const AgentSpec& agent, const RolePool* pool,
                                                 const AgentInput& in) {
  std::string system = "You are the " + agent.role + ".";
  if (!agent.state.empty()) system += " " + agent.state;
  std::string user = "Question: " + in.query;
  auto tag = [&](const Message& m) {
    const std::string role = pool && pool->contains(m.sender_id) ? pool->agent(m.sender_id).role : "agent " + std::to_string(m.sender_id);
    return "\n\n[" + role + ", round " + std::to_string(m.round) + "]\n" + m.content;
  };
  for (const auto& m : in.spatial_context) user += tag(m);
  for (const auto& m : in.temporal_context) user += tag(m);
  nlohmann::ordered_json body;
  body["model"] = cfg.model;
  body["messages"] = nlohmann::ordered_json::array({{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}});
  body["temperature"] = cfg.temperature;
  body["max_tokens"] = cfg.max_tokens;
  return body;
}

inline Message parse_chat_response(const std::string& body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ChatParseError("chat response is not JSON", body);
  try {
    Message m;
    m.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    const auto& usage = j.at("usage");
    m.prompt_tokens = usage.at("prompt_tokens").get<long>();
    m.completion_tokens = usage.at("completion_tokens").get<long>();
    if (m.prompt_tokens < 0 || m.completion_tokens < 0) throw ChatParseError("negative token usage", body);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ChatParseError(std::string("malformed chat response: ") + e.what(), body);
  }
}

class ChatBackend final : public AgentBackend {
 public:
  explicit ChatBackend(EndpointConfig cfg, const RolePool* pool = nullptr) : cfg_(std::move(cfg)), pool_(pool) {}

  const EndpointConfig& config() const { return cfg_; }
  const std::string& last_request_body() const { return last_request_; }

  Message respond(const AgentSpec& agent, const AgentInput& input) override {
    const auto url = parse_endpoint_url(cfg_.url);
    httplib::Client client(url.host_port);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!cfg_.auth_token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.auth_token);
    last_request_ = build_chat_request(cfg_, agent, pool_, input).dump();
    auto res = client.Post(url.path, headers, last_request_, "application/json");
    if (!res) throw BackendError("chat request failed: " + httplib::to_string(res.error()), true);
    if (res->status == 429 || res->status >= 500)
      throw BackendError("chat endpoint returned HTTP " + std::to_string(res->status), true);
    if (res->status != 200)
      throw ChatParseError("chat endpoint returned HTTP " + std::to_string(res->status), res->body);
    Message m = parse_chat_response(res->body);
    m.sender_id = agent.id;
    m.round = input.round;
    return m;
  }

 private:
  EndpointConfig cfg_;
  const RolePool* pool_;
  std::string last_request_;
};

}  // namespace orbit
