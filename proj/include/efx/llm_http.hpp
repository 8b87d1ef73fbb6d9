#pragma once

// HTTP implementation of LiveBackend::call. Separate header so that
// mock-only translation units do not compile the HTTP stack. Include this
// (exactly once per binary is fine, everything is inline) wherever a
// LiveBackend is actually used.

#include <httplib.h>

#include "efx/llm.hpp"

namespace efx {

inline std::string LiveBackend::call(CallKind kind, const std::string& prompt,
                                     const SchemaRef* schema) {
  Json body = request_body(kind, prompt, schema);
  auto do_post = [this, &body]() -> std::string {
    httplib::Client client(cfg_.base_url);
    client.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
    if (!cfg_.api_key.empty()) client.set_bearer_token_auth(cfg_.api_key);
    auto res = client.Post("/chat/completions", body.dump(), "application/json");
    if (!res)
      throw BackendError("request to " + cfg_.base_url + " failed: " +
                         httplib::to_string(res.error()));
    if (res->status != 200)
      throw BackendError("HTTP " + std::to_string(res->status) + " from " +
                         cfg_.base_url + ": " + res->body.substr(0, 200));
    Json reply;
    try {
      reply = Json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content")
          .get<std::string>();
    } catch (const Json::exception& e) {
      throw BackendError(std::string("malformed chat-completions response: ") +
                         e.what() + ": " + res->body.substr(0, 200));
    }
  };
  // Network I/O happens off the baton so requests overlap in flight.
  if (Scheduler* sched = Scheduler::current())
    return sched->run_blocking(do_post);
  return do_post();
}

}  // namespace efx
