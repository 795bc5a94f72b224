#pragma once

// Remote generation backend: POST {"prompt", "max_tokens"} to the configured
// endpoint, expect {"output"}. Non-2xx responses and transport errors are
// retried; exhaustion surfaces a GenerationError carrying the prompt digest.

#include <string>

#include <httplib.h>

#include "lamplab/common.hpp"

namespace lamplab {

namespace remote_detail {

struct SplitUrl {
  std::string base;  // scheme://host:port
  std::string path;
};

inline SplitUrl split_endpoint(const std::string& endpoint) {
  SplitUrl out;
  size_t scheme = endpoint.find("://");
  size_t path_start = endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) {
    out.base = endpoint;
    out.path = "/generate";
  } else {
    out.base = endpoint.substr(0, path_start);
    out.path = endpoint.substr(path_start);
  }
  return out;
}

}  // namespace remote_detail

inline std::string Generator::remote_generate(const std::string& prompt, const std::string& hash) {
  auto url = remote_detail::split_endpoint(cfg_.endpoint);
  json body;
  body["prompt"] = prompt;
  body["max_tokens"] = cfg_.max_output_tokens;
  std::string payload = body.dump();

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    httplib::Client client(url.base);
    client.set_connection_timeout(std::chrono::duration<double>(cfg_.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(cfg_.timeout_s));
    auto res = client.Post(url.path, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "http status " + std::to_string(res->status);
      continue;  // non-2xx is retryable
    }
    try {
      json reply = json::parse(res->body);
      return reply.at("output").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("malformed response body: ") + e.what();
    }
  }
  throw GenerationError("remote generation failed after " + std::to_string(cfg_.retries + 1) +
                            " attempts (" + last_error + ")",
                        hash);
}

}  // namespace lamplab
