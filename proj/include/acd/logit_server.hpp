// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file logit_server.hpp
 * @brief Serves any LogitBackend over the HTTP logit protocol.
 *
 * Used to expose the toy world to remote clients (conformance tests and the
 * `acd serve-toy` command). Malformed bodies answer 400; requests that are
 * well-formed but invalid for the model (bad ids, empty prefixes, unknown
 * words) answer 422.
 */

#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "acd/backend.hpp"
#include "acd/error.hpp"

namespace acd {

class LogitServer {
 public:
  explicit LogitServer(const LogitBackend& backend) : backend_(backend) { routes(); }
  ~LogitServer() { stop(); }

  LogitServer(const LogitServer&) = delete;
  LogitServer& operator=(const LogitServer&) = delete;

  /// Blocks until stop() is called.
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  /// Binds an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1") {
    const int port = server_.bind_to_any_port(host);
    if (port <= 0) throw ConnectionError("could not bind a port on " + host);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  using json = nlohmann::json;

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename Handler>
  void post(const char* path, Handler handler) {
    server_.Post(path, [this, handler](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object()) return reply(res, 400, {{"error", "body is not a JSON object"}});
      try {
        reply(res, 200, handler(body));
      } catch (const json::exception& e) {
        reply(res, 400, {{"error", e.what()}});
      } catch (const InvalidInput& e) {
        reply(res, 422, {{"error", e.what()}});
      } catch (const TokenizationError& e) {
        reply(res, 422, {{"error", e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    });
  }

  void routes() {
    server_.Get("/v1/model_info", [this](const httplib::Request&, httplib::Response& res) {
      const auto v = backend_.model_info();
      reply(res, 200,
            {{"vocab_size", v.size},
             {"eos_id", v.eos_id},
             {"newline_id", v.newline_id ? json(*v.newline_id) : json(nullptr)},
             {"model_name", v.model_name}});
    });
    post("/v1/tokenize", [this](const json& b) {
      return json{{"ids", backend_.tokenize(b.at("text").get<std::string>())}};
    });
    post("/v1/detokenize", [this](const json& b) {
      return json{{"text", backend_.detokenize(b.at("ids").get<TokenSequence>())}};
    });
    post("/v1/logits", [this](const json& b) {
      const auto prefixes = b.at("prefixes").get<std::vector<TokenSequence>>();
      json rows = json::array();
      for (const auto& l : backend_.next_logits(prefixes)) rows.push_back(l.values);
      return json{{"logits", rows}};
    });
  }

  const LogitBackend& backend_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace acd
