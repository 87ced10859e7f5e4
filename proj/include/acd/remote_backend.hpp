// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file remote_backend.hpp
 * @brief Client for the JSON-over-HTTP logit protocol.
 *
 *   GET  /v1/model_info  -> {"vocab_size", "eos_id", "newline_id", "model_name"}
 *   POST /v1/tokenize    {"text"}          -> {"ids"}
 *   POST /v1/detokenize  {"ids"}           -> {"text"}
 *   POST /v1/logits      {"prefixes": [[]]} -> {"logits": [[]]}
 *
 * Logits arrive as JSON numbers and are widened to double. Requests are
 * serialized through one connection; model_info is cached after first use.
 */

#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "acd/backend.hpp"
#include "acd/error.hpp"

namespace acd {

class RemoteBackend final : public LogitBackend {
 public:
  explicit RemoteBackend(std::string base_url, int timeout_seconds = 600)
      : base_url_(std::move(base_url)), client_(base_url_) {
    if (!client_.is_valid()) throw ConnectionError("invalid backend URL: " + base_url_);
    client_.set_connection_timeout(10, 0);
    client_.set_read_timeout(timeout_seconds, 0);
    client_.set_write_timeout(timeout_seconds, 0);
  }

  const std::string& base_url() const noexcept { return base_url_; }

  Vocabulary model_info() const override {
    std::lock_guard lock(mu_);
    if (!info_) {
      auto res = client_.Get("/v1/model_info");
      const auto body = unwrap(res, "/v1/model_info");
      try {
        Vocabulary v;
        v.size = body.at("vocab_size").get<std::size_t>();
        v.eos_id = body.at("eos_id").get<TokenId>();
        if (body.contains("newline_id") && !body["newline_id"].is_null()) v.newline_id = body["newline_id"].get<TokenId>();
        v.model_name = body.value("model_name", std::string{});
        v.validate();
        info_ = std::move(v);
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed model_info response: ") + e.what());
      }
    }
    return *info_;
  }

  TokenSequence tokenize(std::string_view text) const override {
    const auto body = post("/v1/tokenize", {{"text", std::string(text)}});
    try {
      return body.at("ids").get<TokenSequence>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed tokenize response: ") + e.what());
    }
  }

  std::string detokenize(const TokenSequence& ids) const override {
    const auto body = post("/v1/detokenize", {{"ids", ids}});
    try {
      return body.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed detokenize response: ") + e.what());
    }
  }

  std::vector<LogitVector> next_logits(const std::vector<TokenSequence>& prefixes) const override {
    const auto vocab = model_info();
    for (const auto& p : prefixes) {
      if (p.empty()) throw InvalidInput("next_logits: empty prefix");
      for (TokenId id : p) {
        if (!vocab.contains(id)) throw InvalidInput("token id out of range: " + std::to_string(id));
      }
    }
    const auto body = post("/v1/logits", {{"prefixes", prefixes}});
    std::vector<LogitVector> out;
    try {
      const auto& rows = body.at("logits");
      if (!rows.is_array() || rows.size() != prefixes.size()) {
        throw BackendError("logits response has " + std::to_string(rows.size()) + " rows for " +
                           std::to_string(prefixes.size()) + " prefixes");
      }
      out.reserve(rows.size());
      for (const auto& row : rows) {
        auto values = row.get<std::vector<double>>();
        if (values.size() != vocab.size) {
          throw BackendError("logits row has length " + std::to_string(values.size()) + ", expected " +
                             std::to_string(vocab.size));
        }
        out.emplace_back(std::move(values));
      }
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed logits response: ") + e.what());
    }
    return out;
  }

 private:
  nlohmann::json post(const char* path, const nlohmann::json& payload) const {
    std::lock_guard lock(mu_);
    auto res = client_.Post(path, payload.dump(), "application/json");
    return unwrap(res, path);
  }

  nlohmann::json unwrap(const httplib::Result& res, std::string_view path) const {
    if (!res) {
      throw ConnectionError("backend " + base_url_ + std::string(path) + " unreachable: " +
                            httplib::to_string(res.error()));
    }
    nlohmann::json body = nlohmann::json::parse(res->body, nullptr, false);
    if (res->status != 200) {
      std::string msg = res->body;
      if (!body.is_discarded() && body.is_object() && body.contains("error")) {
        msg = body["error"].is_string() ? body["error"].get<std::string>() : body["error"].dump();
      }
      throw BackendError("backend returned HTTP " + std::to_string(res->status) + " for " + std::string(path) +
                         ": " + msg);
    }
    if (body.is_discarded()) throw BackendError("backend returned non-JSON body for " + std::string(path));
    return body;
  }

  std::string base_url_;
  mutable httplib::Client client_;
  mutable std::mutex mu_;
  mutable std::optional<Vocabulary> info_;
};

}  // namespace acd
