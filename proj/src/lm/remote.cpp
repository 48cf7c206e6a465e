#include "smprompt/lm/remote.hpp"

#include <chrono>

#include <httplib.h>
#include <json.hpp>

#include "smprompt/error.hpp"

namespace smprompt::lm {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

json parse_body(const std::string& body, const char* what) {
  json doc = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw ProtocolError(std::string(what) + ": body is not valid JSON");
  if (!doc.is_object()) throw ProtocolError(std::string(what) + ": body is not a JSON object");
  return doc;
}

std::size_t read_count(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_number_integer() || it->get<long long>() < 0)
    throw ProtocolError(std::string("handshake: missing or invalid '") + key + "'");
  return it->get<std::size_t>();
}

}  // namespace

std::string encode_score_request(const RenderedInput& input) {
  json doc;
  doc["tokens"] = input.ids;
  doc["mask_index"] = input.mask_position;
  return doc.dump();
}

std::string encode_handshake(const Handshake& h) {
  json doc;
  doc["vocab_size"] = h.vocab_size;
  doc["max_len"] = h.max_length;
  doc["mask_id"] = h.mask_id;
  return doc.dump();
}

std::string encode_logits(const MaskLogits& logits) {
  if (!logits.allFinite()) throw ProtocolError("logits must be finite to be encoded");
  json doc;
  doc["logits"] = std::vector<double>(logits.data(), logits.data() + logits.size());
  return doc.dump();
}

Handshake decode_handshake(const std::string& body) {
  auto doc = parse_body(body, "handshake");
  Handshake h;
  h.vocab_size = read_count(doc, "vocab_size");
  h.max_length = read_count(doc, "max_len");
  h.mask_id = static_cast<TokenId>(read_count(doc, "mask_id"));
  if (h.vocab_size == 0 || h.max_length == 0)
    throw ProtocolError("handshake: vocab_size and max_len must be positive");
  if (static_cast<std::size_t>(h.mask_id) >= h.vocab_size)
    throw ProtocolError("handshake: mask_id outside the vocabulary");
  return h;
}

MaskLogits decode_logits(const std::string& body, std::size_t vocab_size) {
  auto doc = parse_body(body, "score response");
  auto it = doc.find("logits");
  if (it == doc.end() || !it->is_array()) throw ProtocolError("score response: missing 'logits' array");
  if (it->size() != vocab_size)
    throw ProtocolError("score response: " + std::to_string(it->size()) +
                        " logits, handshake declared " + std::to_string(vocab_size));
  MaskLogits out(static_cast<Eigen::Index>(vocab_size));
  for (std::size_t i = 0; i < vocab_size; ++i) {
    const auto& v = (*it)[i];
    if (!v.is_number()) throw ProtocolError("score response: logit " + std::to_string(i) + " is not a number");
    out(static_cast<Eigen::Index>(i)) = v.get<double>();
  }
  return out;
}

RemoteBackend::RemoteBackend(Endpoint endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)),
      options_(options),
      in_flight_(std::make_shared<std::counting_semaphore<>>(std::max(1, options.max_in_flight))) {
  if (options_.attempts < 1) throw ValidationError("remote attempts must be at least 1");
  handshake_ = decode_handshake(request("GET", "/handshake", ""));
}

RemoteBackend::RemoteBackend(Endpoint endpoint, RemoteOptions options, Handshake handshake)
    : endpoint_(std::move(endpoint)),
      options_(options),
      handshake_(handshake),
      in_flight_(std::make_shared<std::counting_semaphore<>>(std::max(1, options.max_in_flight))) {}

std::unique_ptr<LmBackend> RemoteBackend::clone() const {
  return std::unique_ptr<LmBackend>(new RemoteBackend(endpoint_, options_, handshake_));
}

std::string RemoteBackend::request(const std::string& method, const std::string& path,
                                   const std::string& body) const {
  in_flight_->acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{*in_flight_};

  const auto timeout = std::chrono::duration<double>(options_.timeout_seconds);
  std::string last_error;
  for (int attempt = 1; attempt <= options_.attempts; ++attempt) {
    httplib::Client client(endpoint_.host, endpoint_.port);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    auto res = method == "GET" ? client.Get(path) : client.Post(path, body, kJson);
    if (!res) {
      last_error = "request to " + endpoint_.host + ":" + std::to_string(endpoint_.port) + path +
                   " failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200)
      throw ProtocolError(path + " answered HTTP " + std::to_string(res->status));
    return res->body;
  }
  throw NetworkError(last_error, options_.attempts);
}

std::string RemoteBackend::fingerprint() const {
  return "remote " + endpoint_.host + ":" + std::to_string(endpoint_.port) + " " +
         encode_handshake(handshake_);
}

MaskLogits RemoteBackend::score(const RenderedInput& input) const {
  validate(input);
  return decode_logits(request("POST", "/score", encode_score_request(input)),
                       handshake_.vocab_size);
}

FixtureServer::FixtureServer(Handshake handshake, Scorer scorer)
    : handshake_(handshake), scorer_(std::move(scorer)), server_(std::make_unique<httplib::Server>()) {
  server_->Get("/handshake", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(encode_handshake(handshake_), kJson);
  });
  server_->Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    json doc = json::parse(req.body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("tokens") || !doc.contains("mask_index")) {
      res.status = 400;
      return;
    }
    auto ids = doc["tokens"].get<std::vector<TokenId>>();
    auto mask = doc["mask_index"].get<std::size_t>();
    MaskLogits logits = scorer_(ids, mask);
    const auto fault = fault_.load();
    if (fault == Fault::WrongLength) logits.conservativeResize(logits.size() - 1);
    auto body = encode_logits(logits);
    if (fault == Fault::TruncatedBody) body.resize(body.size() / 2);
    res.set_content(body, kJson);
  });
  port_ = server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw NetworkError("fixture server could not bind a loopback port", 1);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

FixtureServer::~FixtureServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace smprompt::lm
