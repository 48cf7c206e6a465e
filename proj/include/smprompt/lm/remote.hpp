#pragma once

// Client for an external masked-LM scoring service. The wire format is
// described byte-for-byte in docs/remote_protocol.md:
//
//   GET  /handshake  -> {"vocab_size": int, "max_len": int, "mask_id": int}
//   POST /score      <- {"tokens": [int, ...], "mask_index": int}
//                    -> {"logits": [number; vocab_size]}

#include <atomic>
#include <functional>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "smprompt/lm/backend.hpp"

namespace httplib {
class Server;
}

namespace smprompt::lm {

struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 8080;
};

struct RemoteOptions {
  int max_in_flight = 4;
  int attempts = 3;  // per request, transport failures only
  double timeout_seconds = 30.0;
};

struct Handshake {
  std::size_t vocab_size = 0;
  std::size_t max_length = 0;
  TokenId mask_id = 0;
};

class RemoteBackend final : public LmBackend {
 public:
  /// Performs the handshake; throws NetworkError if the service is
  /// unreachable and ProtocolError if the handshake is malformed.
  RemoteBackend(Endpoint endpoint, RemoteOptions options = {});

  std::size_t vocab_size() const override { return handshake_.vocab_size; }
  std::size_t max_length() const override { return handshake_.max_length; }
  TokenId mask_id() const override { return handshake_.mask_id; }
  std::string name() const override { return "remote"; }
  std::string fingerprint() const override;

  MaskLogits score(const RenderedInput& input) const override;
  std::unique_ptr<LmBackend> clone() const override;

  const Handshake& handshake() const { return handshake_; }

 private:
  RemoteBackend(Endpoint endpoint, RemoteOptions options, Handshake handshake);
  std::string request(const std::string& method, const std::string& path,
                      const std::string& body) const;

  Endpoint endpoint_;
  RemoteOptions options_;
  Handshake handshake_;
  std::shared_ptr<std::counting_semaphore<>> in_flight_;
};

/// Encodes/decodes the wire messages. Exposed for tests and for services
/// that want to speak the protocol.
std::string encode_score_request(const RenderedInput& input);
std::string encode_handshake(const Handshake& handshake);
std::string encode_logits(const MaskLogits& logits);
Handshake decode_handshake(const std::string& body);
MaskLogits decode_logits(const std::string& body, std::size_t vocab_size);

/// Loopback scoring service for tests and local experiments. Listens on
/// 127.0.0.1 at an ephemeral port on a background thread.
class FixtureServer {
 public:
  enum class Fault { None, TruncatedBody, WrongLength };
  using Scorer = std::function<MaskLogits(const std::vector<TokenId>& ids, std::size_t mask)>;

  FixtureServer(Handshake handshake, Scorer scorer);
  ~FixtureServer();
  FixtureServer(const FixtureServer&) = delete;
  FixtureServer& operator=(const FixtureServer&) = delete;

  Endpoint endpoint() const { return {"127.0.0.1", port_}; }
  void set_fault(Fault fault) { fault_ = fault; }
  std::size_t requests() const { return requests_; }

 private:
  Handshake handshake_;
  Scorer scorer_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<Fault> fault_{Fault::None};
  std::atomic<std::size_t> requests_{0};
};

}  // namespace smprompt::lm
