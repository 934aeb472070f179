// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "splitveil/defense.hpp"
#include "splitveil/models.hpp"

namespace splitveil {

// Wire framing: magic "SINF", version u8, type u8, payload length u32 LE,
// payload. Tensors travel as rank u8, dims u32 LE each, then f32 LE data.
constexpr uint8_t kProtocolVersion = 1;

enum class MsgType : uint8_t { kInferReq = 1, kInferResp = 2, kError = 3 };

// Error codes carried in the first payload byte of an ERROR frame.
enum class WireError : uint8_t {
  kUnsupportedVersion = 1,
  kBadType = 2,
  kBadPayload = 3,
  kServerFailure = 4,
};

enum class DecodeStatus {
  kOk = 0,
  kShortHeader,
  kBadMagic,
  kUnsupportedVersion,
  kBadType,
  kLengthMismatch,
  kBadPayload,
  kDimOverflow,
};

std::string decode_status_name(DecodeStatus status);

struct Message {
  MsgType type = MsgType::kInferReq;
  Tensor tensor;  // INFER_REQ / INFER_RESP payload (f64 view of the f32 wire data)
  uint8_t error_code = 0;
  std::string error_text;
};

struct DecodeResult {
  DecodeStatus status = DecodeStatus::kOk;
  Message message;
  std::string detail;  // human-readable diagnosis (expected vs actual sizes)
};

std::vector<uint8_t> encode_tensor_f32(const Tensor& t);
std::vector<uint8_t> encode_frame(const Message& msg);
DecodeResult decode_frame(const std::vector<uint8_t>& bytes);

// Blocking TCP server running the top model. Stateless per request: each
// INFER_REQ is answered with the logits of top(z). Connections are handled
// concurrently; the model parameters are shared read-only state.
class InferenceServer {
 public:
  InferenceServer(SequentialModel top, int64_t num_classes);
  ~InferenceServer();

  // Binds and starts the accept loop; with port 0 an ephemeral port is chosen
  // and reported by port().
  void start(const std::string& bind_host, uint16_t port);
  void stop();
  uint16_t port() const { return port_; }

 private:
  void accept_loop();
  void serve_connection(int fd);

  SequentialModel top_;
  int64_t num_classes_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex conn_mutex_;
  std::vector<std::thread> conn_threads_;
};

struct InferResult {
  int64_t label = 0;
  std::vector<double> logits;
};

// Client side of Figure 1: decompose, run the bottom model, perturb, send the
// smashed data, and read back the logits. Raw pixels never cross the wire.
InferResult client_infer(const DeployedDefense& client, const Tensor& image, const std::string& host, uint16_t port,
                         uint64_t noise_seed);

}  // namespace splitveil
