// SPDX-License-Identifier: Apache-2.0
#include "splitveil/protocol.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <stdexcept>

namespace splitveil {

namespace {

constexpr char kMagic[4] = {'S', 'I', 'N', 'F'};
constexpr size_t kHeaderSize = 4 + 1 + 1 + 4;
constexpr uint32_t kMaxPayload = 64u * 1024u * 1024u;

void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32_le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

void put_f32_le(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32_le(out, bits);
}

float get_f32_le(const uint8_t* p) {
  const uint32_t bits = get_u32_le(p);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

bool read_exact(int fd, uint8_t* buf, size_t len) {
  size_t got = 0;
  while (got < len) {
    const ssize_t r = ::recv(fd, buf + got, len - got, 0);
    if (r <= 0) return false;
    got += static_cast<size_t>(r);
  }
  return true;
}

bool write_all(int fd, const uint8_t* buf, size_t len) {
  size_t sent = 0;
  while (sent < len) {
    const ssize_t r = ::send(fd, buf + sent, len - sent, MSG_NOSIGNAL);
    if (r <= 0) return false;
    sent += static_cast<size_t>(r);
  }
  return true;
}

}  // namespace

std::string decode_status_name(DecodeStatus status) {
  switch (status) {
    case DecodeStatus::kOk: return "OK";
    case DecodeStatus::kShortHeader: return "SHORT_HEADER";
    case DecodeStatus::kBadMagic: return "BAD_MAGIC";
    case DecodeStatus::kUnsupportedVersion: return "UNSUPPORTED_VERSION";
    case DecodeStatus::kBadType: return "BAD_TYPE";
    case DecodeStatus::kLengthMismatch: return "LENGTH_MISMATCH";
    case DecodeStatus::kBadPayload: return "BAD_PAYLOAD";
    case DecodeStatus::kDimOverflow: return "DIM_OVERFLOW";
  }
  return "?";
}

std::vector<uint8_t> encode_tensor_f32(const Tensor& t) {
  if (t.rank() < 1 || t.rank() > 255) throw std::invalid_argument("encode_tensor_f32: rank out of range");
  std::vector<uint8_t> out;
  out.push_back(static_cast<uint8_t>(t.rank()));
  for (int64_t d : t.shape) {
    if (d <= 0 || d > 0xffffffffLL) throw std::invalid_argument("encode_tensor_f32: dimension out of range");
    put_u32_le(out, static_cast<uint32_t>(d));
  }
  for (double v : t.data) put_f32_le(out, static_cast<float>(v));
  return out;
}

namespace {

DecodeStatus decode_tensor_f32(const uint8_t* p, size_t len, Tensor* out, std::string* detail) {
  if (len < 1) {
    *detail = "tensor payload empty";
    return DecodeStatus::kBadPayload;
  }
  const uint8_t rank = p[0];
  if (rank == 0) {
    *detail = "tensor rank 0";
    return DecodeStatus::kBadPayload;
  }
  const size_t dims_end = 1 + static_cast<size_t>(rank) * 4;
  if (len < dims_end) {
    *detail = "tensor header needs " + std::to_string(dims_end) + " bytes, payload has " + std::to_string(len);
    return DecodeStatus::kBadPayload;
  }
  std::vector<int64_t> shape;
  uint64_t numel = 1;
  for (uint8_t i = 0; i < rank; ++i) {
    const uint32_t d = get_u32_le(p + 1 + 4 * i);
    if (d == 0) {
      *detail = "tensor dimension " + std::to_string(i) + " is zero";
      return DecodeStatus::kBadPayload;
    }
    numel *= d;
    if (numel > kMaxPayload / 4) {
      *detail = "tensor of " + std::to_string(numel) + " elements exceeds the payload cap";
      return DecodeStatus::kDimOverflow;
    }
    shape.push_back(static_cast<int64_t>(d));
  }
  const size_t want = dims_end + static_cast<size_t>(numel) * 4;
  if (len != want) {
    *detail = "tensor payload length " + std::to_string(len) + " does not match expected " + std::to_string(want);
    return DecodeStatus::kLengthMismatch;
  }
  Tensor t = Tensor::zeros(shape);
  for (uint64_t i = 0; i < numel; ++i) {
    t.data[static_cast<size_t>(i)] = static_cast<double>(get_f32_le(p + dims_end + 4 * i));
  }
  *out = std::move(t);
  return DecodeStatus::kOk;
}

}  // namespace

std::vector<uint8_t> encode_frame(const Message& msg) {
  std::vector<uint8_t> payload;
  switch (msg.type) {
    case MsgType::kInferReq:
    case MsgType::kInferResp:
      payload = encode_tensor_f32(msg.tensor);
      break;
    case MsgType::kError:
      payload.push_back(msg.error_code);
      payload.insert(payload.end(), msg.error_text.begin(), msg.error_text.end());
      break;
  }
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kProtocolVersion);
  out.push_back(static_cast<uint8_t>(msg.type));
  put_u32_le(out, static_cast<uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

DecodeResult decode_frame(const std::vector<uint8_t>& bytes) {
  DecodeResult result;
  if (bytes.size() < kHeaderSize) {
    result.status = DecodeStatus::kShortHeader;
    result.detail = "frame has " + std::to_string(bytes.size()) + " bytes, header needs " +
                    std::to_string(kHeaderSize);
    return result;
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    result.status = DecodeStatus::kBadMagic;
    result.detail = "magic bytes do not spell SINF";
    return result;
  }
  const uint8_t version = bytes[4];
  if (version != kProtocolVersion) {
    result.status = DecodeStatus::kUnsupportedVersion;
    result.detail = "version " + std::to_string(version) + ", supported " + std::to_string(kProtocolVersion);
    return result;
  }
  const uint8_t type = bytes[5];
  if (type != static_cast<uint8_t>(MsgType::kInferReq) && type != static_cast<uint8_t>(MsgType::kInferResp) &&
      type != static_cast<uint8_t>(MsgType::kError)) {
    result.status = DecodeStatus::kBadType;
    result.detail = "unknown message type " + std::to_string(type);
    return result;
  }
  const uint32_t payload_len = get_u32_le(bytes.data() + 6);
  if (payload_len > kMaxPayload) {
    result.status = DecodeStatus::kDimOverflow;
    result.detail = "payload length " + std::to_string(payload_len) + " exceeds the cap";
    return result;
  }
  if (bytes.size() != kHeaderSize + payload_len) {
    result.status = DecodeStatus::kLengthMismatch;
    result.detail = "expected " + std::to_string(kHeaderSize + payload_len) + " bytes total, got " +
                    std::to_string(bytes.size());
    return result;
  }
  const uint8_t* payload = bytes.data() + kHeaderSize;
  result.message.type = static_cast<MsgType>(type);
  if (result.message.type == MsgType::kError) {
    if (payload_len < 1) {
      result.status = DecodeStatus::kBadPayload;
      result.detail = "error frame without a code byte";
      return result;
    }
    result.message.error_code = payload[0];
    result.message.error_text.assign(reinterpret_cast<const char*>(payload) + 1, payload_len - 1);
    return result;
  }
  result.status = decode_tensor_f32(payload, payload_len, &result.message.tensor, &result.detail);
  return result;
}

InferenceServer::InferenceServer(SequentialModel top, int64_t num_classes)
    : top_(std::move(top)), num_classes_(num_classes) {}

InferenceServer::~InferenceServer() { stop(); }

void InferenceServer::start(const std::string& bind_host, uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("socket() failed");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("invalid bind address " + bind_host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("bind(" + bind_host + ":" + std::to_string(port) + ") failed");
  }
  if (::listen(listen_fd_, 16) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("listen() failed");
  }
  sockaddr_in bound{};
  socklen_t bound_len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &bound_len);
  port_ = ntohs(bound.sin_port);
  running_ = true;
  accept_thread_ = std::thread(&InferenceServer::accept_loop, this);
}

void InferenceServer::stop() {
  if (!running_.exchange(false)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> threads;
  {
    std::lock_guard<std::mutex> lock(conn_mutex_);
    threads.swap(conn_threads_);
  }
  for (auto& t : threads) {
    if (t.joinable()) t.join();
  }
}

void InferenceServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (!running_) break;
      continue;
    }
    std::lock_guard<std::mutex> lock(conn_mutex_);
    conn_threads_.emplace_back(&InferenceServer::serve_connection, this, fd);
  }
}

void InferenceServer::serve_connection(int fd) {
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  while (running_) {
    uint8_t header[kHeaderSize];
    if (!read_exact(fd, header, kHeaderSize)) break;

    auto send_error = [&](WireError code, const std::string& text) {
      Message err;
      err.type = MsgType::kError;
      err.error_code = static_cast<uint8_t>(code);
      err.error_text = text;
      const std::vector<uint8_t> frame = encode_frame(err);
      return write_all(fd, frame.data(), frame.size());
    };

    if (std::memcmp(header, kMagic, 4) != 0) {
      // The stream is desynchronized; answer once and drop the connection.
      send_error(WireError::kBadPayload, "bad magic");
      break;
    }
    const uint8_t version = header[4];
    const uint8_t type = header[5];
    const uint32_t payload_len = get_u32_le(header + 6);
    if (payload_len > kMaxPayload) {
      send_error(WireError::kBadPayload, "payload exceeds cap");
      break;
    }
    std::vector<uint8_t> frame(header, header + kHeaderSize);
    frame.resize(kHeaderSize + payload_len);
    if (payload_len > 0 && !read_exact(fd, frame.data() + kHeaderSize, payload_len)) break;

    if (version != kProtocolVersion) {
      if (!send_error(WireError::kUnsupportedVersion, decode_status_name(DecodeStatus::kUnsupportedVersion))) break;
      continue;  // framing was intact, keep serving
    }
    DecodeResult decoded = decode_frame(frame);
    if (decoded.status != DecodeStatus::kOk) {
      if (!send_error(WireError::kBadPayload, decode_status_name(decoded.status) + ": " + decoded.detail)) break;
      continue;
    }
    if (decoded.message.type != MsgType::kInferReq) {
      if (!send_error(WireError::kBadType, "expected INFER_REQ")) break;
      continue;
    }
    Message resp;
    try {
      Tensor z = decoded.message.tensor;
      std::vector<int64_t> batched = z.shape;
      batched.insert(batched.begin(), 1);
      Tensor logits = top_.forward(z.reshaped(batched));
      resp.type = MsgType::kInferResp;
      resp.tensor = logits.reshaped({num_classes_});
    } catch (const std::exception& e) {
      if (!send_error(WireError::kServerFailure, e.what())) break;
      continue;
    }
    const std::vector<uint8_t> out = encode_frame(resp);
    if (!write_all(fd, out.data(), out.size())) break;
  }
  ::close(fd);
}

InferResult client_infer(const DeployedDefense& client, const Tensor& image, const std::string& host, uint16_t port,
                         uint64_t noise_seed) {
  std::vector<int64_t> batched = image.shape;
  batched.insert(batched.begin(), 1);
  Tensor z = smashed_for(client, image.reshaped(batched), noise_seed);
  std::vector<int64_t> sample_shape(z.shape.begin() + 1, z.shape.end());

  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw std::runtime_error("invalid server address " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot connect to " + host + ":" + std::to_string(port));
  }
  Message req;
  req.type = MsgType::kInferReq;
  req.tensor = z.reshaped(sample_shape);
  const std::vector<uint8_t> frame = encode_frame(req);
  if (!write_all(fd, frame.data(), frame.size())) {
    ::close(fd);
    throw std::runtime_error("connection lost while sending the request");
  }
  uint8_t header[kHeaderSize];
  if (!read_exact(fd, header, kHeaderSize)) {
    ::close(fd);
    throw std::runtime_error("connection lost while reading the response header");
  }
  const uint32_t payload_len = get_u32_le(header + 6);
  std::vector<uint8_t> resp(header, header + kHeaderSize);
  resp.resize(kHeaderSize + payload_len);
  if (payload_len > 0 && !read_exact(fd, resp.data() + kHeaderSize, payload_len)) {
    ::close(fd);
    throw std::runtime_error("connection lost while reading the response payload");
  }
  ::close(fd);

  DecodeResult decoded = decode_frame(resp);
  if (decoded.status != DecodeStatus::kOk) {
    throw std::runtime_error("malformed response frame: " + decode_status_name(decoded.status) + " " +
                             decoded.detail);
  }
  if (decoded.message.type == MsgType::kError) {
    throw std::runtime_error("server error " + std::to_string(decoded.message.error_code) + ": " +
                             decoded.message.error_text);
  }
  if (decoded.message.type != MsgType::kInferResp) throw std::runtime_error("unexpected response type");
  InferResult result;
  result.logits = decoded.message.tensor.data;
  result.label = 0;
  for (size_t i = 1; i < result.logits.size(); ++i) {
    if (result.logits[i] > result.logits[static_cast<size_t>(result.label)]) {
      result.label = static_cast<int64_t>(i);
    }
  }
  return result;
}

}  // namespace splitveil
