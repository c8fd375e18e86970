#pragma once

#include "desksplat/guidance.hpp"

#include <atomic>
#include <chrono>

namespace desksplat {

namespace wire {

inline constexpr char kMagic[4] = {'D', 'G', 'G', 'B'};
inline constexpr uint32_t kVersion = 1;
/// Request bytes excluding image and condition, including the u32 length prefix.
inline constexpr size_t kRequestFixedBytes = 4 + 8 + 1 + 4 + 4 + 8 + 2 + 2 + 16 * 4 + 4;
inline constexpr size_t kResponseFixedBytes = 4 + 8 + 1;
inline constexpr size_t kHandshakeBytes = 8;
inline constexpr uint32_t kMaxFrameBytes = 1u << 30;

enum class Status : uint8_t { Ok = 0, BackendError = 1 };

/// Total bytes on the wire for one request frame.
constexpr size_t request_frame_size(size_t height, size_t width, size_t condition_bytes) {
  return kRequestFixedBytes + height * width * 3 * 4 + condition_bytes;
}

std::vector<uint8_t> encode_request(const GuidanceRequest& request);
/// Decodes a complete frame (length prefix included). The camera field is left empty.
GuidanceRequest decode_request(const std::vector<uint8_t>& frame);

std::vector<uint8_t> encode_response(uint64_t request_id, Status status, const Image* residual);

struct Response {
  uint64_t request_id = 0;
  Status status = Status::Ok;
  Image residual;
};
/// Decodes a complete response frame whose residual must be height x width x 3.
Response decode_response(const std::vector<uint8_t>& frame, int height, int width);

std::vector<uint8_t> encode_handshake(uint32_t version = kVersion);
uint32_t decode_handshake(const std::vector<uint8_t>& bytes);

}  // namespace wire

/// Client for an external guidance backend speaking the length-prefixed frame protocol over TCP
/// ("host:port") or a Unix socket ("unix:/path"). Each request is sent at most once.
class BridgeProvider final : public GuidanceProvider {
 public:
  explicit BridgeProvider(std::string endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~BridgeProvider() override;
  BridgeProvider(const BridgeProvider&) = delete;
  BridgeProvider& operator=(const BridgeProvider&) = delete;

  /// Connects and handshakes if not connected yet.
  void connect();
  bool connected() const { return fd_ >= 0; }
  GuidanceResponse guide(const GuidanceRequest& request) override;

 private:
  void disconnect();
  void send_all(const std::vector<uint8_t>& bytes, std::chrono::steady_clock::time_point deadline);
  std::vector<uint8_t> recv_exact(size_t n, std::chrono::steady_clock::time_point deadline);

  std::string endpoint_;
  std::chrono::milliseconds timeout_;
  int fd_ = -1;
  std::mutex mutex_;
  std::atomic<uint64_t> next_id_{1};
};

/// "mock" or "bridge:ADDR".
struct ProviderSpec {
  bool bridge = false;
  std::string address;
};
ProviderSpec parse_provider_spec(const std::string& text);

}  // namespace desksplat
