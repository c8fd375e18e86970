#pragma once

#include "desksplat/bridge.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <functional>
#include <mutex>
#include <thread>

namespace testing_support {

using namespace desksplat;

/// Minimal in-process guidance backend for exercising the client. Each accepted connection is
/// served on the listener thread, one frame at a time.
class FakeGuidanceServer {
 public:
  enum class Behavior { EchoZero, Target, WrongId, BadVersion, BadMagic, Stall, Garbage, BackendError, ShortResidual };

  explicit FakeGuidanceServer(Behavior behavior, float target_value = 0.0f) : behavior_(behavior), target_(target_value) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    ::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    ::listen(listen_fd_, 4);
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread([this] { run(); });
  }

  ~FakeGuidanceServer() {
    stop_ = true;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (thread_.joinable()) thread_.join();
  }

  std::string endpoint() const { return "127.0.0.1:" + std::to_string(port_); }
  int requests_seen() const { return requests_; }
  std::vector<std::vector<uint8_t>> responses() const {
    std::lock_guard lock(mutex_);
    return responses_;
  }

 private:
  static bool read_exact(int fd, uint8_t* dst, size_t n) {
    size_t got = 0;
    while (got < n) {
      const ssize_t k = ::recv(fd, dst + got, n - got, 0);
      if (k <= 0) return false;
      got += static_cast<size_t>(k);
    }
    return true;
  }
  static void write_all(int fd, const std::vector<uint8_t>& b) {
    size_t sent = 0;
    while (sent < b.size()) {
      const ssize_t k = ::send(fd, b.data() + sent, b.size() - sent, MSG_NOSIGNAL);
      if (k <= 0) return;
      sent += static_cast<size_t>(k);
    }
  }

  void run() {
    while (!stop_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) return;
      serve(fd);
      ::close(fd);
    }
  }

  void serve(int fd) {
    std::vector<uint8_t> hello(wire::kHandshakeBytes);
    if (!read_exact(fd, hello.data(), hello.size())) return;
    if (behavior_ == Behavior::BadMagic) {
      write_all(fd, {'N', 'O', 'P', 'E', 1, 0, 0, 0});
      return;
    }
    write_all(fd, wire::encode_handshake(behavior_ == Behavior::BadVersion ? wire::kVersion + 1 : wire::kVersion));
    while (!stop_) {
      std::vector<uint8_t> frame(4);
      if (!read_exact(fd, frame.data(), 4)) return;
      uint32_t len;
      std::memcpy(&len, frame.data(), 4);
      frame.resize(4 + len);
      if (!read_exact(fd, frame.data() + 4, len)) return;
      ++requests_;
      const GuidanceRequest req = wire::decode_request(frame);
      Image residual(req.image.height, req.image.width, 3);
      if (behavior_ == Behavior::Target)
        for (size_t i = 0; i < residual.data.size(); ++i) residual.data[i] = req.image.data[i] - target_;
      std::vector<uint8_t> out;
      switch (behavior_) {
        case Behavior::WrongId: out = wire::encode_response(req.request_id + 7, wire::Status::Ok, &residual); break;
        case Behavior::Stall: std::this_thread::sleep_for(std::chrono::milliseconds(400)); return;
        case Behavior::Garbage: out = {0xFF, 0xFF, 0xFF, 0xFF, 1, 2, 3}; break;
        case Behavior::BackendError: out = wire::encode_response(req.request_id, wire::Status::BackendError, nullptr); break;
        case Behavior::ShortResidual: {
          Image small(1, 1, 3);
          out = wire::encode_response(req.request_id, wire::Status::Ok, &small);
          break;
        }
        default: out = wire::encode_response(req.request_id, wire::Status::Ok, &residual); break;
      }
      {
        std::lock_guard lock(mutex_);
        responses_.push_back(out);
      }
      write_all(fd, out);
    }
  }

  Behavior behavior_;
  float target_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<int> requests_{0};
  mutable std::mutex mutex_;
  std::vector<std::vector<uint8_t>> responses_;
  std::thread thread_;
};

}  // namespace testing_support
