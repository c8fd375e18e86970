#include "desksplat/bridge.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>

namespace desksplat {

namespace wire {
namespace {

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& b) : b_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void floats(float* dst, size_t n) {
    need(n * 4);
    std::memcpy(dst, b_.data() + pos_, n * 4);
    pos_ += n * 4;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> v(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > b_.size()) throw GuidanceError(GuidanceError::Kind::Malformed, "frame shorter than its layout");
  }
  const std::vector<uint8_t>& b_;
  size_t pos_ = 0;
};

void check_length_prefix(Reader& r, size_t total) {
  const uint32_t len = r.get<uint32_t>();
  if (size_t(len) + 4 != total) throw GuidanceError(GuidanceError::Kind::Malformed, "frame length prefix disagrees with frame size");
}

}  // namespace

std::vector<uint8_t> encode_request(const GuidanceRequest& r) {
  const size_t total = request_frame_size(static_cast<size_t>(r.image.height), static_cast<size_t>(r.image.width), r.condition.size());
  std::vector<uint8_t> out;
  out.reserve(total);
  put<uint32_t>(out, static_cast<uint32_t>(total - 4));
  put<uint64_t>(out, r.request_id);
  put<uint8_t>(out, static_cast<uint8_t>(r.mode));
  put<uint32_t>(out, r.timestep);
  put<float>(out, r.guidance_scale);
  put<uint64_t>(out, r.noise_seed);
  put<uint16_t>(out, static_cast<uint16_t>(r.image.height));
  put<uint16_t>(out, static_cast<uint16_t>(r.image.width));
  for (float v : r.image.data) put<float>(out, v);
  // Row-major 4x4.
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) put<float>(out, r.pose(i, j));
  put<uint32_t>(out, static_cast<uint32_t>(r.condition.size()));
  out.insert(out.end(), r.condition.begin(), r.condition.end());
  return out;
}

GuidanceRequest decode_request(const std::vector<uint8_t>& frame) {
  Reader rd(frame);
  check_length_prefix(rd, frame.size());
  GuidanceRequest r;
  r.request_id = rd.get<uint64_t>();
  const uint8_t mode = rd.get<uint8_t>();
  if (mode > 1) throw GuidanceError(GuidanceError::Kind::Malformed, "unknown mode byte");
  r.mode = static_cast<GuidanceMode>(mode);
  r.timestep = rd.get<uint32_t>();
  r.guidance_scale = rd.get<float>();
  r.noise_seed = rd.get<uint64_t>();
  const int h = rd.get<uint16_t>(), w = rd.get<uint16_t>();
  r.image = Image(h, w, 3);
  rd.floats(r.image.data.data(), r.image.data.size());
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) r.pose(i, j) = rd.get<float>();
  const uint32_t cond = rd.get<uint32_t>();
  r.condition = rd.bytes(cond);
  if (rd.remaining() != 0) throw GuidanceError(GuidanceError::Kind::Malformed, "trailing bytes after condition");
  return r;
}

std::vector<uint8_t> encode_response(uint64_t id, Status status, const Image* residual) {
  std::vector<uint8_t> out;
  const size_t payload = (status == Status::Ok && residual) ? residual->data.size() * 4 : 0;
  put<uint32_t>(out, static_cast<uint32_t>(kResponseFixedBytes - 4 + payload));
  put<uint64_t>(out, id);
  put<uint8_t>(out, static_cast<uint8_t>(status));
  if (payload)
    for (float v : residual->data) put<float>(out, v);
  return out;
}

Response decode_response(const std::vector<uint8_t>& frame, int height, int width) {
  Reader rd(frame);
  check_length_prefix(rd, frame.size());
  Response r;
  r.request_id = rd.get<uint64_t>();
  const uint8_t status = rd.get<uint8_t>();
  if (status > 1) throw GuidanceError(GuidanceError::Kind::Malformed, "unknown status byte");
  r.status = static_cast<Status>(status);
  if (r.status == Status::BackendError) {
    if (rd.remaining() != 0) throw GuidanceError(GuidanceError::Kind::Malformed, "error response carries a payload");
    return r;
  }
  r.residual = Image(height, width, 3);
  if (rd.remaining() != r.residual.data.size() * 4)
    throw GuidanceError(GuidanceError::Kind::Malformed, "residual size differs from request image");
  rd.floats(r.residual.data.data(), r.residual.data.size());
  return r;
}

std::vector<uint8_t> encode_handshake(uint32_t version) {
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  put<uint32_t>(out, version);
  return out;
}

uint32_t decode_handshake(const std::vector<uint8_t>& bytes) {
  if (bytes.size() != kHandshakeBytes || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw GuidanceError(GuidanceError::Kind::Malformed, "bad handshake magic");
  uint32_t v;
  std::memcpy(&v, bytes.data() + 4, 4);
  return v;
}

}  // namespace wire

ProviderSpec parse_provider_spec(const std::string& text) {
  if (text == "mock") return {};
  if (text.rfind("bridge:", 0) == 0 && text.size() > 7) return {true, text.substr(7)};
  throw std::invalid_argument("provider must be 'mock' or 'bridge:ADDR', got '" + text + "'");
}

BridgeProvider::BridgeProvider(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {}

BridgeProvider::~BridgeProvider() { disconnect(); }

void BridgeProvider::disconnect() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

namespace {

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

int open_socket(const std::string& endpoint) {
  using K = GuidanceError::Kind;
  if (endpoint.rfind("unix:", 0) == 0) {
    const std::string path = endpoint.substr(5);
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof(addr.sun_path)) throw GuidanceError(K::Connect, "unix socket path too long");
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw GuidanceError(K::Connect, std::string("socket: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      const int err = errno;
      ::close(fd);
      throw GuidanceError(K::Connect, "cannot connect to " + endpoint + ": " + std::strerror(err));
    }
    return fd;
  }
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) throw GuidanceError(K::Connect, "endpoint must be host:port or unix:/path");
  const std::string host = endpoint.substr(0, colon), port = endpoint.substr(colon + 1);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
    throw GuidanceError(K::Connect, "cannot resolve " + endpoint);
  int fd = -1;
  std::string last = "no address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    last = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw GuidanceError(K::Connect, "cannot connect to " + endpoint + ": " + last);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

}  // namespace

void BridgeProvider::send_all(const std::vector<uint8_t>& bytes, Clock::time_point deadline) {
  size_t sent = 0;
  while (sent < bytes.size()) {
    pollfd p{fd_, POLLOUT, 0};
    const int ready = ::poll(&p, 1, remaining_ms(deadline));
    if (ready == 0) throw GuidanceError(GuidanceError::Kind::Timeout, "timed out sending to " + endpoint_);
    if (ready < 0 && errno == EINTR) continue;
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw GuidanceError(GuidanceError::Kind::Connect, "connection lost while sending: " + std::string(std::strerror(errno)));
    sent += static_cast<size_t>(n);
  }
}

std::vector<uint8_t> BridgeProvider::recv_exact(size_t count, Clock::time_point deadline) {
  std::vector<uint8_t> out(count);
  size_t got = 0;
  while (got < count) {
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, remaining_ms(deadline));
    if (ready == 0) throw GuidanceError(GuidanceError::Kind::Timeout, "timed out waiting for " + endpoint_);
    if (ready < 0 && errno == EINTR) continue;
    const ssize_t n = ::recv(fd_, out.data() + got, count - got, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n == 0) throw GuidanceError(GuidanceError::Kind::Malformed, "connection closed mid-frame");
    if (n < 0) throw GuidanceError(GuidanceError::Kind::Connect, "receive failed: " + std::string(std::strerror(errno)));
    got += static_cast<size_t>(n);
  }
  return out;
}

void BridgeProvider::connect() {
  std::lock_guard lock(mutex_);
  if (fd_ >= 0) return;
  fd_ = open_socket(endpoint_);
  const auto deadline = Clock::now() + timeout_;
  try {
    send_all(wire::encode_handshake(), deadline);
    const uint32_t version = wire::decode_handshake(recv_exact(wire::kHandshakeBytes, deadline));
    if (version != wire::kVersion)
      throw GuidanceError(GuidanceError::Kind::Version,
                          "server speaks protocol version " + std::to_string(version) + ", client " + std::to_string(wire::kVersion));
  } catch (...) {
    disconnect();
    throw;
  }
}

GuidanceResponse BridgeProvider::guide(const GuidanceRequest& request) {
  validate_request(request);
  connect();
  std::lock_guard lock(mutex_);
  if (fd_ < 0) throw GuidanceError(GuidanceError::Kind::Connect, "not connected to " + endpoint_);
  GuidanceRequest framed = request;
  framed.request_id = next_id_.fetch_add(1);
  const auto deadline = Clock::now() + timeout_;
  try {
    send_all(wire::encode_request(framed), deadline);
    auto frame = recv_exact(4, deadline);
    uint32_t len;
    std::memcpy(&len, frame.data(), 4);
    if (len < wire::kResponseFixedBytes - 4 || len > wire::kMaxFrameBytes)
      throw GuidanceError(GuidanceError::Kind::Malformed, "implausible response length " + std::to_string(len));
    const auto rest = recv_exact(len, deadline);
    frame.insert(frame.end(), rest.begin(), rest.end());
    auto resp = wire::decode_response(frame, request.image.height, request.image.width);
    if (resp.request_id != framed.request_id)
      throw GuidanceError(GuidanceError::Kind::Protocol, "response id " + std::to_string(resp.request_id) + " does not match request " +
                                                             std::to_string(framed.request_id));
    if (resp.status == wire::Status::BackendError)
      throw GuidanceError(GuidanceError::Kind::Backend, "backend reported an error for request " + std::to_string(framed.request_id));
    for (float v : resp.residual.data)
      if (!std::isfinite(v)) throw GuidanceError(GuidanceError::Kind::Malformed, "residual contains non-finite values");
    return {request.request_id, std::move(resp.residual)};
  } catch (const GuidanceError& e) {
    // A backend error leaves the stream aligned; anything else may not.
    if (e.kind() != GuidanceError::Kind::Backend) disconnect();
    throw;
  }
}

}  // namespace desksplat
