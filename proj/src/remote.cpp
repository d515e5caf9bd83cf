#include "modisc/remote.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <ostream>

namespace modisc {

namespace {

std::string errno_text() { return std::strerror(errno); }

ReferenceDescriptor from_hello(const wire::Hello& h) {
  return {TimeGrid(h.dt, h.n_steps), h.u_hi, h.repeats};
}

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

wire::Hello to_hello(const ReferenceDescriptor& desc) {
  return {wire::kProtocolVersion, desc.grid.dt(), desc.grid.n_steps(), desc.u_hi, desc.repeats};
}

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 == text.size()) {
    throw ContractViolation("endpoint '" + std::string(text) + "' is not host:port");
  }
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  if (ep.host.empty()) ep.host = "127.0.0.1";
  const std::string port(text.substr(colon + 1));
  char* end = nullptr;
  const long value = std::strtol(port.c_str(), &end, 10);
  if (*end != '\0' || value < 0 || value > 65535) {
    throw ContractViolation("endpoint port '" + port + "' is invalid");
  }
  ep.port = static_cast<std::uint16_t>(value);
  return ep;
}

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

Endpoint resolve_endpoint(const Endpoint& configured) {
  if (const char* env = std::getenv(kEndpointEnv); env != nullptr && *env != '\0') {
    return Endpoint::parse(env);
  }
  return configured;
}

// LineConnection ------------------------------------------------------------

LineConnection::~LineConnection() { close(); }

LineConnection::LineConnection(LineConnection&& other) noexcept
    : fd_(other.fd_), buffer_(std::move(other.buffer_)) {
  other.fd_ = -1;
}

LineConnection& LineConnection::operator=(LineConnection&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    buffer_ = std::move(other.buffer_);
    other.fd_ = -1;
  }
  return *this;
}

void LineConnection::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

bool LineConnection::send_line(std::string_view line) {
  if (fd_ < 0) return false;
  std::string payload(line);
  payload.push_back('\n');
  std::size_t sent = 0;
  while (sent < payload.size()) {
    const ssize_t n = ::send(fd_, payload.data() + sent, payload.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

std::optional<std::string> LineConnection::read_line() {
  for (;;) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    if (fd_ < 0) return std::nullopt;
    char chunk[65536];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

bool LineConnection::has_pending_input() {
  if (!buffer_.empty()) return true;
  if (fd_ < 0) return false;
  pollfd p{fd_, POLLIN, 0};
  if (::poll(&p, 1, 0) <= 0) return false;
  // A readable socket with nothing to read means the peer closed; not a message.
  char c;
  return ::recv(fd_, &c, 1, MSG_PEEK | MSG_DONTWAIT) > 0;
}

// RemoteReference -----------------------------------------------------------

std::unique_ptr<RemoteReference> RemoteReference::connect(
    const Endpoint& endpoint, std::optional<ReferenceDescriptor> expected) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string port = std::to_string(endpoint.port);
  if (const int rc = ::getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &found); rc != 0) {
    throw ConnectError("cannot resolve " + endpoint.str() + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  std::string last_error = "no addresses";
  for (addrinfo* a = found; a != nullptr; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    last_error = errno_text();
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(found);
  if (fd < 0) throw ConnectError("cannot connect to " + endpoint.str() + ": " + last_error);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

  LineConnection conn(fd);
  const auto first = conn.read_line();
  if (!first) throw ConnectError("reference at " + endpoint.str() + " closed before hello");
  wire::Message msg;
  try {
    msg = wire::decode(*first);
  } catch (const wire::ProtocolError& e) {
    throw ConnectError(std::string("bad hello from reference: ") + e.what());
  }
  const auto* server_hello = std::get_if<wire::Hello>(&msg);
  if (server_hello == nullptr) throw ConnectError("reference did not open with hello");
  if (server_hello->protocol_version != wire::kProtocolVersion) {
    conn.send_line(wire::encode(wire::Error{0, "protocol version mismatch"}));
    throw ConnectError("reference speaks protocol version " +
                       std::to_string(server_hello->protocol_version));
  }
  const wire::Hello reply = expected ? to_hello(*expected) : *server_hello;
  if (!conn.send_line(wire::encode(reply))) throw ConnectError("reference dropped during hello");
  const auto ack = conn.read_line();
  if (!ack) throw ConnectError("reference closed during hello");
  try {
    const auto ack_msg = wire::decode(*ack);
    if (const auto* err = std::get_if<wire::Error>(&ack_msg)) {
      throw ConnectError("reference rejected session: " + err->message);
    }
    if (!std::holds_alternative<wire::Hello>(ack_msg)) {
      throw ConnectError("reference did not acknowledge hello");
    }
  } catch (const wire::ProtocolError& e) {
    throw ConnectError(std::string("bad hello acknowledgement: ") + e.what());
  }
  return std::unique_ptr<RemoteReference>(new RemoteReference(std::move(conn), from_hello(reply)));
}

RemoteReference::~RemoteReference() { close(); }

void RemoteReference::close() {
  if (conn_.is_open()) {
    conn_.send_line(wire::encode(wire::Bye{}));
    conn_.close();
  }
}

wire::Message RemoteReference::receive() {
  const auto line = conn_.read_line();
  if (!line) {
    conn_.close();
    throw ReferenceFailure("connection to reference lost");
  }
  try {
    return wire::decode(*line);
  } catch (const wire::ProtocolError& e) {
    throw ReferenceFailure(std::string("garbled reply from reference: ") + e.what());
  }
}

void RemoteReference::reaffirm_hello() {
  if (!conn_.send_line(wire::encode(to_hello(desc_)))) {
    throw ReferenceFailure("connection to reference lost");
  }
  const auto msg = receive();
  if (const auto* err = std::get_if<wire::Error>(&msg)) {
    throw ReferenceFailure("reference rejected hello: " + err->message);
  }
  if (!std::holds_alternative<wire::Hello>(msg)) throw ReferenceFailure("expected hello echo");
}

ObservationSeries RemoteReference::apply(const ControlSignal& control) {
  check_stimulus(desc_, control);
  const std::uint64_t id = next_id_++;
  const wire::Stimulus stim{id, {control.values().begin(), control.values().end()}};
  if (!conn_.send_line(wire::encode(stim))) {
    conn_.close();
    throw ReferenceFailure("connection to reference lost");
  }
  const auto msg = receive();
  return std::visit(
      Overloaded{
          [&](const wire::Response& r) -> ObservationSeries {
            if (r.request_id != id) {
              throw ReferenceFailure("response for request " + std::to_string(r.request_id) +
                                     ", expected " + std::to_string(id));
            }
            if (r.z.size() != desc_.grid.size()) {
              throw ReferenceFailure("response has " + std::to_string(r.z.size()) + " samples");
            }
            return ObservationSeries(desc_.grid, r.z);
          },
          [&](const wire::Error& e) -> ObservationSeries {
            throw ReferenceFailure("reference rejected request " + std::to_string(e.request_id) +
                                   ": " + e.message);
          },
          [&](const wire::Bye&) -> ObservationSeries {
            conn_.close();
            throw ReferenceFailure("reference ended the session");
          },
          [&](const auto&) -> ObservationSeries {
            throw ReferenceFailure("unexpected message from reference");
          }},
      msg);
}

// ReferenceServer -----------------------------------------------------------

ReferenceServer::ReferenceServer(ReferenceSystem& reference, const Endpoint& bind,
                                 ServerOptions options)
    : reference_(reference), options_(std::move(options)) {
  if (options_.record) recorder_ = std::make_unique<RecordingReference>(reference_, *options_.record);

  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* found = nullptr;
  const std::string port = std::to_string(bind.port);
  if (const int rc = ::getaddrinfo(bind.host.c_str(), port.c_str(), &hints, &found); rc != 0) {
    throw ConnectError("cannot resolve " + bind.str() + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (addrinfo* a = found; a != nullptr; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 8) == 0) {
      listen_fd_ = fd;
      break;
    }
    last_error = errno_text();
    ::close(fd);
  }
  ::freeaddrinfo(found);
  if (listen_fd_ < 0) throw ConnectError("cannot listen on " + bind.str() + ": " + last_error);

  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = addr.ss_family == AF_INET6
              ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
              : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  if (options_.log != nullptr) {
    *options_.log << "reference server listening on " << bind.host << ":" << port_ << std::endl;
  }
}

ReferenceServer::~ReferenceServer() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void ReferenceServer::stop() { stopping_ = true; }

void ReferenceServer::serve() {
  while (!stopping_) {
    if (options_.max_sessions != 0 && sessions_ >= options_.max_sessions) break;
    pollfd p{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, 100);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    LineConnection conn(fd);
    ++sessions_;
    if (options_.log != nullptr) *options_.log << "session " << sessions_ << " opened" << std::endl;
    run_session(conn);
    if (options_.log != nullptr) *options_.log << "session " << sessions_ << " closed" << std::endl;
  }
}

void ReferenceServer::run_session(LineConnection& conn) {
  ReferenceSystem& ref = recorder_ ? static_cast<ReferenceSystem&>(*recorder_) : reference_;
  const auto desc = ref.descriptor();
  const wire::Hello ours = to_hello(desc);
  auto reject = [&](std::uint64_t id, const std::string& why) {
    conn.send_line(wire::encode(wire::Error{id, why}));
  };

  if (!conn.send_line(wire::encode(ours))) return;
  const auto first = conn.read_line();
  if (!first) return;
  try {
    const auto msg = wire::decode(*first);
    const auto* hello = std::get_if<wire::Hello>(&msg);
    if (hello == nullptr) return reject(0, "expected hello");
    if (hello->protocol_version != wire::kProtocolVersion) {
      return reject(0, "protocol version mismatch");
    }
    if (!(*hello == ours)) return reject(0, "hello fields differ from this reference");
  } catch (const wire::ProtocolError& e) {
    return reject(0, e.what());
  }
  if (!conn.send_line(wire::encode(ours))) return;

  std::uint64_t last_id = 0;
  while (!stopping_) {
    const auto line = conn.read_line();
    if (!line) return;
    wire::Message msg;
    try {
      msg = wire::decode(*line);
    } catch (const wire::ProtocolError& e) {
      return reject(0, e.what());
    }
    if (std::holds_alternative<wire::Bye>(msg)) return;
    if (const auto* hello = std::get_if<wire::Hello>(&msg)) {
      if (!(*hello == ours)) return reject(0, "hello fields differ from this session");
      if (!conn.send_line(wire::encode(ours))) return;
      continue;
    }
    const auto* stim = std::get_if<wire::Stimulus>(&msg);
    if (stim == nullptr) return reject(0, "unexpected message type from client");

    if (stim->request_id <= last_id) {
      reject(stim->request_id, "request_id " + std::to_string(stim->request_id) +
                                   " is not above " + std::to_string(last_id));
      continue;
    }
    last_id = stim->request_id;
    if (stim->u.size() != desc.grid.size()) {
      reject(stim->request_id, "request " + std::to_string(stim->request_id) + " has " +
                                   std::to_string(stim->u.size()) + " samples, expected " +
                                   std::to_string(desc.grid.size()));
      continue;
    }
    wire::Message reply;
    try {
      const ControlSignal control(desc.grid, stim->u, {0.0, desc.u_hi});
      reply = wire::Response{stim->request_id, ref.apply(control).values};
    } catch (const std::exception& e) {
      reply = wire::Error{stim->request_id, e.what()};
    }
    // A stimulus that arrived before this reply went out breaks strict ordering.
    const bool pipelined = conn.has_pending_input();
    if (!conn.send_line(wire::encode(reply))) return;
    if (pipelined) {
      std::uint64_t id = 0;
      if (const auto next = conn.read_line()) {
        try {
          if (const auto m = wire::decode(*next); std::holds_alternative<wire::Stimulus>(m)) {
            id = std::get<wire::Stimulus>(m).request_id;
          }
        } catch (const wire::ProtocolError&) {
        }
      }
      return reject(id, "stimulus sent before the previous response");
    }
  }
}

}  // namespace modisc
