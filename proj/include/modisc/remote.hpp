#pragma once

// Stream-socket transport for reference systems: a client handle that looks like
// any other ReferenceSystem, and a server that exposes one reference to one
// session at a time.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "modisc/reference.hpp"
#include "modisc/wire.hpp"

namespace modisc {

/// Environment variable that overrides any configured endpoint.
inline constexpr const char* kEndpointEnv = "MODISC_REFERENCE_ENDPOINT";

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// "host:port"; throws ContractViolation on malformed input.
  static Endpoint parse(std::string_view text);
  std::string str() const;
};

/// `configured` unless the override variable is set.
Endpoint resolve_endpoint(const Endpoint& configured);

/// Could not reach or handshake with the endpoint.
class ConnectError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Owning socket with newline framing.
class LineConnection {
 public:
  explicit LineConnection(int fd) : fd_(fd) {}
  ~LineConnection();
  LineConnection(LineConnection&& other) noexcept;
  LineConnection& operator=(LineConnection&& other) noexcept;
  LineConnection(const LineConnection&) = delete;
  LineConnection& operator=(const LineConnection&) = delete;

  /// Returns false if the peer is gone.
  bool send_line(std::string_view line);
  /// Next line without its terminator; nullopt at end of stream.
  std::optional<std::string> read_line();
  /// True if bytes are already buffered or readable without blocking.
  bool has_pending_input();
  void close();
  bool is_open() const noexcept { return fd_ >= 0; }

 private:
  int fd_ = -1;
  std::string buffer_;
};

class RemoteReference final : public ReferenceSystem {
 public:
  /// Connects and completes the hello exchange. When `expected` is given, the
  /// server rejects the session unless its descriptor matches.
  static std::unique_ptr<RemoteReference> connect(const Endpoint& endpoint,
                                                  std::optional<ReferenceDescriptor> expected = {});
  ~RemoteReference() override;

  const ReferenceDescriptor& descriptor() const override { return desc_; }
  ObservationSeries apply(const ControlSignal& control) override;

  /// Re-sends the session hello; the server accepts identical fields.
  void reaffirm_hello();
  /// Sends Bye and closes.
  void close();

 private:
  RemoteReference(LineConnection conn, ReferenceDescriptor desc)
      : conn_(std::move(conn)), desc_(desc) {}
  wire::Message receive();

  LineConnection conn_;
  ReferenceDescriptor desc_;
  std::uint64_t next_id_ = 1;
};

struct ServerOptions {
  /// Persist every stimulus/response pair as JSON lines.
  std::optional<std::filesystem::path> record;
  /// Stop after this many sessions; 0 serves until stop().
  std::size_t max_sessions = 0;
  /// Progress lines (startup banner, session open/close); may be null.
  std::ostream* log = nullptr;
};

class ReferenceServer {
 public:
  /// Binds and listens immediately; throws ConnectError if the address is taken.
  /// Port 0 picks an ephemeral port, see port().
  ReferenceServer(ReferenceSystem& reference, const Endpoint& bind, ServerOptions options = {});
  ~ReferenceServer();
  ReferenceServer(const ReferenceServer&) = delete;
  ReferenceServer& operator=(const ReferenceServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  /// Accepts sessions one after another; concurrent clients wait in the backlog.
  void serve();
  /// Makes serve() return after the current session. Safe from other threads.
  void stop();
  std::size_t sessions_served() const noexcept { return sessions_; }

 private:
  void run_session(LineConnection& conn);

  ReferenceSystem& reference_;
  ServerOptions options_;
  std::unique_ptr<RecordingReference> recorder_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::size_t sessions_ = 0;
};

wire::Hello to_hello(const ReferenceDescriptor& desc);

}  // namespace modisc
