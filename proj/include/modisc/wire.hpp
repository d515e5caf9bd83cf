#pragma once

// Newline-delimited JSON messages exchanged with a remote reference.
//
//   {"type":"hello","protocol_version":1,"dt":0.05,"n_steps":1000,"u_hi":10,"repeats":1}
//   {"type":"stimulus","request_id":1,"u":[...]}
//   {"type":"response","request_id":1,"z":[...]}
//   {"type":"error","request_id":1,"message":"..."}
//   {"type":"bye"}
//
// Doubles are written in shortest round-trip form, so decode(encode(x)) == x bit for bit.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace modisc::wire {

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Hello {
  int protocol_version = kProtocolVersion;
  double dt = 0.0;
  std::uint64_t n_steps = 0;
  double u_hi = 0.0;
  std::uint64_t repeats = 1;
  bool operator==(const Hello&) const = default;
};

struct Stimulus {
  std::uint64_t request_id = 0;
  std::vector<double> u;
  bool operator==(const Stimulus&) const = default;
};

struct Response {
  std::uint64_t request_id = 0;
  std::vector<double> z;
  bool operator==(const Response&) const = default;
};

struct Error {
  std::uint64_t request_id = 0;
  std::string message;
  bool operator==(const Error&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

using Message = std::variant<Hello, Stimulus, Response, Error, Bye>;

/// One JSON object, no trailing newline.
std::string encode(const Message& msg);
/// Throws ProtocolError on malformed input or unknown type.
Message decode(std::string_view line);

}  // namespace modisc::wire
