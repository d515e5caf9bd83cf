#include "modisc/wire.hpp"

#include "json.hpp"

namespace modisc::wire {

using nlohmann::json;

namespace {

struct Encoder {
  json operator()(const Hello& m) const {
    return {{"type", "hello"},   {"protocol_version", m.protocol_version},
            {"dt", m.dt},        {"n_steps", m.n_steps},
            {"u_hi", m.u_hi},    {"repeats", m.repeats}};
  }
  json operator()(const Stimulus& m) const {
    return {{"type", "stimulus"}, {"request_id", m.request_id}, {"u", m.u}};
  }
  json operator()(const Response& m) const {
    return {{"type", "response"}, {"request_id", m.request_id}, {"z", m.z}};
  }
  json operator()(const Error& m) const {
    return {{"type", "error"}, {"request_id", m.request_id}, {"message", m.message}};
  }
  json operator()(const Bye&) const { return {{"type", "bye"}}; }
};

}  // namespace

std::string encode(const Message& msg) { return std::visit(Encoder{}, msg).dump(); }

Message decode(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ProtocolError("message lacks a string 'type' field");
  }
  const auto type = j["type"].get<std::string>();
  try {
    if (type == "hello") {
      return Hello{j.at("protocol_version").get<int>(), j.at("dt").get<double>(),
                   j.at("n_steps").get<std::uint64_t>(), j.at("u_hi").get<double>(),
                   j.at("repeats").get<std::uint64_t>()};
    }
    if (type == "stimulus") {
      return Stimulus{j.at("request_id").get<std::uint64_t>(),
                      j.at("u").get<std::vector<double>>()};
    }
    if (type == "response") {
      return Response{j.at("request_id").get<std::uint64_t>(),
                      j.at("z").get<std::vector<double>>()};
    }
    if (type == "error") {
      return Error{j.value("request_id", std::uint64_t{0}), j.at("message").get<std::string>()};
    }
    if (type == "bye") return Bye{};
  } catch (const json::exception& e) {
    throw ProtocolError("bad '" + type + "' message: " + e.what());
  }
  throw ProtocolError("unknown message type '" + type + "'");
}

}  // namespace modisc::wire
