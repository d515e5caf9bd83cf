#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "modisc/control_design.hpp"
#include "modisc/discrimination.hpp"
#include "modisc/reference.hpp"
#include "modisc/remote.hpp"
#include "modisc/wire.hpp"

using namespace modisc;
namespace fs = std::filesystem;

namespace {

LineConnection raw_connect(std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  return LineConnection(fd);
}

wire::Message next(LineConnection& c) {
  const auto line = c.read_line();
  REQUIRE(line.has_value());
  return wire::decode(*line);
}

// Serves `ref` on an ephemeral loopback port for `sessions` sessions.
struct LoopbackServer {
  LoopbackServer(ReferenceSystem& ref, std::size_t sessions, ServerOptions opts = {})
      : server(ref, Endpoint{"127.0.0.1", 0}, with_sessions(opts, sessions)),
        thread([this] { server.serve(); }) {}
  ~LoopbackServer() {
    server.stop();
    thread.join();
  }
  Endpoint endpoint() const { return {"127.0.0.1", server.port()}; }

  static ServerOptions with_sessions(ServerOptions o, std::size_t n) {
    o.max_sessions = n;
    return o;
  }

  ReferenceServer server;
  std::thread thread;
};

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "modisc-tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("simulated reference") {
  const auto grid = TimeGrid(0.05, 200);
  const auto m = table_model(ModelKind::ThreeState);

  SUBCASE("zero input leaves the cell at rest") {
    SimulatedReference ref(m, grid);
    for (double z : ref.apply(ControlSignal::constant(grid, 0.0)).values) CHECK(z == 0.0);
  }
  SUBCASE("deterministic pass-through") {
    SimulatedReference ref(m, grid);
    const auto u = initial_control(grid, 10.0);
    CHECK(ref.apply(u).values == simulate(m, u).output.values);
    CHECK(ref.descriptor() == ReferenceDescriptor{grid, 10.0, 1});
  }
  SUBCASE("repeats average the stochastic paths") {
    SimulatedReference ref(m, grid, 10.0, 0.05, 4, 99);
    const auto u = initial_control(grid, 10.0);
    const auto z = ref.apply(u);
    const auto st = simulate_stochastic(m, u, {0.05, 4, ref.stimulus_seed(0)});
    for (std::size_t i = 0; i < z.values.size(); ++i) {
      double sum = 0.0;
      for (const auto& p : st.paths) sum += p.values[i];
      CHECK(z.values[i] == doctest::Approx(sum / 4.0).epsilon(1e-14));
    }
    CHECK(ref.stimulus_seed(0) != ref.stimulus_seed(1));
    const auto z2 = ref.apply(u);
    CHECK(z2.values != z.values);
    CHECK(ref.stimuli_served() == 2);
  }
  SUBCASE("same session seed, same responses") {
    SimulatedReference a(m, grid, 10.0, 0.05, 2, 5), b(m, grid, 10.0, 0.05, 2, 5);
    const auto u = initial_control(grid, 10.0);
    CHECK(a.apply(u).values == b.apply(u).values);
    CHECK(a.apply(u).values == b.apply(u).values);
  }
  SUBCASE("stimulus checks") {
    SimulatedReference ref(m, grid, 4.0);
    CHECK_THROWS_AS(ref.apply(ControlSignal::constant(grid, 5.0)), ContractViolation);
    CHECK_THROWS_AS(ref.apply(ControlSignal::constant(TimeGrid(0.05, 100), 1.0)), ContractViolation);
    CHECK_THROWS_AS(SimulatedReference(m, grid, 10.0, -0.1), ContractViolation);
    CHECK_THROWS_AS(SimulatedReference(m, grid, 10.0, 0.0, 0), ContractViolation);
  }
  SUBCASE("6-state preset is served despite its small simplex excursion") {
    SimulatedReference ref(table_model(ModelKind::SixState), grid);
    CHECK_NOTHROW(ref.apply(ControlSignal::constant(grid, 10.0)));
  }
}

TEST_CASE("wire round trip") {
  const double tricky[] = {0.1, 1.0 / 3.0, -0.0, 5e-324, 1.7976931348623157e308, -2.5e-17, 123456789.123456789};
  std::vector<double> values(std::begin(tricky), std::end(tricky));
  const wire::Message msgs[] = {
      wire::Hello{1, 0.05, 1000, 10.0, 3},
      wire::Stimulus{7, values},
      wire::Response{7, values},
      wire::Error{3, "bad \"stimulus\"\nline"},
      wire::Bye{},
  };
  for (const auto& m : msgs) {
    const auto line = wire::encode(m);
    CHECK(line.find('\n') == std::string::npos);
    const auto back = wire::decode(line);
    CHECK(back == m);
  }
  const auto r = std::get<wire::Response>(wire::decode(wire::encode(wire::Response{1, values})));
  for (std::size_t i = 0; i < values.size(); ++i) {
    CHECK(std::signbit(r.z[i]) == std::signbit(values[i]));
    CHECK(std::memcmp(&r.z[i], &values[i], sizeof(double)) == 0);
  }
  CHECK(wire::encode(wire::Bye{}) == R"({"type":"bye"})");

  CHECK_THROWS_AS(wire::decode("not json"), wire::ProtocolError);
  CHECK_THROWS_AS(wire::decode(R"({"type":"gossip"})"), wire::ProtocolError);
  CHECK_THROWS_AS(wire::decode(R"({"type":"stimulus","request_id":1})"), wire::ProtocolError);
  CHECK_THROWS_AS(wire::decode(R"({"type":"stimulus","request_id":1,"u":["a"]})"), wire::ProtocolError);
}

TEST_CASE("endpoints") {
  const auto e = Endpoint::parse("localhost:7878");
  CHECK(e.host == "localhost");
  CHECK(e.port == 7878);
  CHECK(e.str() == "localhost:7878");
  CHECK_THROWS_AS(Endpoint::parse("localhost"), ContractViolation);
  CHECK_THROWS_AS(Endpoint::parse("localhost:99999"), ContractViolation);
  CHECK(Endpoint::parse(":80").str() == "127.0.0.1:80");
  CHECK_THROWS_AS(Endpoint::parse("host:8x"), ContractViolation);

  ::unsetenv(kEndpointEnv);
  CHECK(resolve_endpoint(e).port == 7878);
  ::setenv(kEndpointEnv, "10.0.0.1:9", 1);
  CHECK(resolve_endpoint(e).str() == "10.0.0.1:9");
  ::unsetenv(kEndpointEnv);
}

TEST_CASE("loopback reference") {
  const auto grid = TimeGrid(0.05, 200);
  const auto m = table_model(ModelKind::FourState);

  SUBCASE("responses are bit-identical to in-process calls") {
    SimulatedReference served(m, grid, 10.0, 0.03, 3, 11);
    SimulatedReference local(m, grid, 10.0, 0.03, 3, 11);
    LoopbackServer srv(served, 1);
    auto remote = RemoteReference::connect(srv.endpoint());
    CHECK(remote->descriptor() == local.descriptor());
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto u = random_piecewise_constant(grid, 10.0, 8, s);
      CHECK(remote->apply(u).values == local.apply(u).values);
    }
    remote->reaffirm_hello();
    CHECK(remote->apply(initial_control(grid, 10.0)).values == local.apply(initial_control(grid, 10.0)).values);
    remote->close();
  }

  SUBCASE("a full discrimination run is transport-transparent") {
    SimulatedReference served(m, grid);
    SimulatedReference local(m, grid);
    LoopbackServer srv(served, 1);
    auto remote = RemoteReference::connect(srv.endpoint());
    DiscriminationConfig cfg;
    cfg.thresholds.i_max = 3;
    cfg.fit.n_grad = 20;
    cfg.control.solver.max_iterations = 10;
    cfg.control.solver.restarts = 2;
    const std::array cands{random_model(ModelKind::ThreeState, 1), random_model(ModelKind::FourState, 2)};
    const auto a = run_discrimination(local, cands, cfg, 4);
    const auto b = run_discrimination(*remote, cands, cfg, 4);
    CHECK(a.final_verdict == b.final_verdict);
    CHECK(a.final_theta == b.final_theta);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].control == b.records[i].control);
  }

  SUBCASE("expected descriptor must match") {
    SimulatedReference served(m, grid);
    LoopbackServer srv(served, 1);
    CHECK_THROWS_AS(RemoteReference::connect(srv.endpoint(), ReferenceDescriptor{grid, 5.0, 1}), ConnectError);
  }

  SUBCASE("protocol version mismatch is rejected") {
    SimulatedReference served(m, grid);
    LoopbackServer srv(served, 1);
    auto c = raw_connect(srv.server.port());
    auto hello = std::get<wire::Hello>(next(c));
    CHECK(hello == to_hello(served.descriptor()));
    hello.protocol_version = 2;
    c.send_line(wire::encode(hello));
    const auto err = std::get<wire::Error>(next(c));
    CHECK(err.message == "protocol version mismatch");
  }

  SUBCASE("wrong-length stimulus gets an error and the session continues") {
    SimulatedReference served(m, grid);
    LoopbackServer srv(served, 1);
    auto c = raw_connect(srv.server.port());
    const auto hello = std::get<wire::Hello>(next(c));
    c.send_line(wire::encode(hello));
    CHECK(std::get<wire::Hello>(next(c)) == hello);
    c.send_line(wire::encode(wire::Hello{hello}));
    CHECK(std::get<wire::Hello>(next(c)) == hello);  // idempotent

    c.send_line(wire::encode(wire::Stimulus{1, std::vector<double>(5, 1.0)}));
    const auto err = std::get<wire::Error>(next(c));
    CHECK(err.request_id == 1);
    CHECK(err.message == "request 1 has 5 samples, expected 201");

    c.send_line(wire::encode(wire::Stimulus{2, std::vector<double>(grid.size(), 1.0)}));
    const auto ok = std::get<wire::Response>(next(c));
    CHECK(ok.request_id == 2);
    CHECK(ok.z == simulate(m, ControlSignal::constant(grid, 1.0)).output.values);

    c.send_line(wire::encode(wire::Stimulus{2, std::vector<double>(grid.size(), 1.0)}));
    CHECK(std::get<wire::Error>(next(c)).request_id == 2);

    c.send_line(wire::encode(wire::Stimulus{3, std::vector<double>(grid.size(), 11.0)}));
    CHECK(std::get<wire::Error>(next(c)).request_id == 3);
    c.send_line(wire::encode(wire::Bye{}));
  }

  SUBCASE("bye mid-run truncates the report") {
    SimulatedReference inner(m, grid);
    // The server ends the session after two stimuli.
    struct Limited final : ReferenceSystem {
      ReferenceSystem& in;
      int left;
      Limited(ReferenceSystem& r, int n) : in(r), left(n) {}
      const ReferenceDescriptor& descriptor() const override { return in.descriptor(); }
      ObservationSeries apply(const ControlSignal& u) override {
        if (left-- <= 0) throw ReferenceFailure("cell lost");
        return in.apply(u);
      }
    } limited(inner, 2);
    LoopbackServer srv(limited, 1);
    auto remote = RemoteReference::connect(srv.endpoint());
    DiscriminationConfig cfg;
    cfg.fit.n_grad = 10;
    cfg.control.solver.max_iterations = 5;
    cfg.control.solver.restarts = 1;
    cfg.stop_on_verdict = false;
    const auto rep = run_discrimination(
        *remote, {random_model(ModelKind::ThreeState, 1), random_model(ModelKind::FourState, 2)}, cfg, 1);
    CHECK(rep.truncated);
    CHECK(rep.records.size() == 2);
    CHECK(rep.final_verdict == Verdict::inconclusive());
    CHECK(rep.failure.find("cell lost") != std::string::npos);
  }

  SUBCASE("client sees a dropped server as a reference failure") {
    SimulatedReference served(m, grid);
    auto srv = std::make_unique<LoopbackServer>(served, 1);
    const auto ep = srv->endpoint();
    auto c = raw_connect(ep.port);
    (void)next(c);
    c.close();  // session ends, server stops after max_sessions
    srv.reset();
    CHECK_THROWS_AS(RemoteReference::connect(ep), ConnectError);
  }

  SUBCASE("port in use") {
    SimulatedReference served(m, grid);
    LoopbackServer srv(served, 1);
    CHECK_THROWS_AS(ReferenceServer(served, srv.endpoint()), ConnectError);
    auto c = RemoteReference::connect(srv.endpoint());
    c->close();
  }

  SUBCASE("server log lines") {
    SimulatedReference served(m, grid);
    std::ostringstream log;
    ServerOptions opts;
    opts.log = &log;
    {
      LoopbackServer srv(served, 1, opts);
      auto c = RemoteReference::connect(srv.endpoint());
      c->close();
    }
    const auto text = log.str();
    CHECK(text.find("reference server listening on 127.0.0.1:") == 0);
    CHECK(text.find("session 1 closed") != std::string::npos);
  }
}

TEST_CASE("record and replay") {
  const auto grid = TimeGrid(0.05, 200);
  const auto path = temp_path("record.jsonl");
  fs::remove(path);
  SimulatedReference inner(table_model(ModelKind::ThreeState), grid, 10.0, 0.02, 2, 3);
  std::vector<ObservationSeries> seen;
  const auto u1 = initial_control(grid, 10.0);
  const auto u2 = random_piecewise_constant(grid, 10.0, 8, 1);
  {
    RecordingReference rec(inner, path);
    seen.push_back(rec.apply(u1));
    seen.push_back(rec.apply(u2));
  }
  ReplayReference replay(path);
  CHECK(replay.descriptor() == inner.descriptor());
  CHECK(replay.remaining() == 2);
  CHECK(replay.apply(u1).values == seen[0].values);
  SUBCASE("in order") {
    CHECK(replay.apply(u2).values == seen[1].values);
    CHECK_THROWS_AS(replay.apply(u2), ReferenceFailure);
  }
  SUBCASE("a different stimulus is refused") {
    CHECK_THROWS_AS(replay.apply(u1), ReferenceFailure);
  }
  CHECK_THROWS(ReplayReference(temp_path("missing.jsonl")));
}
