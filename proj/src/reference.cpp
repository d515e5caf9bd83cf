#include "modisc/reference.hpp"

#include "json.hpp"

#include "modisc/rng.hpp"

namespace modisc {

using nlohmann::json;

void check_stimulus(const ReferenceDescriptor& desc, const ControlSignal& control) {
  if (!(control.grid() == desc.grid)) {
    throw ContractViolation("stimulus grid differs from the reference grid");
  }
  for (std::size_t m = 0; m < control.size(); ++m) {
    if (!(control[m] >= 0.0 && control[m] <= desc.u_hi)) {
      throw ContractViolation("stimulus sample " + std::to_string(m) +
                              " outside the reference bounds [0, " + std::to_string(desc.u_hi) +
                              "]");
    }
  }
}

SimulatedReference::SimulatedReference(ModelInstance model, TimeGrid grid, double u_hi,
                                       double alpha, std::size_t repeats, std::uint64_t seed)
    : model_(std::move(model)), desc_{grid, u_hi, repeats}, alpha_(alpha), seed_(seed) {
  if (repeats < 1) throw ContractViolation("reference repeats must be >= 1");
  if (!(alpha >= 0.0)) throw ContractViolation("alpha must be >= 0");
  if (!(u_hi > 0.0)) throw ContractViolation("u_hi must be positive");
}

std::uint64_t SimulatedReference::stimulus_seed(std::uint64_t k) const {
  return derive_seed(seed_, k);
}

ObservationSeries SimulatedReference::apply(const ControlSignal& control) {
  check_stimulus(desc_, control);
  const std::uint64_t k = served_++;
  if (alpha_ == 0.0) {
    try {
      return simulate(model_, control, {}, {kStateTolerance}).output;
    } catch (const IntegrationDiverged& e) {
      throw ReferenceFailure(std::string("reference simulation diverged: ") + e.what());
    }
  }
  StochasticConfig cfg{alpha_, desc_.repeats, stimulus_seed(k)};
  auto result = simulate_stochastic(model_, control, cfg);
  last_clamp_fraction_ = result.clamp_fraction;
  return std::move(result.mean);
}

RecordingReference::RecordingReference(ReferenceSystem& inner, const std::filesystem::path& path)
    : inner_(inner), out_(path, std::ios::out | std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open record file " + path.string());
  const auto& d = inner_.descriptor();
  out_ << json{{"type", "hello"},       {"dt", d.grid.dt()}, {"n_steps", d.grid.n_steps()},
               {"u_hi", d.u_hi},        {"repeats", d.repeats}}
              .dump()
       << '\n';
  out_.flush();
}

ObservationSeries RecordingReference::apply(const ControlSignal& control) {
  auto z = inner_.apply(control);
  out_ << json{{"type", "pair"},
               {"request_id", next_id_++},
               {"u", std::vector<double>(control.values().begin(), control.values().end())},
               {"z", z.values}}
              .dump()
       << '\n';
  out_.flush();
  return z;
}

ReplayReference::ReplayReference(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open record file " + path.string());
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const auto type = j.at("type").get<std::string>();
    if (type == "hello") {
      desc_ = {TimeGrid(j.at("dt").get<double>(), j.at("n_steps").get<std::size_t>()),
               j.at("u_hi").get<double>(), j.at("repeats").get<std::size_t>()};
      have_header = true;
    } else if (type == "pair") {
      pairs_.push_back({j.at("u").get<std::vector<double>>(), j.at("z").get<std::vector<double>>()});
    }
  }
  if (!have_header) throw std::runtime_error("record file has no hello line: " + path.string());
}

ObservationSeries ReplayReference::apply(const ControlSignal& control) {
  check_stimulus(desc_, control);
  if (next_ >= pairs_.size()) throw ReferenceFailure("recording exhausted");
  const auto& pair = pairs_[next_];
  if (!std::equal(pair.u.begin(), pair.u.end(), control.values().begin(), control.values().end())) {
    throw ReferenceFailure("stimulus " + std::to_string(next_ + 1) + " differs from the recording");
  }
  ++next_;
  return ObservationSeries(desc_.grid, pair.z);
}

}  // namespace modisc
