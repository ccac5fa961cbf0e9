#pragma once

// JSON and CSV formats: sampling measures, measurement data files and fit
// traces. Requires nlohmann/json on the include path.

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adjfit/descent.hpp"
#include "adjfit/errors.hpp"
#include "adjfit/gradcheck.hpp"
#include "adjfit/measure.hpp"
#include "adjfit/models.hpp"
#include "adjfit/sampling.hpp"

namespace adjfit::io {

using nlohmann::json;

/// Fixed 17-significant-digit formatting so equal doubles print identically.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json measure_to_json(const SamplingMeasure& m) {
  json out;
  out["atoms"] = json::array();
  for (const auto& atom : m.atoms()) out["atoms"].push_back({{"tau", atom.tau}, {"weight", atom.weight}});
  switch (m.density_kind()) {
    case SamplingMeasure::DensityKind::zero:
      out["density"] = {{"kind", "zero"}};
      break;
    case SamplingMeasure::DensityKind::uniform:
      out["density"] = {{"kind", "uniform"}};
      break;
    case SamplingMeasure::DensityKind::piecewise_truncnorm:
      out["density"] = {{"kind", "piecewise_truncnorm"},
                        {"intervals", m.truncnorm_pieces().intervals},
                        {"time_std", m.truncnorm_pieces().time_std}};
      break;
    case SamplingMeasure::DensityKind::custom:
      throw InputError("measures with a custom density cannot be serialized");
  }
  return out;
}

/// Reads {"atoms": [...], "density": {"kind": ...}}. When both parts are
/// present the result is renormalized to mass one.
inline SamplingMeasure measure_from_json(const json& j) {
  std::vector<Atom> atoms;
  if (j.contains("atoms")) {
    for (const auto& a : j.at("atoms")) atoms.push_back({a.at("tau").get<double>(), a.at("weight").get<double>()});
  }
  const std::string kind = j.contains("density") ? j.at("density").at("kind").get<std::string>() : "zero";
  if (kind == "zero") {
    if (atoms.empty()) throw InputError("measure has neither density nor atoms");
    return SamplingMeasure::from_parts(nullptr, std::move(atoms));
  }
  if (kind == "uniform") {
    if (atoms.empty()) return SamplingMeasure::lebesgue();
    return SamplingMeasure::from_parts([](double) { return 1.0; }, std::move(atoms));
  }
  if (kind == "piecewise_truncnorm") {
    const int n = j.at("density").at("intervals").get<int>();
    const double s = j.at("density").at("time_std").get<double>();
    auto base = SamplingMeasure::piecewise_truncnorm(n, s);
    if (atoms.empty()) return base;
    auto density = [base](double tau) { return base.density(tau); };
    return SamplingMeasure::from_parts(density, std::move(atoms), base.breakpoints());
  }
  throw InputError("unknown density kind '" + kind + "'");
}

inline json triple_to_json(const ParamTriple& t) {
  return {{"t0", t.t0},
          {"x0", std::vector<double>(t.x0.data(), t.x0.data() + t.x0.size())},
          {"theta", std::vector<double>(t.theta.data(), t.theta.data() + t.theta.size())}};
}

inline ParamTriple triple_from_json(const json& j) {
  const auto x0 = j.at("x0").get<std::vector<double>>();
  const auto theta = j.at("theta").get<std::vector<double>>();
  return {j.at("t0").get<double>(), Eigen::Map<const Vector>(x0.data(), static_cast<Eigen::Index>(x0.size())),
          Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()))};
}

/// Measurement data file plus the provenance needed to rebuild the experiment.
struct DataFile {
  std::string model;
  Sample sample;
  std::uint64_t seed = 0;
  std::optional<ParamTriple> truth;
};

inline json data_to_json(const DataFile& data) {
  json j;
  if (!data.model.empty()) j["model"] = data.model;
  j["seed"] = data.seed;
  if (data.truth) j["truth"] = triple_to_json(*data.truth);
  if (const auto* c = std::get_if<ContinuousSample>(&data.sample)) {
    j["mode"] = "continuous";
    j["obs_index"] = c->obs_index;
    j["noise_std"] = c->noise_std;
    j["noise_mode"] = c->noise_mode == NoiseMode::frozen ? "frozen" : "per_evaluation";
    j["grid"] = c->grid;
    j["values"] = c->values;
  } else {
    const auto& d = std::get<DiscreteSample>(data.sample);
    j["mode"] = "discrete";
    j["obs_index"] = d.obs_index;
    j["noise_std"] = d.noise_std;
    j["intervals"] = d.n_intervals;
    j["time_std"] = d.time_std;
    j["sample_times"] = d.sample_times;
    j["sample_values"] = d.sample_values;
  }
  return j;
}

inline DataFile data_from_json(const json& j) {
  DataFile data;
  data.model = j.value("model", std::string{});
  data.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("truth")) data.truth = triple_from_json(j.at("truth"));
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "continuous") {
    ContinuousSample c;
    c.obs_index = j.at("obs_index").get<int>();
    c.noise_std = j.value("noise_std", 0.0);
    c.grid = j.at("grid").get<std::vector<double>>();
    c.values = j.at("values").get<std::vector<double>>();
    if (c.grid.size() < 2 || c.grid.size() != c.values.size()) {
      throw InputError("continuous data needs matching grid and values of length >= 2");
    }
    if (j.value("noise_mode", std::string("frozen")) == "per_evaluation") {
      c.enable_fresh_noise(data.seed ^ 0x9e3779b97f4a7c15ULL);
    }
    data.sample = std::move(c);
  } else if (mode == "discrete") {
    DiscreteSample d;
    d.obs_index = j.at("obs_index").get<int>();
    d.noise_std = j.value("noise_std", 0.0);
    d.n_intervals = j.at("intervals").get<int>();
    d.time_std = j.at("time_std").get<double>();
    d.sample_times = j.at("sample_times").get<std::vector<double>>();
    d.sample_values = j.at("sample_values").get<std::vector<double>>();
    if (d.n_intervals < 1 || d.sample_values.size() != static_cast<std::size_t>(d.n_intervals)) {
      throw InputError("discrete data needs one sample value per interval");
    }
    data.sample = std::move(d);
  } else {
    throw InputError("unknown data mode '" + mode + "'");
  }
  return data;
}

/// Sampling measure that belongs to a data file: Lebesgue for continuous
/// data, the piecewise truncated-normal weights for discrete data.
inline SamplingMeasure companion_measure(const Sample& sample) {
  if (const auto* d = std::get_if<DiscreteSample>(&sample)) {
    return SamplingMeasure::piecewise_truncnorm(d->n_intervals, d->time_std);
  }
  return SamplingMeasure::lebesgue();
}

inline std::vector<std::string> triple_column_names(Eigen::Index d, Eigen::Index k) {
  std::vector<std::string> names{"t0"};
  for (Eigen::Index i = 0; i < d; ++i) names.push_back("x0_" + std::to_string(i));
  for (Eigen::Index i = 0; i < k; ++i) names.push_back("theta_" + std::to_string(i));
  return names;
}

/// CSV with columns step, loss, grad_norm, then the flat triple.
inline void write_trace_csv(std::ostream& os, const FitTrace& trace) {
  if (trace.records.empty()) return;
  const auto& first = trace.records.front().triple;
  os << "step,loss,grad_norm";
  for (const auto& name : triple_column_names(first.x0.size(), first.theta.size())) os << ',' << name;
  os << '\n';
  for (const auto& rec : trace.records) {
    os << rec.step << ',' << format_double(rec.loss) << ',' << format_double(rec.grad_norm);
    const Vector flat = rec.triple.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) os << ',' << format_double(flat[i]);
    os << '\n';
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open '" + path + "' for reading");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("malformed JSON in '" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::ios_base::failure("failed writing '" + path + "'");
}

}  // namespace adjfit::io
