#include "ivddpc/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ivddpc/error.hpp"

namespace ivddpc {

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// ----------------------------------------------------------- config checks

class Checker {
 public:
  void fail(const std::string& key, const std::string& msg) {
    keys_.push_back(key);
    msgs_.push_back(key + ": " + msg);
  }

  /// Flags unknown and missing keys; returns false if `j` is not an object.
  bool object(const json& j, const std::string& path, const std::set<std::string>& required,
              const std::set<std::string>& optional) {
    if (!j.is_object()) {
      fail(path.empty() ? "<root>" : path, "expected an object");
      return false;
    }
    for (const auto& [k, v] : j.items()) {
      if (!required.count(k) && !optional.count(k)) fail(join(path, k), "unknown key");
    }
    for (const auto& k : required) {
      if (!j.contains(k)) fail(join(path, k), "missing required key");
    }
    return true;
  }

  /// Runs `f`, attributing any exception to `key`.
  template <typename F>
  void guard(const std::string& key, F&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      fail(key, e.what());
    }
  }

  void finish() const {
    if (keys_.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& m : msgs_) msg += "\n  " + m;
    throw ConfigError(msg, keys_);
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

 private:
  std::vector<std::string> keys_;
  std::vector<std::string> msgs_;
};

std::vector<double> number_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw std::invalid_argument("expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw std::invalid_argument(what + ": expected numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ReferenceProgram parse_program(const json& j, const std::string& path, Checker& chk) {
  ReferenceProgram p;
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    chk.fail(path + ".kind", "missing or not a string");
    return p;
  }
  p.kind = j.at("kind").get<std::string>();
  std::set<std::string> req, opt;
  if (p.kind == "staircase") {
    req = {"kind", "period", "duty", "levels"};
    opt = {"offset"};
  } else if (p.kind == "square") {
    req = {"kind", "period", "duty", "amplitude"};
    opt = {"offset", "phase"};
  } else if (p.kind == "white") {
    req = {"kind", "std"};
    opt = {"offset", "hold"};
  } else if (p.kind == "constant") {
    req = {"kind", "value"};
  } else {
    chk.fail(path + ".kind", "unknown reference kind '" + p.kind + "'");
    return p;
  }
  if (!chk.object(j, path, req, opt)) return p;
  chk.guard(path, [&] {
    if (j.contains("period")) p.period = j.at("period").get<int>();
    if (j.contains("duty")) p.duty = j.at("duty").get<double>();
    if (j.contains("levels")) p.levels = number_list(j.at("levels"), "levels");
    if (j.contains("amplitude")) p.amplitude = j.at("amplitude").get<double>();
    if (j.contains("offset")) p.offset = j.at("offset").get<double>();
    if (j.contains("phase")) p.phase = j.at("phase").get<int>();
    if (j.contains("std")) p.std = j.at("std").get<double>();
    if (j.contains("hold")) p.hold = j.at("hold").get<int>();
    if (j.contains("value")) p.value = j.at("value").get<double>();
    if ((p.kind == "staircase" || p.kind == "square") && (p.period < 2 || !(p.duty > 0 && p.duty < 1))) {
      throw std::invalid_argument("period must be >= 2 and duty in (0, 1)");
    }
    if (p.kind == "staircase" && p.levels.empty()) throw std::invalid_argument("levels must not be empty");
    if (p.kind == "white" && (p.std < 0 || p.hold < 1)) throw std::invalid_argument("std must be >= 0 and hold >= 1");
  });
  return p;
}

std::vector<ReferenceProgram> parse_programs(const json& j, const std::string& path, Checker& chk) {
  std::vector<ReferenceProgram> out;
  if (!j.is_array() || j.empty()) {
    chk.fail(path, "expected a non-empty array with one program per output channel");
    return out;
  }
  for (size_t i = 0; i < j.size(); ++i) {
    out.push_back(parse_program(j[i], path + "[" + std::to_string(i) + "]", chk));
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------- references

MatrixXd make_reference(const std::vector<ReferenceProgram>& channels, Eigen::Index length,
                        std::uint64_t seed) {
  if (length <= 0) throw std::invalid_argument("make_reference: length must be positive");
  MatrixXd r(static_cast<Eigen::Index>(channels.size()), length);
  for (size_t i = 0; i < channels.size(); ++i) {
    const ReferenceProgram& p = channels[i];
    VectorXd base;
    if (p.kind == "staircase") {
      base = excitation_reference(p.period, p.duty, p.levels).array() + p.offset;
    } else if (p.kind == "square") {
      base = square_wave(p.period, p.duty, p.amplitude, p.period, p.phase).array() + p.offset;
    } else if (p.kind == "white") {
      GaussianSource src(derive_seed(seed, i, "reference"));
      base.resize(length);
      for (Eigen::Index t = 0; t < length; t += p.hold) {
        const double v = p.offset + p.std * src.next();
        for (Eigen::Index k = t; k < std::min<Eigen::Index>(length, t + p.hold); ++k) base(k) = v;
      }
    } else if (p.kind == "constant") {
      base = VectorXd::Constant(1, p.value);
    } else {
      throw std::invalid_argument("make_reference: unknown kind '" + p.kind + "'");
    }
    for (Eigen::Index t = 0; t < length; ++t) r(static_cast<Eigen::Index>(i), t) = base(t % base.size());
  }
  return r;
}

// ----------------------------------------------------------------- config

ControlTask ExperimentConfig::task() const {
  const MatrixXd ref = make_reference(task_reference, steps + future, derive_seed(base_seed, 0, "task-reference"));
  MatrixXd warm(warmup_reference.size(), past);
  warm.colwise() = warmup_reference;
  ControlTask t = ControlTask::make(past, future, steps, q_diag, r_diag, ref, warm);
  t.u_min = u_min;
  t.u_max = u_max;
  t.y_min = y_min;
  t.y_max = y_max;
  t.validate();
  return t;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  Checker chk;
  ExperimentConfig c;
  if (!chk.object(j, "",
                  {"schema_version", "name", "plant", "controller", "noise", "collection", "horizons",
                   "task", "variants", "replicates", "base_seed"},
                  {"lambdas", "rddpc_norm", "solver", "svd_tol", "traces", "description"})) {
    chk.finish();
  }
  c.source = j;

  chk.guard("schema_version", [&] {
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kSchemaVersion) {
      throw std::invalid_argument("unsupported version, expected " + std::to_string(kSchemaVersion));
    }
  });
  chk.guard("name", [&] { if (j.contains("name")) c.name = j.at("name").get<std::string>(); });

  bool have_plant = false, have_ctrl = false;
  if (j.contains("plant") && chk.object(j.at("plant"), "plant", {"A", "B", "C", "D"}, {"K"})) {
    chk.guard("plant", [&] {
      c.plant = model_from_json(j.at("plant"));
      have_plant = true;
    });
  }
  if (j.contains("controller") && chk.object(j.at("controller"), "controller", {"Ac", "Bc", "Cc", "Dc"}, {})) {
    chk.guard("controller", [&] {
      c.controller = controller_from_json(j.at("controller"));
      have_ctrl = true;
    });
  }
  const Eigen::Index m = have_plant ? c.plant.inputs() : -1;
  const Eigen::Index p = have_plant ? c.plant.outputs() : -1;
  if (have_plant && have_ctrl) {
    chk.guard("controller", [&] { c.controller.validate_against(c.plant); });
  }

  if (j.contains("noise")) {
    const json& n = j.at("noise");
    if (chk.object(n, "noise", {}, {"snr_db", "noise_free", "kalman_qw", "shape"})) {
      chk.guard("noise.snr_db", [&] { if (n.contains("snr_db")) c.snr_db = number_list(n.at("snr_db"), "snr_db"); });
      chk.guard("noise.noise_free", [&] { if (n.contains("noise_free")) c.noise_free = n.at("noise_free").get<bool>(); });
      chk.guard("noise.kalman_qw", [&] {
        if (n.contains("kalman_qw")) c.kalman_qw = n.at("kalman_qw").get<double>();
        if (!(c.kalman_qw > 0)) throw std::invalid_argument("must be positive");
      });
      chk.guard("noise.shape", [&] {
        if (n.contains("shape")) c.noise_shape = to_vector(number_list(n.at("shape"), "shape"));
        if ((c.noise_shape.array() < 0).any()) throw std::invalid_argument("entries must be non-negative");
      });
      if (c.noise_free == !c.snr_db.empty()) {
        chk.fail("noise.snr_db", "give either a non-empty snr_db list or noise_free: true");
      }
      for (double s : c.snr_db) {
        if (!std::isfinite(s)) chk.fail("noise.snr_db", "SNR targets must be finite");
      }
    }
  }
  if (have_plant) {
    if (c.noise_shape.size() == 0) c.noise_shape = VectorXd::Ones(p);
    else if (c.noise_shape.size() != p) chk.fail("noise.shape", "needs one entry per output channel");
  }

  if (j.contains("collection")) {
    const json& col = j.at("collection");
    if (chk.object(col, "collection", {"length", "reference"}, {})) {
      chk.guard("collection.length", [&] { c.collection_length = col.at("length").get<int>(); });
      c.collection_reference = parse_programs(col.at("reference"), "collection.reference", chk);
      if (have_plant && static_cast<Eigen::Index>(c.collection_reference.size()) != p) {
        chk.fail("collection.reference", "needs one program per output channel");
      }
    }
  }

  if (j.contains("horizons") && chk.object(j.at("horizons"), "horizons", {"past", "future"}, {})) {
    const json& h = j.at("horizons");
    for (auto [key, dst] : {std::pair{"past", &c.past}, std::pair{"future", &c.future}}) {
      chk.guard(std::string("horizons.") + key, [&] {
        if (!h.contains(key)) return;
        *dst = h.at(key).get<int>();
        if (*dst < 1) throw std::invalid_argument("must be a positive integer");
      });
    }
    if (c.collection_length > 0 && c.collection_length < c.past + c.future) {
      chk.fail("collection.length", "shorter than past + future");
    }
  }

  if (j.contains("task")) {
    const json& t = j.at("task");
    if (chk.object(t, "task", {"steps", "q", "r", "reference"},
                   {"warmup_reference", "u_min", "u_max", "y_min", "y_max"})) {
      chk.guard("task.steps", [&] {
        c.steps = t.at("steps").get<int>();
        if (c.steps < 1) throw std::invalid_argument("must be positive");
      });
      chk.guard("task.q", [&] { c.q_diag = to_vector(number_list(t.at("q"), "q")); });
      chk.guard("task.r", [&] { c.r_diag = to_vector(number_list(t.at("r"), "r")); });
      c.task_reference = parse_programs(t.at("reference"), "task.reference", chk);
      if (have_plant) {
        if (c.q_diag.size() != p || (c.q_diag.array() <= 0).any()) chk.fail("task.q", "needs one positive weight per output");
        if (c.r_diag.size() != m || (c.r_diag.array() <= 0).any()) chk.fail("task.r", "needs one positive weight per input");
        if (static_cast<Eigen::Index>(c.task_reference.size()) != p) chk.fail("task.reference", "needs one program per output channel");
        c.warmup_reference = VectorXd::Zero(p);
        c.u_min = VectorXd::Constant(m, -kInf);
        c.u_max = VectorXd::Constant(m, kInf);
        c.y_min = VectorXd::Constant(p, -kInf);
        c.y_max = VectorXd::Constant(p, kInf);
        auto bound = [&](const char* key, VectorXd& dst, double fill, Eigen::Index len) {
          chk.guard(std::string("task.") + key, [&] {
            if (!t.contains(key)) return;
            dst = bounds_from_json(t.at(key), fill, key);
            if (dst.size() != len) throw std::invalid_argument("wrong length");
          });
        };
        chk.guard("task.warmup_reference", [&] {
          if (!t.contains("warmup_reference")) return;
          c.warmup_reference = to_vector(number_list(t.at("warmup_reference"), "warmup_reference"));
          if (c.warmup_reference.size() != p) throw std::invalid_argument("needs one value per output channel");
        });
        bound("u_min", c.u_min, -kInf, m);
        bound("u_max", c.u_max, kInf, m);
        bound("y_min", c.y_min, -kInf, p);
        bound("y_max", c.y_max, kInf, p);
        if (c.u_min.size() == m && c.u_max.size() == m && (c.u_min.array() > c.u_max.array()).any()) {
          chk.fail("task.u_min", "exceeds u_max");
        }
        if (c.y_min.size() == p && c.y_max.size() == p && (c.y_min.array() > c.y_max.array()).any()) {
          chk.fail("task.y_min", "exceeds y_max");
        }
      }
    }
  }

  chk.guard("variants", [&] {
    if (!j.contains("variants")) return;
    if (!j.at("variants").is_array() || j.at("variants").empty()) throw std::invalid_argument("expected a non-empty array");
    for (const auto& v : j.at("variants")) c.variants.push_back(variant_tag_from_string(v.get<std::string>()));
  });
  const bool wants_rddpc = std::find(c.variants.begin(), c.variants.end(), VariantTag::RddpcIv) != c.variants.end();
  chk.guard("lambdas", [&] {
    if (j.contains("lambdas")) c.lambdas = number_list(j.at("lambdas"), "lambdas");
    for (double l : c.lambdas) {
      if (!(l >= 0) || !std::isfinite(l)) throw std::invalid_argument("entries must be finite and non-negative");
    }
  });
  if (wants_rddpc && c.lambdas.empty()) chk.fail("lambdas", "rddpc_iv needs a non-empty lambda list");
  chk.guard("rddpc_norm", [&] {
    if (j.contains("rddpc_norm")) c.rddpc_norm = j.at("rddpc_norm").get<int>();
    if (c.rddpc_norm != 1 && c.rddpc_norm != 2) throw std::invalid_argument("must be 1 or 2");
  });
  chk.guard("replicates", [&] {
    if (!j.contains("replicates")) return;
    c.replicates = j.at("replicates").get<int>();
    if (c.replicates < 1) throw std::invalid_argument("must be positive");
  });
  chk.guard("base_seed", [&] { if (j.contains("base_seed")) c.base_seed = j.at("base_seed").get<std::uint64_t>(); });
  chk.guard("svd_tol", [&] {
    if (j.contains("svd_tol")) c.svd_tol = j.at("svd_tol").get<double>();
    if (!(c.svd_tol > 0)) throw std::invalid_argument("must be positive");
  });
  chk.guard("traces", [&] { if (j.contains("traces")) c.traces = j.at("traces").get<bool>(); });
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    if (chk.object(s, "solver", {}, {"rho", "sigma", "alpha", "eps_abs", "eps_rel", "max_iter", "polish", "adaptive_rho"})) {
      chk.guard("solver", [&] {
        if (s.contains("rho")) c.solver.rho = s.at("rho").get<double>();
        if (s.contains("sigma")) c.solver.sigma = s.at("sigma").get<double>();
        if (s.contains("alpha")) c.solver.alpha = s.at("alpha").get<double>();
        if (s.contains("eps_abs")) c.solver.eps_abs = s.at("eps_abs").get<double>();
        if (s.contains("eps_rel")) c.solver.eps_rel = s.at("eps_rel").get<double>();
        if (s.contains("max_iter")) c.solver.max_iter = s.at("max_iter").get<int>();
        if (s.contains("polish")) c.solver.polish = s.at("polish").get<bool>();
        if (s.contains("adaptive_rho")) c.solver.adaptive_rho = s.at("adaptive_rho").get<bool>();
        c.solver.validate();
      });
    }
  }
  chk.finish();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file '" + path + "' does not exist", {"config"});
  json j;
  try {
    j = read_json_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), {"config"});
  }
  return from_json(j);
}

std::string fingerprint(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, const std::string& role) {
  return splitmix64(base ^ splitmix64(index ^ splitmix64(fnv1a(role))));
}

// ------------------------------------------------------------------ noise

StateSpaceModel plant_for_noise(const StateSpaceModel& plant, double sigma, const VectorXd& shape,
                                double qw) {
  if (plant.K) return plant;
  if (shape.size() != plant.outputs()) throw DimensionError("plant_for_noise: noise shape length");
  StateSpaceModel out = plant;
  VectorXd rv = (sigma * shape).array().square();
  rv = rv.cwiseMax(1e-12);
  out.K = kalman_gain(plant, qw * MatrixXd::Identity(plant.states(), plant.states()),
                      MatrixXd(rv.asDiagonal()));
  out.validate();
  return out;
}

double measure_snr(const StateSpaceModel& plant, const ControllerModel& ctrl, const MatrixXd& r,
                   double sigma, const VectorXd& shape, std::uint64_t seed) {
  if (!(sigma > 0)) throw std::invalid_argument("measure_snr: sigma must be positive");
  const VectorXd x0 = VectorXd::Zero(plant.states()), xc0 = VectorXd::Zero(ctrl.states());
  const MatrixXd zero = MatrixXd::Zero(plant.outputs(), r.cols());
  const Trajectory clean = simulate_closed_loop(plant, ctrl, r, zero, x0, xc0);
  const MatrixXd e = gaussian_noise(seed, sigma * shape, r.cols());
  const Trajectory noisy = simulate_closed_loop(plant, ctrl, r, e, x0, xc0);
  auto power = [](const MatrixXd& m) {
    const VectorXd mean = m.rowwise().mean();
    return (m.colwise() - mean).squaredNorm() / static_cast<double>(m.cols());
  };
  const double ps = power(clean.y), pn = power(noisy.y - clean.y);
  if (!(ps > 0)) throw std::invalid_argument("measure_snr: noise-free output has zero variance");
  return 10.0 * std::log10(ps / pn);
}

SnrCalibration calibrate_snr(const std::function<StateSpaceModel(double)>& plant_of,
                             const ControllerModel& ctrl, const MatrixXd& r, double target_db,
                             const VectorXd& shape, std::uint64_t seed, double tol_db) {
  if (!std::isfinite(target_db)) throw std::invalid_argument("calibrate_snr: target must be finite");
  auto snr = [&](double s) { return measure_snr(plant_of(s), ctrl, r, s, shape, seed); };
  double lo = std::log(1e-8), hi = std::log(1e3);
  const double s_lo = snr(std::exp(lo)), s_hi = snr(std::exp(hi));
  if (!(s_lo > target_db && s_hi < target_db)) {
    std::ostringstream os;
    os << "calibrate_snr: target " << target_db << " dB not bracketed by [" << s_hi << ", " << s_lo << "] dB";
    throw ConvergenceError(os.str(), std::min(std::abs(s_lo - target_db), std::abs(s_hi - target_db)));
  }
  SnrCalibration out;
  for (int it = 1; it <= 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double s = snr(std::exp(mid));
    out = {std::exp(mid), s, it};
    if (std::abs(s - target_db) <= tol_db) return out;
    if (s > target_db) lo = mid;
    else hi = mid;
  }
  throw ConvergenceError("calibrate_snr: bisection did not reach the tolerance", std::abs(out.measured_db - target_db));
}

SnrCalibration calibrate_snr(const StateSpaceModel& plant, const ControllerModel& ctrl,
                             const MatrixXd& r, double target_db, std::uint64_t seed) {
  const VectorXd shape = VectorXd::Ones(plant.outputs());
  return calibrate_snr([&](double) { return plant; }, ctrl, r, target_db, shape, seed);
}

std::vector<SnrCalibration> calibrate_levels(const ExperimentConfig& cfg) {
  if (cfg.noise_free) return {SnrCalibration{0.0, kInf, 0}};
  const MatrixXd r = make_reference(cfg.collection_reference, cfg.collection_length,
                                    derive_seed(cfg.base_seed, 0, "reference"));
  const std::uint64_t seed = derive_seed(cfg.base_seed, 0, "calibration");
  auto plant_of = [&](double s) { return plant_for_noise(cfg.plant, s, cfg.noise_shape, cfg.kalman_qw); };
  std::vector<SnrCalibration> out;
  for (double target : cfg.snr_db) {
    out.push_back(calibrate_snr(plant_of, cfg.controller, r, target, cfg.noise_shape, seed));
  }
  return out;
}

// ---------------------------------------------------------------- collect

Dataset collect(const ExperimentConfig& cfg, double snr_db, double sigma, int replicate,
                const std::optional<std::string>& cache_dir) {
  Dataset d;
  d.snr_db = snr_db;
  d.sigma = sigma;
  d.replicate = replicate;
  d.seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(replicate), "offline");
  d.plant = plant_for_noise(cfg.plant, sigma, cfg.noise_shape, cfg.kalman_qw);
  const std::uint64_t ref_seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(replicate), "reference");
  const json key{{"plant", to_json(d.plant)},
                 {"controller", to_json(cfg.controller)},
                 {"collection", cfg.source.at("collection")},
                 {"horizons", {{"past", cfg.past}, {"future", cfg.future}}},
                 {"sigma", sigma},
                 {"shape", std::vector<double>(cfg.noise_shape.data(), cfg.noise_shape.data() + cfg.noise_shape.size())},
                 {"noise_seed", d.seed},
                 {"reference_seed", ref_seed},
                 {"prng", "mt19937_64+box-muller"}};
  d.fingerprint = fingerprint(key);

  fs::path data_file, bundle_file;
  if (cache_dir) {
    data_file = fs::path(*cache_dir) / ("dataset_" + d.fingerprint + ".json");
    bundle_file = fs::path(*cache_dir) / ("bundle_" + d.fingerprint + ".json");
    if (fs::exists(data_file) && fs::exists(bundle_file)) {
      const json dj = read_json_file(data_file.string());
      if (dj.value("fingerprint", "") == d.fingerprint) {
        d.traj = trajectory_from_json(dj.at("trajectory"));
        d.bundle = bundle_from_json(read_json_file(bundle_file.string()));
        d.cache_hit = true;
        return d;
      }
    }
  }

  const MatrixXd r = make_reference(cfg.collection_reference, cfg.collection_length, ref_seed);
  const MatrixXd e = sigma > 0 ? gaussian_noise(d.seed, sigma * cfg.noise_shape, cfg.collection_length)
                               : MatrixXd::Zero(d.plant.outputs(), cfg.collection_length);
  try {
    d.traj = simulate_closed_loop(d.plant, cfg.controller, r, e, VectorXd::Zero(d.plant.states()),
                                  VectorXd::Zero(cfg.controller.states()));
  } catch (const WellPosednessError& ex) {
    throw WellPosednessError(std::string("collect: ") + ex.what());
  }
  if (!d.traj.y.allFinite() || !d.traj.u.allFinite()) {
    throw std::runtime_error("collect: closed-loop simulation diverged (is the loop stable?)");
  }
  d.bundle = build_bundle(d.traj, cfg.past, cfg.future);

  if (cache_dir) {
    fs::create_directories(*cache_dir);
    json dj{{"fingerprint", d.fingerprint}, {"key", key}, {"trajectory", to_json(d.traj)}};
    // Written under a temporary name first so an interrupted run never leaves
    // a file that looks complete.
    const fs::path tmp_d = data_file.string() + ".tmp", tmp_b = bundle_file.string() + ".tmp";
    write_json_file(tmp_b.string(), to_json(d.bundle));
    write_json_file(tmp_d.string(), dj);
    fs::rename(tmp_b, bundle_file);
    fs::rename(tmp_d, data_file);
  }
  return d;
}

// ------------------------------------------------------------ campaigns

namespace {

struct LazyInstruments {
  const HankelBundle& bundle;
  const ControllerModel& ctrl;
  double svd_tol;
  std::optional<CoprimeFactors> factors;
  std::map<IvVariant, InstrumentSet> sets;

  InstrumentSet& get(IvVariant v) {
    auto it = sets.find(v);
    if (it != sets.end()) return it->second;
    const bool needs_lcf = v == IvVariant::LcfOnly || v == IvVariant::Combined;
    if (needs_lcf && !factors) factors = lcf(ctrl);
    InstrumentSet iv = build_iv(bundle, v, needs_lcf ? factors : std::nullopt, svd_tol);
    predictor(bundle, iv);
    return sets.emplace(v, std::move(iv)).first->second;
  }
};

std::string trace_header(Eigen::Index m, Eigen::Index p) {
  std::string h = "replicate,snr_db,variant,lambda,t,phase";
  for (Eigen::Index i = 0; i < p; ++i) h += ",r" + std::to_string(i);
  for (Eigen::Index i = 0; i < m; ++i) h += ",u" + std::to_string(i);
  for (Eigen::Index i = 0; i < p; ++i) h += ",y" + std::to_string(i);
  return h + ",plan_cost";
}

std::string trace_lines(const RecordRow& row, const RunRecord& rec) {
  std::string out;
  const Trajectory& tr = rec.traj;
  for (Eigen::Index t = 0; t < tr.length(); ++t) {
    out += std::to_string(row.replicate) + "," + fmt_double(row.snr_db) + "," + row.variant + "," +
           fmt_double(row.lambda) + "," + std::to_string(t + 1) + "," +
           (t < rec.warmup ? "warmup" : "control");
    for (Eigen::Index i = 0; i < tr.r.rows(); ++i) out += "," + fmt_double(tr.r(i, t));
    for (Eigen::Index i = 0; i < tr.u.rows(); ++i) out += "," + fmt_double(tr.u(i, t));
    for (Eigen::Index i = 0; i < tr.y.rows(); ++i) out += "," + fmt_double(tr.y(i, t));
    out += "," + fmt_double(rec.plan_cost[static_cast<size_t>(t)]) + "\n";
  }
  return out;
}

}  // namespace

std::vector<std::pair<RecordRow, RunRecord>> run_dataset(const ExperimentConfig& cfg,
                                                         const Dataset& data) {
  const ControlTask task = cfg.task();
  const std::uint64_t run_seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(data.replicate), "online");
  const Eigen::Index total = task.past + task.steps;
  const MatrixXd noise = data.sigma > 0 ? gaussian_noise(run_seed, data.sigma * cfg.noise_shape, total)
                                        : MatrixXd::Zero(data.plant.outputs(), total);
  LazyInstruments ivs{data.bundle, cfg.controller, cfg.svd_tol, std::nullopt, {}};

  std::vector<std::pair<RecordRow, RunRecord>> out;
  auto base_row = [&](VariantTag tag, double lambda) {
    RecordRow row;
    row.fingerprint = data.fingerprint;
    row.snr_db = data.snr_db;
    row.sigma = data.sigma;
    row.replicate = data.replicate;
    row.data_seed = data.seed;
    row.run_seed = run_seed;
    row.variant = to_string(tag);
    row.lambda = lambda;
    return row;
  };
  auto execute = [&](VariantTag tag, double lambda) {
    RecordRow row = base_row(tag, lambda);
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    try {
      std::unique_ptr<Policy> policy;
      switch (tag) {
        case VariantTag::Oracle:
          policy = std::make_unique<OraclePolicy>(data.plant, task, cfg.solver);
          break;
        case VariantTag::LoopBaseline:
          break;
        case VariantTag::RddpcIv:
          policy = std::make_unique<RddpcPolicy>(data.bundle, ivs.get(IvVariant::Combined), task, lambda,
                                                 cfg.rddpc_norm, cfg.solver);
          break;
        default:
          policy = std::make_unique<PredictorPolicy>(ivs.get(*instrument_for(tag)), task, cfg.solver);
      }
      rec = receding_horizon_run(data.plant, policy.get(), task, noise, cfg.controller, row.variant);
    } catch (const std::exception& e) {
      rec.variant = row.variant;
      rec.failed = true;
      rec.error = e.what();
      rec.J = kNaN;
    }
    row.J = rec.J;
    row.failed = rec.failed;
    row.error = rec.error;
    for (int it : rec.iterations) row.qp_iterations += it;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.emplace_back(std::move(row), std::move(rec));
  };
  for (VariantTag tag : cfg.variants) {
    if (tag == VariantTag::RddpcIv) {
      for (double l : cfg.lambdas) execute(tag, l);
    } else {
      execute(tag, kNaN);
    }
  }
  return out;
}

std::string records_csv_header() {
  return "fingerprint,snr_db,sigma,replicate,data_seed,run_seed,variant,lambda,J,failed,qp_iterations,error";
}

std::string to_csv(const RecordRow& r) {
  std::ostringstream os;
  os << r.fingerprint << ',' << fmt_double(r.snr_db) << ',' << fmt_double(r.sigma) << ','
     << r.replicate << ',' << r.data_seed << ',' << r.run_seed << ',' << r.variant << ','
     << fmt_double(r.lambda) << ',' << fmt_double(r.J) << ',' << (r.failed ? 1 : 0) << ','
     << r.qp_iterations << ',' << csv_field(r.error);
  return os.str();
}

std::vector<RecordRow> read_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != records_csv_header()) {
    throw std::runtime_error("'" + path + "' is not a records file");
  }
  std::vector<RecordRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 12 fields");
    RecordRow r;
    r.fingerprint = f[0];
    r.snr_db = std::strtod(f[1].c_str(), nullptr);
    r.sigma = std::strtod(f[2].c_str(), nullptr);
    r.replicate = std::stoi(f[3]);
    r.data_seed = std::stoull(f[4]);
    r.run_seed = std::stoull(f[5]);
    r.variant = f[6];
    r.lambda = std::strtod(f[7].c_str(), nullptr);
    r.J = std::strtod(f[8].c_str(), nullptr);
    r.failed = f[9] == "1";
    r.qp_iterations = std::stol(f[10]);
    r.error = f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<RecordRow> monte_carlo(const ExperimentConfig& cfg, const CampaignOptions& opts) {
  if (opts.jobs < 1) throw std::invalid_argument("monte_carlo: jobs must be positive");
  const std::vector<SnrCalibration> levels = calibrate_levels(cfg);
  const std::vector<double> snrs = cfg.noise_free ? std::vector<double>{kInf} : cfg.snr_db;

  struct Job {
    size_t level;
    int replicate;
  };
  std::vector<Job> jobs;
  for (size_t l = 0; l < levels.size(); ++l) {
    if (opts.only_replicate) {
      jobs.push_back({l, *opts.only_replicate});
    } else {
      for (int rep = 0; rep < cfg.replicates; ++rep) jobs.push_back({l, rep});
    }
  }

  std::ofstream records, times, traces;
  const bool want_traces = cfg.traces || opts.only_replicate.has_value();
  std::string trace_name;
  if (opts.out_dir) {
    fs::create_directories(*opts.out_dir);
    records.open(fs::path(*opts.out_dir) / "records.csv");
    times.open(fs::path(*opts.out_dir) / "run_times.csv");
    if (!records || !times) throw std::runtime_error("cannot write to '" + *opts.out_dir + "'");
    records << records_csv_header() << '\n';
    times << "replicate,snr_db,variant,lambda,wall_seconds\n";
    if (want_traces) {
      trace_name = "trace_" + fingerprint(cfg.source) + ".csv";
      traces.open(fs::path(*opts.out_dir) / trace_name);
      traces << trace_header(cfg.plant.inputs(), cfg.plant.outputs()) << '\n';
    }
  }

  using Result = std::vector<std::pair<RecordRow, RunRecord>>;
  std::vector<std::optional<Result>> results(jobs.size());
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<size_t> next{0};

  auto work = [&] {
    for (;;) {
      const size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      const Job& job = jobs[k];
      Result res;
      try {
        Dataset d = collect(cfg, snrs[job.level], levels[job.level].sigma, job.replicate);
        res = run_dataset(cfg, d);
      } catch (const std::exception& e) {
        // Collection failed: every run of this dataset is recorded as failed.
        for (VariantTag tag : cfg.variants) {
          const auto n = tag == VariantTag::RddpcIv ? cfg.lambdas.size() : 1;
          for (size_t i = 0; i < n; ++i) {
            RecordRow row;
            row.snr_db = snrs[job.level];
            row.sigma = levels[job.level].sigma;
            row.replicate = job.replicate;
            row.data_seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(job.replicate), "offline");
            row.run_seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(job.replicate), "online");
            row.variant = to_string(tag);
            row.lambda = tag == VariantTag::RddpcIv ? cfg.lambdas[i] : kNaN;
            row.J = kNaN;
            row.failed = true;
            row.error = e.what();
            RunRecord rec;
            rec.failed = true;
            res.emplace_back(std::move(row), std::move(rec));
          }
        }
      }
      {
        std::lock_guard<std::mutex> lock(mu);
        results[k] = std::move(res);
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  const int workers = std::min<int>(opts.jobs, static_cast<int>(jobs.size()));
  for (int i = 0; i < workers; ++i) pool.emplace_back(work);

  // Single collector: emits job k only after jobs 0..k-1, so files do not
  // depend on scheduling.
  std::vector<RecordRow> rows;
  for (size_t k = 0; k < jobs.size(); ++k) {
    Result res;
    {
      std::unique_lock<std::mutex> lock(mu);
      cv.wait(lock, [&] { return results[k].has_value(); });
      res = std::move(*results[k]);
      results[k].reset();
    }
    for (auto& [row, rec] : res) {
      if (records.is_open()) {
        records << to_csv(row) << '\n';
        times << row.replicate << ',' << fmt_double(row.snr_db) << ',' << row.variant << ','
              << fmt_double(row.lambda) << ',' << fmt_double(row.wall_seconds) << '\n';
        if (traces.is_open()) traces << trace_lines(row, rec);
      }
      rows.push_back(std::move(row));
    }
    if (records.is_open()) {
      records.flush();
      times.flush();
    }
  }
  for (auto& t : pool) t.join();
  return rows;
}

// -------------------------------------------------------------- summaries

double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.empty()) throw std::invalid_argument("quantile_sorted: empty data");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile_sorted: q must lie in [0, 1]");
  const double pos = q * static_cast<double>(s.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + frac * (s[hi] - s[lo]);
}

std::vector<SummaryRow> summarize(const std::vector<RecordRow>& records) {
  if (records.empty()) throw std::invalid_argument("summarize: no records");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RecordRow*>> groups;
  for (const auto& r : records) {
    const std::string key = fmt_double(r.snr_db) + "|" + r.variant + "|" + fmt_double(r.lambda);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const auto& g = groups.at(key);
    SummaryRow s;
    s.variant = g.front()->variant;
    s.lambda = g.front()->lambda;
    s.snr_db = g.front()->snr_db;
    s.count = static_cast<int>(g.size());
    std::vector<double> v;
    for (const auto* r : g) {
      if (r->failed || !std::isfinite(r->J)) ++s.failures;
      else v.push_back(r->J);
    }
    if (v.empty()) {
      s.mean = s.stddev = s.min = s.q1 = s.median = s.q3 = s.max = kNaN;
    } else {
      std::sort(v.begin(), v.end());
      double sum = 0.0;
      for (double x : v) sum += x;
      s.mean = sum / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      s.min = v.front();
      s.max = v.back();
      s.q1 = quantile_sorted(v, 0.25);
      s.median = quantile_sorted(v, 0.5);
      s.q3 = quantile_sorted(v, 0.75);
    }
    out.push_back(s);
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "snr_db,variant,lambda,count,failures,mean,stddev,min,q1,median,q3,max\n";
  for (const auto& s : rows) {
    out += fmt_double(s.snr_db) + "," + s.variant + "," + fmt_double(s.lambda) + "," +
           std::to_string(s.count) + "," + std::to_string(s.failures) + "," + fmt_double(s.mean) + "," +
           fmt_double(s.stddev) + "," + fmt_double(s.min) + "," + fmt_double(s.q1) + "," +
           fmt_double(s.median) + "," + fmt_double(s.q3) + "," + fmt_double(s.max) + "\n";
  }
  return out;
}

std::vector<TrendStep> lambda_trend(const std::vector<SummaryRow>& rows, double snr_db,
                                    double lambda_min, double lambda_max) {
  std::vector<const SummaryRow*> sel;
  const double lo = lambda_min * (1.0 - 1e-9), hi = lambda_max * (1.0 + 1e-9);
  for (const auto& r : rows) {
    const bool same_snr = (std::isnan(snr_db) && std::isnan(r.snr_db)) || r.snr_db == snr_db;
    if (r.variant == to_string(VariantTag::RddpcIv) && same_snr && r.lambda >= lo && r.lambda <= hi) {
      sel.push_back(&r);
    }
  }
  std::sort(sel.begin(), sel.end(), [](auto* a, auto* b) { return a->lambda > b->lambda; });
  std::vector<TrendStep> out;
  for (size_t i = 1; i < sel.size(); ++i) {
    const SummaryRow& a = *sel[i - 1];
    const SummaryRow& b = *sel[i];
    const double n1 = a.count - a.failures, n2 = b.count - b.failures;
    TrendStep s;
    s.lambda_from = a.lambda;
    s.lambda_to = b.lambda;
    s.mean_from = a.mean;
    s.mean_to = b.mean;
    if (n1 >= 2 && n2 >= 2) {
      const double sp2 = ((n1 - 1) * a.stddev * a.stddev + (n2 - 1) * b.stddev * b.stddev) / (n1 + n2 - 2);
      s.pooled_se = std::sqrt(sp2 * (1.0 / n1 + 1.0 / n2));
    } else {
      s.pooled_se = kNaN;
    }
    s.ok = s.mean_to <= s.mean_from + (std::isnan(s.pooled_se) ? 0.0 : s.pooled_se);
    out.push_back(s);
  }
  return out;
}

}  // namespace ivddpc
