#include "ivddpc/json_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "ivddpc/error.hpp"

namespace ivddpc {

namespace {

const json& field(const json& j, const char* key, const std::string& what) {
  if (!j.is_object() || !j.contains(key)) {
    throw std::invalid_argument(what + ": missing field '" + key + "'");
  }
  return j.at(key);
}

}  // namespace

json matrix_to_json(const MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    data.push_back(std::move(row));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

MatrixXd matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + ": matrix must be an object with rows, cols, data");
  const auto rows = field(j, "rows", what).get<long>();
  const auto cols = field(j, "cols", what).get<long>();
  const json& data = field(j, "data", what);
  if (rows < 0 || cols < 0) throw std::invalid_argument(what + ": negative dimensions");
  if (!data.is_array() || static_cast<long>(data.size()) != rows) {
    throw DimensionError(what + ": data must hold " + std::to_string(rows) + " rows");
  }
  MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    const json& row = data[static_cast<size_t>(i)];
    if (!row.is_array() || static_cast<long>(row.size()) != cols) {
      throw DimensionError(what + ": row " + std::to_string(i) + " must hold " + std::to_string(cols) + " entries");
    }
    for (long k = 0; k < cols; ++k) {
      const json& v = row[static_cast<size_t>(k)];
      if (!v.is_number()) throw std::invalid_argument(what + ": non-numeric entry");
      m(i, k) = v.get<double>();
    }
  }
  return m;
}

json bounds_to_json(const VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i))) out.push_back(v(i));
    else out.push_back(nullptr);
  }
  return out;
}

VectorXd bounds_from_json(const json& j, double null_value, const std::string& what) {
  if (!j.is_array()) throw std::invalid_argument(what + ": expected an array");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) {
    if (j[i].is_null()) v(static_cast<Eigen::Index>(i)) = null_value;
    else if (j[i].is_number()) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    else throw std::invalid_argument(what + ": entries must be numbers or null");
  }
  return v;
}

json to_json(const StateSpaceModel& m) {
  json j{{"A", matrix_to_json(m.A)}, {"B", matrix_to_json(m.B)}, {"C", matrix_to_json(m.C)},
         {"D", matrix_to_json(m.D)}};
  if (m.K) j["K"] = matrix_to_json(*m.K);
  return j;
}

StateSpaceModel model_from_json(const json& j) {
  StateSpaceModel m;
  m.A = matrix_from_json(field(j, "A", "plant"), "plant.A");
  m.B = matrix_from_json(field(j, "B", "plant"), "plant.B");
  m.C = matrix_from_json(field(j, "C", "plant"), "plant.C");
  m.D = matrix_from_json(field(j, "D", "plant"), "plant.D");
  if (j.contains("K") && !j.at("K").is_null()) m.K = matrix_from_json(j.at("K"), "plant.K");
  m.validate();
  return m;
}

json to_json(const ControllerModel& c) {
  return json{{"Ac", matrix_to_json(c.Ac)}, {"Bc", matrix_to_json(c.Bc)},
              {"Cc", matrix_to_json(c.Cc)}, {"Dc", matrix_to_json(c.Dc)}};
}

ControllerModel controller_from_json(const json& j) {
  ControllerModel c;
  c.Ac = matrix_from_json(field(j, "Ac", "controller"), "controller.Ac");
  c.Bc = matrix_from_json(field(j, "Bc", "controller"), "controller.Bc");
  c.Cc = matrix_from_json(field(j, "Cc", "controller"), "controller.Cc");
  c.Dc = matrix_from_json(field(j, "Dc", "controller"), "controller.Dc");
  c.validate();
  return c;
}

json to_json(const Trajectory& t) {
  return json{{"u", matrix_to_json(t.u)}, {"y", matrix_to_json(t.y)}, {"r", matrix_to_json(t.r)},
              {"e", matrix_to_json(t.e)}};
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  t.u = matrix_from_json(field(j, "u", "trajectory"), "trajectory.u");
  t.y = matrix_from_json(field(j, "y", "trajectory"), "trajectory.y");
  t.r = matrix_from_json(field(j, "r", "trajectory"), "trajectory.r");
  t.e = matrix_from_json(field(j, "e", "trajectory"), "trajectory.e");
  t.validate();
  return t;
}

json to_json(const HankelBundle& b) {
  return json{{"past", b.past},
              {"future", b.future},
              {"Up", matrix_to_json(b.Up)},
              {"Yp", matrix_to_json(b.Yp)},
              {"Uf", matrix_to_json(b.Uf)},
              {"Yf", matrix_to_json(b.Yf)},
              {"Rf", matrix_to_json(b.Rf)},
              {"Ef", matrix_to_json(b.Ef)}};
}

HankelBundle bundle_from_json(const json& j) {
  HankelBundle b;
  b.past = field(j, "past", "bundle").get<int>();
  b.future = field(j, "future", "bundle").get<int>();
  b.Up = matrix_from_json(field(j, "Up", "bundle"), "bundle.Up");
  b.Yp = matrix_from_json(field(j, "Yp", "bundle"), "bundle.Yp");
  b.Uf = matrix_from_json(field(j, "Uf", "bundle"), "bundle.Uf");
  b.Yf = matrix_from_json(field(j, "Yf", "bundle"), "bundle.Yf");
  b.Rf = matrix_from_json(field(j, "Rf", "bundle"), "bundle.Rf");
  b.Ef = matrix_from_json(field(j, "Ef", "bundle"), "bundle.Ef");
  const Eigen::Index n = b.Up.cols();
  auto same = [n](const MatrixXd& m) { return m.rows() == 0 || m.cols() == n; };
  if (b.Yp.cols() != n || b.Uf.cols() != n || b.Yf.cols() != n || !same(b.Rf) || !same(b.Ef)) {
    throw DimensionError("bundle: blocks have different column counts");
  }
  b.Zp.resize(b.Up.rows() + b.Yp.rows(), n);
  b.Zp << b.Up, b.Yp;
  return b;
}

json to_json(const InstrumentSet& iv) {
  json j{{"variant", to_string(iv.variant)}, {"svd_tol", iv.svd_tol},
         {"past_rows", iv.past_rows}, {"Phi", matrix_to_json(iv.Phi)}};
  if (iv.Lc) j["Lc"] = matrix_to_json(*iv.Lc);
  return j;
}

InstrumentSet instrument_set_from_json(const json& j) {
  InstrumentSet iv;
  iv.variant = iv_variant_from_string(field(j, "variant", "instrument set").get<std::string>());
  iv.svd_tol = field(j, "svd_tol", "instrument set").get<double>();
  iv.past_rows = field(j, "past_rows", "instrument set").get<Eigen::Index>();
  iv.Phi = matrix_from_json(field(j, "Phi", "instrument set"), "instrument set.Phi");
  if (j.contains("Lc")) iv.Lc = matrix_from_json(j.at("Lc"), "instrument set.Lc");
  return iv;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("cannot parse '" + path + "': " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(1) << '\n';
}

}  // namespace ivddpc
