#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "ivddpc/control.hpp"

namespace ivddpc {

using json = nlohmann::json;

/// Matrices are stored as {"rows": r, "cols": c, "data": [[row 0], [row 1], ...]}.
json matrix_to_json(const MatrixXd& m);
/// `what` names the field in error messages.
MatrixXd matrix_from_json(const json& j, const std::string& what);

/// Vectors whose entries may be infinite; +-inf is written as null and read
/// back with the sign given by `null_value`.
json bounds_to_json(const VectorXd& v);
VectorXd bounds_from_json(const json& j, double null_value, const std::string& what);

json to_json(const StateSpaceModel& m);
StateSpaceModel model_from_json(const json& j);

json to_json(const ControllerModel& c);
ControllerModel controller_from_json(const json& j);

json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const json& j);

json to_json(const HankelBundle& b);
HankelBundle bundle_from_json(const json& j);

/// Variant, instrument matrix and solver tolerance; cached products are
/// recomputed by `predictor` after loading.
json to_json(const InstrumentSet& iv);
InstrumentSet instrument_set_from_json(const json& j);

/// Reads a whole file; throws std::runtime_error when it cannot be opened or parsed.
json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

}  // namespace ivddpc
