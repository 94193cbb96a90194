#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ivddpc/control.hpp"
#include "ivddpc/json_io.hpp"

namespace ivddpc {

inline constexpr int kSchemaVersion = 1;

/// One channel of a reference program, repeated cyclically to the requested length.
///   staircase: one square-wave period per level (period, duty, levels, offset)
///   square:    period, duty, amplitude, offset, phase
///   white:     N(offset, std^2) held for `hold` samples
///   constant:  value
struct ReferenceProgram {
  std::string kind = "constant";
  int period = 2;
  double duty = 0.5;
  std::vector<double> levels;
  double amplitude = 0.0;
  double offset = 0.0;
  int phase = 0;
  double std = 0.0;
  int hold = 1;
  double value = 0.0;
};

/// p x length reference; `seed` feeds the white-noise channels (channel i
/// draws from derive_seed(seed, i, "reference")).
MatrixXd make_reference(const std::vector<ReferenceProgram>& channels, Eigen::Index length,
                        std::uint64_t seed);

struct ExperimentConfig {
  std::string name;
  StateSpaceModel plant;     ///< K may be absent: then designed per noise level
  double kalman_qw = 0.01;   ///< Qw = kalman_qw * I for the designed K
  VectorXd noise_shape;      ///< relative noise std per output channel
  ControllerModel controller;

  std::vector<ReferenceProgram> collection_reference;
  int collection_length = 0;

  int past = 0, future = 0;

  int steps = 0;
  VectorXd q_diag, r_diag;
  std::vector<ReferenceProgram> task_reference;
  VectorXd warmup_reference;  ///< constant per channel
  VectorXd u_min, u_max, y_min, y_max;

  std::vector<VariantTag> variants;
  std::vector<double> lambdas;
  int rddpc_norm = 2;
  std::vector<double> snr_db;  ///< empty entry list not allowed; use noise_free for sigma = 0
  bool noise_free = false;
  int replicates = 1;
  std::uint64_t base_seed = 0;
  SolverSettings solver;
  double svd_tol = 1e-10;
  bool traces = false;

  /// Canonical JSON of the parsed document, the basis of `fingerprint`.
  json source;

  ControlTask task() const;
  /// Throws ConfigError listing every unknown, missing or inconsistent key.
  static ExperimentConfig from_json(const json& j);
  static ExperimentConfig load(const std::string& path);
};

/// FNV-1a 64 of the canonical (sorted-key, compact) JSON text, as 16 hex digits.
std::string fingerprint(const json& j);

/// splitmix64 chain over (base, index, FNV-1a(role)).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, const std::string& role);

/// Plant with its noise gain: the configured K, or the Kalman gain for
/// Qw = qw I and Rv = diag(sigma * shape)^2 (sigma = 0 uses Rv = 1e-12 I).
StateSpaceModel plant_for_noise(const StateSpaceModel& plant, double sigma,
                                const VectorXd& shape, double qw);

/// 10 log10 of the output variance ratio between the noise-free closed-loop
/// response and the noise-induced part, summed over channels.
double measure_snr(const StateSpaceModel& plant, const ControllerModel& ctrl, const MatrixXd& r,
                   double sigma, const VectorXd& shape, std::uint64_t seed);

struct SnrCalibration {
  double sigma = 0.0;
  double measured_db = 0.0;
  int iterations = 0;
};

/// Bisection on log sigma until the measured SNR is within `tol_db` of the
/// target. `plant_of` maps sigma to the plant used for that sigma.
SnrCalibration calibrate_snr(const std::function<StateSpaceModel(double)>& plant_of,
                             const ControllerModel& ctrl, const MatrixXd& r, double target_db,
                             const VectorXd& shape, std::uint64_t seed, double tol_db = 0.02);
SnrCalibration calibrate_snr(const StateSpaceModel& plant, const ControllerModel& ctrl,
                             const MatrixXd& r, double target_db, std::uint64_t seed);

/// Offline closed-loop data for one noise level and replicate.
struct Dataset {
  std::string fingerprint;
  double snr_db = 0.0;   ///< +inf for noise-free data
  double sigma = 0.0;
  int replicate = 0;
  std::uint64_t seed = 0;
  StateSpaceModel plant;  ///< with the K used to generate the data
  Trajectory traj;
  HankelBundle bundle;
  bool cache_hit = false;
};

/// sigma for every configured SNR level, in config order (one entry with
/// sigma = 0 for noise-free configs).
std::vector<SnrCalibration> calibrate_levels(const ExperimentConfig& cfg);

/// Simulates the closed loop under the collection reference. `cache_dir`,
/// when set, holds dataset_<fp>.json and bundle_<fp>.json keyed by the
/// fingerprint of everything that determines the data.
Dataset collect(const ExperimentConfig& cfg, double snr_db, double sigma, int replicate,
                const std::optional<std::string>& cache_dir = std::nullopt);

struct RecordRow {
  std::string fingerprint;
  double snr_db = 0.0;
  double sigma = 0.0;
  int replicate = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t run_seed = 0;
  std::string variant;
  double lambda = 0.0;  ///< NaN unless rddpc
  double J = 0.0;
  bool failed = false;
  long qp_iterations = 0;
  std::string error;
  double wall_seconds = 0.0;  ///< written to the metadata file only
};

struct CampaignOptions {
  int jobs = 1;
  std::optional<std::string> out_dir;  ///< records.csv, run_times.csv, trace_<fp>.csv
  std::optional<int> only_replicate;   ///< `run`: a single replicate
};

/// All (SNR x replicate x variant x lambda) runs. Noise for replicate i is
/// identical across variants and lambdas. Rows come back, and are streamed
/// to records.csv, in job order regardless of `jobs`.
std::vector<RecordRow> monte_carlo(const ExperimentConfig& cfg, const CampaignOptions& opts = {});

/// Runs of one dataset, used by monte_carlo; exposed for tests.
std::vector<std::pair<RecordRow, RunRecord>> run_dataset(const ExperimentConfig& cfg,
                                                         const Dataset& data);

std::string records_csv_header();
std::string to_csv(const RecordRow& row);
std::vector<RecordRow> read_records_csv(const std::string& path);

struct SummaryRow {
  std::string variant;
  double lambda = 0.0;
  double snr_db = 0.0;
  int count = 0;
  int failures = 0;
  double mean = 0.0, stddev = 0.0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Linear-interpolation quantile of sorted data (q in [0, 1]).
double quantile_sorted(const std::vector<double>& sorted, double q);

/// Groups by (snr_db, variant, lambda) in first-seen order. Statistics use
/// the successful runs and are NaN for a group where every run failed.
/// Throws on an empty record list.
std::vector<SummaryRow> summarize(const std::vector<RecordRow>& records);
std::string summary_csv(const std::vector<SummaryRow>& rows);

struct TrendStep {
  double lambda_from = 0.0, lambda_to = 0.0;
  double mean_from = 0.0, mean_to = 0.0;
  double pooled_se = 0.0;
  bool ok = false;  ///< mean_to <= mean_from + pooled_se
};

/// Steps of decreasing lambda over [lambda_min, lambda_max] for one
/// SNR level of the rddpc rows.
std::vector<TrendStep> lambda_trend(const std::vector<SummaryRow>& rows, double snr_db,
                                    double lambda_min, double lambda_max);

}  // namespace ivddpc
