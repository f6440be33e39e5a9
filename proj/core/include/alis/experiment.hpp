#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "alis/ces.hpp"
#include "alis/metrics.hpp"
#include "alis/spaces.hpp"

namespace alis {

/// A problem instance plus the extras some metrics need (the linear map for
/// closed-form posteriors, the true Lorenz forcing for parameter error).
struct ProblemBundle {
  std::string type;  // linear | linexp | darcy | lorenz
  InverseProblem problem;
  std::optional<Mat> linear_a;
  Vec lorenz_truth;
  LorenzSpec lorenz_spec;
};

ProblemBundle make_problem(const nlohmann::json& problem_cfg, std::uint64_t instance_seed);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string to_csv() const;  // fixed %.17g formatting upstream; bytes are stable
};

struct ExperimentResult {
  CsvTable csv;
  std::vector<double> sweep_values;
  std::vector<std::string> method_labels;
  Mat medians;  // sweep points x methods, NaN where every replicate failed
  int failures = 0;
  std::string output_path;
};

/// Configuration-driven sweep runner. See README for the JSON schema. Writes
/// one CSV row per sweep point with an err_<method> column per method,
/// medians over replicates (lower median on even counts). Failed cells stay
/// empty and are counted, the run continues.
ExperimentResult run_experiment(const nlohmann::json& config);

/// Output-optimizer comparison on one problem: per reduced dimension s,
/// objective values and iteration counts for the full, incremental, and
/// NEPv/SCF optimizers plus the NEPv fallback count.
ExperimentResult compare_optimizers(const nlohmann::json& config);

/// Runs the calibrate-emulate-sample pipeline from a JSON config and writes
/// the result directory (config snapshot, provenance, chains, matrices).
/// Returns the parameter-error when the problem carries a known truth.
double run_ces_from_config(const nlohmann::json& config, const std::string& out_dir);

CesConfig parse_ces_config(const nlohmann::json& config);
SpaceBuildConfig parse_reduction_config(const nlohmann::json& j);

// Cache of sampled chains keyed by content hash (see `alis cache`).
std::string cache_key(const nlohmann::json& ident);
bool cache_load(const std::string& dir, const std::string& key, Mat& xs, Mat& gs);
void cache_store(const std::string& dir, const std::string& key, const nlohmann::json& ident,
                 const Mat& xs, const Mat& gs);
std::vector<std::string> cache_list(const std::string& dir);
int cache_clear(const std::string& dir);

void save_matrix(const std::string& path, const Mat& m);
Mat load_matrix(const std::string& path);
void save_matrix_csv(const std::string& path, const Mat& m);

std::string format_double(double v);  // %.17g

}  // namespace alis
