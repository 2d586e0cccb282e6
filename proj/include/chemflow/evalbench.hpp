#pragma once

// Evaluation protocols: strict and relaxed manipulation success, the
// unconstrained / similarity-constrained / multi-objective optimization
// benchmarks, Pearson-based selection of unsupervised flows and latent-norm
// analysis. Reports are plain structs with CSV writers.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "chemflow/traversal.hpp"

namespace chemflow::evalbench {

// Success verdicts -------------------------------------------------------------

struct SuccessCriteria {
  double eps = 0.0;       // tolerated per-step property drop (relaxed)
  double gamma = 0.1;     // tolerated per-step similarity rise (relaxed)
  int min_distinct = 3;   // strictly more than 2 distinct molecules
};

// eps = 5% of the property's range over the corpus.
SuccessCriteria criteria_for(molkit::PropertyKind kind, const molkit::Corpus& corpus);

// Per-step series of one trajectory. score is the property oriented so that
// larger is better; similarity[i] = tanimoto(x_i, x_0), so similarity[0] = 1.
// keys are canonical molecule keys (molkit::canonical_key).
struct TrajectoryMetrics {
  std::vector<double> score;
  std::vector<double> similarity;
  std::vector<std::string> keys;
};

TrajectoryMetrics trajectory_metrics(const traversal::Trajectory& traj, molkit::PropertyKind kind,
                                     flows::Direction dir = flows::Direction::Maximize);

int distinct_molecules(const TrajectoryMetrics& m);
// Non-decreasing score, non-increasing similarity to the start, > 2 distinct.
// ArgumentError on fewer than two steps or mismatched series lengths.
bool strict_success(const TrajectoryMetrics& m, const SuccessCriteria& c = {});
// Score drops <= eps, similarity rises <= gamma, same diversity clause.
bool relaxed_success(const TrajectoryMetrics& m, const SuccessCriteria& c);

// Manipulation (success-rate table) ---------------------------------------------

struct MethodSpec {
  std::string name;
  molkit::PropertyKind property = molkit::PropertyKind::Plogp;
  flows::Direction direction = flows::Direction::Maximize;
  traversal::DirectionSource source;
};

struct ManipulationRow {
  std::string method;
  molkit::PropertyKind property{};
  double strict_rate = 0.0;   // percent
  double relaxed_rate = 0.0;  // percent
  int n = 0;
};

struct ManipulationReport {
  std::vector<ManipulationRow> rows;
  // Per method: mean of its rank by average strict rate and its rank by
  // average relaxed rate (1 = best); ties in the mean go to the better strict rank.
  std::vector<std::pair<std::string, double>> ranking;
};

// Every method traverses the same starting latents (one per column of z0) for
// `steps` steps. eps per property comes from criteria_for over the corpus.
ManipulationReport manipulation_benchmark(const std::vector<MethodSpec>& methods, const genvae::VaeModel& vae,
                                          const molkit::Corpus& corpus, const Mat& z0, int steps,
                                          std::uint64_t seed);
void write_manipulation_csv(const ManipulationReport& r, const std::filesystem::path& path);

// Unconstrained optimization ------------------------------------------------------

struct OrderStats {
  double mean = 0.0, std = 0.0, median = 0.0;
};
// Sample standard deviation; ArgumentError on an empty input.
OrderStats order_stats(std::vector<double> v);

struct UnconstrainedReport {
  std::array<double, 3> top3{};  // best three per-trajectory bests, best first
  OrderStats top100;             // over the best min(100, n) trajectory bests
  std::vector<double> best;      // per trajectory, in raw property units (including step 0)
};

// steps = 0 evaluates the starting molecules only.
UnconstrainedReport unconstrained_benchmark(const MethodSpec& method, const genvae::VaeModel& vae,
                                            const molkit::NormStats& stats, const Mat& z0, int steps,
                                            std::uint64_t seed);
void write_unconstrained_csv(const std::vector<std::pair<std::string, UnconstrainedReport>>& rows,
                             const std::filesystem::path& path);

// Similarity-constrained optimization ---------------------------------------------

inline const std::vector<double> kDefaultDeltas{0.0, 0.2, 0.4, 0.6};

struct ConstrainedCell {
  double delta = 0.0;
  OrderStats improvement;       // over successes (zeros when none)
  double success_rate = 0.0;    // percent
  std::vector<bool> success;    // per seed molecule
};

struct ConstrainedReport {
  std::vector<ConstrainedCell> cells;  // one per delta
};

// Per trajectory, best improvement (oriented, raw property units) over states
// x_1.. with tanimoto(x_i, x_0) >= delta; success when it is > 0. The
// reference molecule is the decoded start x_0.
ConstrainedReport constrained_report(const std::vector<traversal::Trajectory>& trajs, molkit::PropertyKind kind,
                                     flows::Direction dir, const std::vector<double>& deltas = kDefaultDeltas);
ConstrainedReport constrained_benchmark(const MethodSpec& method, const genvae::VaeModel& vae,
                                        const molkit::NormStats& stats, const Mat& z0, int steps,
                                        std::uint64_t seed, const std::vector<double>& deltas = kDefaultDeltas,
                                        std::vector<traversal::Trajectory>* trajectories = nullptr);
void write_constrained_csv(const std::vector<std::pair<std::string, ConstrainedReport>>& rows,
                           const std::filesystem::path& path);

// The `count` corpus molecules with the lowest (oriented) property value.
std::vector<molkit::TokenSequence> lowest_property_seeds(const molkit::Corpus& corpus, molkit::PropertyKind kind,
                                                         flows::Direction dir, int count);

// Histogram of the property over trajectories at the given steps, one CSV row
// per (step, bin): step,bin_lo,bin_hi,count.
void write_shift_histograms(const std::vector<traversal::Trajectory>& trajs, molkit::PropertyKind kind,
                            const std::vector<int>& steps, int bins, const std::filesystem::path& path);

// Multi-objective ------------------------------------------------------------------

struct Objective {
  molkit::PropertyKind property{};
  flows::Direction direction = flows::Direction::Maximize;
};

struct MultiObjectiveCell {
  double delta = 0.0;
  std::vector<OrderStats> improvement;  // per objective, scaled 0..100 units
  double success_rate = 0.0;            // percent with improved equal-weighted sum
};

struct MultiObjectiveReport {
  std::vector<Objective> objectives;
  std::vector<MultiObjectiveCell> cells;
};

// Merges the fields / potentials of same-kind sources so steps use their
// averaged direction. ConfigError on mixed kinds or an empty list.
traversal::DirectionSource combine_sources(const std::vector<traversal::DirectionSource>& sources);

// Each objective is min-max scaled to [0, 100] over all states of the run and
// oriented so 100 is best. Per trajectory the best qualifying state maximizes
// the equal-weighted sum; success when that sum beats the start.
MultiObjectiveReport multiobjective_report(const std::vector<traversal::Trajectory>& trajs,
                                           const std::vector<Objective>& objectives,
                                           const std::vector<double>& deltas = kDefaultDeltas);
MultiObjectiveReport multiobjective_benchmark(const std::vector<Objective>& objectives,
                                              const std::vector<traversal::DirectionSource>& sources,
                                              const genvae::VaeModel& vae, const molkit::NormStats& stats,
                                              const Mat& z0, int steps, std::uint64_t seed,
                                              const std::vector<double>& deltas = kDefaultDeltas);
void write_multiobjective_csv(const MultiObjectiveReport& r, const std::filesystem::path& path);

// Pearson flow selection -----------------------------------------------------------

// Pearson correlation; NaN when either input has zero variance.
double pearson(const Vec& a, const Vec& b);

using StepFn = std::function<Mat(int t, const Mat& z)>;    // z_t from z_{t-1}
using LatentProperty = std::function<Vec(const Mat& z)>;   // property per column

LatentProperty decoded_property(const genvae::VaeModel& vae, molkit::PropertyKind kind,
                                const molkit::NormStats& stats);
// Learned-flow step z + alpha grad phi(t - 1, z).
StepFn flow_step(const flows::EnergyField& f, double alpha = 1.0);

struct PearsonResult {
  int index = -1;
  std::vector<double> mean_r;  // NaN for flows with no usable trajectory
  std::vector<int> used;       // trajectories with non-zero property variance
};

// r between the property along each T-step trajectory and the step index,
// averaged over test latents; argmax, or argmin when minimizing. Needs >= 2
// flows (ArgumentError); DegenerateError when every trajectory is excluded.
PearsonResult pearson_select(const std::vector<StepFn>& flows, const Mat& z_test, const LatentProperty& property,
                             flows::Direction dir = flows::Direction::Maximize, int steps = 10);
void write_pearson_csv(const PearsonResult& r, const std::filesystem::path& path);

// Latent geometry --------------------------------------------------------------------

struct LatentAnalysis {
  Vec norms;
  std::array<double, molkit::kAllProperties.size()> norm_property_r{};  // NaN when undefined
  // Random-direction traversals: per trajectory, per step.
  std::vector<std::vector<double>> traversal_norms;
  std::vector<std::vector<molkit::PropertyValues>> traversal_props;
};

// Fraction of norms in [lo * sqrt(d), hi * sqrt(d)].
double norm_band_fraction(const Vec& norms, int d, double lo, double hi);

LatentAnalysis latent_analysis(const Mat& latents, const std::vector<molkit::PropertyValues>& props);
// Adds n_traj random-direction traversals from prior samples.
void add_random_traversals(LatentAnalysis& a, const genvae::VaeModel& vae, const molkit::NormStats& stats,
                           int n_traj, int steps, double alpha, std::uint64_t seed);
// norms.csv, correlations.csv and (when present) traversal.csv in dir.
void write_latent_analysis(const LatentAnalysis& a, const std::filesystem::path& dir);

}  // namespace chemflow::evalbench
