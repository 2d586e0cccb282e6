#pragma once

// Inference-time latent stepping for learned flows, gradient flow, Langevin
// dynamics and fixed-direction baselines, plus the evolutionary baseline and
// multi-objective direction averaging.
//
// Batches hold one latent per column. Stochastic kinds draw noise for column j
// from its own stream make_rng(seed, first_id + j), so a trajectory does not
// depend on which other trajectories share its batch.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "chemflow/flows.hpp"
#include "chemflow/genvae.hpp"
#include "chemflow/molkit.hpp"
#include "chemflow/surrogate.hpp"

namespace chemflow::traversal {

enum class SourceKind { LearnedFlow, GradientFlow, Langevin, Random, Random1d, ChemSpace };
std::string kind_name(SourceKind k);
SourceKind parse_kind(const std::string& s);
bool is_linear(SourceKind k);

// Potential h to be decreased: value per column and its gradient.
struct Potential {
  std::function<Vec(const Mat&)> value;
  std::function<Mat(const Mat&)> grad;
};

// h(z) = -s * surrogate(g(z)) in normalized units, s = +1 to maximize.
Potential surrogate_potential(const surrogate::SurrogateModel& s, const genvae::VaeModel& vae, flows::Direction dir);
// h(z) = 1/2 |z - c|^2
Potential quadratic_potential(const Vec& center);
// 2-D tilted double well with minima h(-1, 0) = -1 (global) and h(1, 0) = -0.5:
//   h = 1/2 (x^2 - 1)^2 + (3x - x^3) / 8 - 3/4 + y^2 / 2.
// The separatrix between the basins is the line x = 3/16.
Potential double_well_potential();
inline constexpr double kDoubleWellSeparatrix = 0.1875;

struct DirectionSource {
  SourceKind kind = SourceKind::Random;
  double alpha = 0.1;
  double beta = 1.0;      // Langevin noise strength
  int anneal_steps = 0;   // > 0: beta_t = beta * (1 + cos(pi t / anneal_steps)) / 2, 0 after
  Vec direction;          // linear kinds, unit norm
  // Learned flows / potentials; several are averaged (multi-objective).
  std::vector<const flows::EnergyField*> fields;
  std::vector<Potential> potentials;
};

// Throws ConfigError when the models or direction required by the kind are missing.
void validate(const DirectionSource& s, int latent_dim);

Vec random_direction(int d, Rng& rng);
Vec random_1d_direction(int d, Rng& rng);  // +-e_i

// Arithmetic mean of per-objective directions; ArgumentError when empty.
Mat multi_objective_direction(const std::vector<Mat>& directions);

// Per-column noise streams.
class NoiseStreams {
 public:
  NoiseStreams(std::uint64_t seed, std::uint64_t first_id, Eigen::Index n);
  Mat draw(Eigen::Index rows);

 private:
  std::vector<Rng> rngs_;
};

// One Alg. 2 update at step t >= 1 (learned flows use phi(t - 1, .)).
Mat step(const DirectionSource& s, int t, const Mat& z, NoiseStreams* noise = nullptr);

// States z_0..z_T; ArgumentError when T < 1.
std::vector<Mat> traverse_latent(const DirectionSource& s, const Mat& z0, int steps, std::uint64_t seed,
                                 std::uint64_t first_id = 0);

struct TrajectoryPoint {
  int step = 0;
  Vec z;
  molkit::TokenSequence tokens;
  molkit::PropertyValues props{};
};

struct Trajectory {
  std::uint64_t id = 0;
  std::vector<TrajectoryPoint> points;
};

std::vector<Trajectory> decode_trajectories(const std::vector<Mat>& states, const genvae::VaeModel& vae,
                                            const molkit::NormStats& stats, std::uint64_t first_id = 0);
std::vector<Trajectory> traverse(const DirectionSource& s, const genvae::VaeModel& vae,
                                 const molkit::NormStats& stats, const Mat& z0, int steps, std::uint64_t seed,
                                 std::uint64_t first_id = 0);

// One JSON object per line: {traj, step, z, tokens, props}.
void write_jsonl(const std::vector<Trajectory>& trajs, const std::filesystem::path& path);
std::vector<Trajectory> read_jsonl(const std::filesystem::path& path);

// ChemSpace -----------------------------------------------------------------

// 1 where value > median, else 0.
std::vector<int> median_labels(const Vec& values);

struct SvmOptions {
  double lambda = 1e-2;
  double lr = 0.1;
  int iterations = 2000;
  int min_per_class = 100;
};
// Linear hinge-loss + L2 classifier by full-batch subgradient descent; returns
// w/|w| pointing toward label 1. DegenerateError on a single class,
// ArgumentError when a class has fewer than min_per_class samples.
Vec fit_chemspace_boundary(const Mat& latents, const std::vector<int>& labels, const SvmOptions& o = {});

// Evolutionary baseline (Alg. 3) ---------------------------------------------

struct EaOptions {
  int n = 64;
  int k = 8;
  double alpha = 0.1;
  int steps = 10;
  double noise_scale = 1.0;      // scales both perturbations; 0 gives the selection-only limit
  double resample_sigma = 0.1;   // spread of the n/k samples around each survivor
  std::uint64_t seed = 0;
};

struct EaResult {
  Mat population;                 // final latents
  std::vector<double> best_score; // population best before each update, plus the final population
  std::vector<molkit::TokenSequence> decoded;  // filled when a VAE is given
};

using ScoreFn = std::function<Vec(const Mat&)>;      // higher is better
using DirectionFn = std::function<Mat(const Mat&)>;  // evolution direction per column

EaResult ea_optimize(const Mat& z0, const ScoreFn& score, const DirectionFn& direction, const EaOptions& o,
                     const genvae::VaeModel* vae = nullptr);

}  // namespace chemflow::traversal
