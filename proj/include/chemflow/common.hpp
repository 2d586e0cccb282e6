#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace chemflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error hierarchy. Everything a module can throw derives from Error so the
// CLI can map it onto exit status 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct NumericError : Error {
  NumericError(const std::string& what, int layer)
      : Error(what + " (layer " + std::to_string(layer) + ")"), layer(layer) {}
  int layer;
};

struct TrainingError : Error {
  TrainingError(const std::string& what, long step)
      : Error(what + " (at " + std::to_string(step) + ")"), step(step) {}
  long step;
};

struct DegenerateError : Error {
  using Error::Error;
};

struct DensityDomainError : Error {
  using Error::Error;
};

struct BlowUpError : Error {
  BlowUpError(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  long step;
};

struct IoError : Error {
  using Error::Error;
};

using Rng = std::mt19937_64;

// Independent stream for (seed, stream id); splitmix64 mixing so that nearby
// ids give unrelated states.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

Vec standard_normal(Rng& rng, Eigen::Index n);
Mat standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

bool all_finite(const Mat& m);

std::string version_string();

}  // namespace chemflow
