#pragma once

// Differentiable property predictor h over decoder probabilities. Targets are
// z-scored with the training-label statistics; predict() returns the
// de-normalized value and every gradient is of the normalized output.

#include <filesystem>
#include <functional>

#include "chemflow/genvae.hpp"
#include "chemflow/molkit.hpp"

namespace chemflow::surrogate {

using PropertyOracle = std::function<double(const molkit::MolGraph&)>;

// Discrete oracle for a property kind. plogp needs corpus stats.
PropertyOracle make_oracle(molkit::PropertyKind kind, const molkit::NormStats* stats);

struct SurrogateConfig {
  int width = 128;
  int blocks = 3;
};

class SurrogateModel {
 public:
  SurrogateModel() = default;
  SurrogateModel(int input_dim, const SurrogateConfig& cfg, Rng& rng);

  diffnet::DenseNet& net() { return net_; }
  const diffnet::DenseNet& net() const { return net_; }

  molkit::PropertyKind kind = molkit::PropertyKind::Plogp;
  molkit::ComponentStats norm;

  double normalize(double y) const { return (y - norm.mean) / norm.std; }
  double denormalize(double p) const { return p * norm.std + norm.mean; }

  Vec predict_normalized(const Mat& probs) const;
  Vec predict(const Mat& probs) const;

  // Checkpoint plus a manifest JSON binding property kind and normalization.
  void save(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest) const;
  static SurrogateModel load(const std::filesystem::path& manifest);

 private:
  diffnet::DenseNet net_;
};

// Normalized prediction h(g(z)) per column of z.
Vec predict_latent(const SurrogateModel& s, const genvae::VaeModel& vae, const Mat& z);
// grad_z h(g(z)) of the normalized output, exact reverse mode through the decoder.
Mat grad_wrt_latent(const SurrogateModel& s, const genvae::VaeModel& vae, const Mat& z);

struct TrainOptions {
  int n_train = 20000;
  int n_val = 2000;
  int epochs = 20;
  int batch_size = 128;
  std::uint64_t seed = 0;
  diffnet::OptimizerConfig opt{.kind = diffnet::OptimizerKind::Sgd, .lr = 0.01, .weight_decay = 0.0, .momentum = 0.9};
  SurrogateConfig net{};
};

struct EpochLog {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  SurrogateModel model;  // best validation checkpoint
  std::vector<EpochLog> curve;
  double val_mse = 0.0;  // normalized units
  double val_r2 = 0.0;
};

// Labelled latent samples: z ~ N(0, I), inputs = decode_probs(z), labels =
// oracle(decode(decode_molecule(z))).
struct LabelledSet {
  Mat z, probs;
  Vec labels;
};
LabelledSet sample_labelled(const genvae::VaeModel& vae, const PropertyOracle& oracle, int n, Rng& rng);

// Throws DegenerateError when the training labels have zero variance.
TrainResult train_surrogate(const genvae::VaeModel& vae, const PropertyOracle& oracle, molkit::PropertyKind kind,
                            const TrainOptions& opts);

}  // namespace chemflow::surrogate
