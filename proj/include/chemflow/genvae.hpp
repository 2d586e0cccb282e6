#pragma once

// Toy sequence VAE over padded token sequences. The decoder is
// non-autoregressive: one softmax per position, so decode_probs is a single
// differentiable map z -> probabilities that guidance terms can chain through.

#include <filesystem>
#include <functional>
#include <vector>

#include "chemflow/checkpoint.hpp"
#include "chemflow/diffnet.hpp"
#include "chemflow/molkit.hpp"

namespace chemflow::flows {
class EnergyField;
}

namespace chemflow::genvae {

inline constexpr double kLogvarMin = -20.0;
inline constexpr double kLogvarMax = 4.0;

struct VaeConfig {
  int length = molkit::kDefaultLength;
  int latent = 32;
  std::vector<int> enc_hidden{256, 128};
  std::vector<int> dec_hidden{128, 256};
  // At 1.0 the per-position decoder ignores z entirely (posterior collapse).
  double beta_kl = 0.1;
};

nlohmann::json config_to_json(const VaeConfig& c);
VaeConfig config_from_json(const nlohmann::json& j);

// Column j is the flattened one-hot of sequence j; row = position * alphabet + token.
Mat one_hot(const std::vector<molkit::TokenSequence>& seqs, int length);

class VaeModel {
 public:
  VaeModel() = default;
  VaeModel(const VaeConfig& cfg, Rng& rng);

  const VaeConfig& config() const { return cfg_; }
  int latent_dim() const { return cfg_.latent; }
  int input_dim() const { return cfg_.length * molkit::kAlphabetSize; }

  diffnet::DenseNet& encoder() { return enc_; }
  const diffnet::DenseNet& encoder() const { return enc_; }
  diffnet::DenseNet& decoder() { return dec_; }
  const diffnet::DenseNet& decoder() const { return dec_; }

  // logvar is clamped to [kLogvarMin, kLogvarMax].
  void encode(const Mat& x, Mat& mu, Mat& logvar) const;
  Mat encode_mean(const std::vector<molkit::TokenSequence>& seqs) const;

  // Per-position probabilities, input_dim() x N.
  Mat decode_probs(const Mat& z) const;
  // dL/dz given dL/dprobs (exact reverse mode through the decoder).
  Mat decode_vjp(const Mat& z, const Mat& dprobs) const;
  std::vector<molkit::TokenSequence> decode_sequences(const Mat& z) const;
  molkit::TokenSequence decode_molecule(const Vec& z) const;

  void save(const std::filesystem::path& path) const;
  static VaeModel load(const std::filesystem::path& path);
  void to_checkpoint(Checkpoint& ck, const std::string& prefix = "vae") const;
  static VaeModel from_checkpoint(const Checkpoint& ck, const std::string& prefix = "vae");

 private:
  VaeConfig cfg_;
  diffnet::DenseNet enc_, dec_;
};

// z = mu + exp(logvar / 2) * eps, eps ~ N(0, I).
Mat sample_z(const Mat& mu, const Mat& logvar, Rng& rng);
// Per-sample KL(N(mu, sigma) || N(0, I)).
Vec kl_divergence(const Mat& mu, const Mat& logvar);
// Argmax per position.
molkit::TokenSequence argmax_sequence(const Eigen::Ref<const Vec>& probs, int length);

struct EpochStats {
  int epoch = 0;
  double recon = 0.0;
  double kl = 0.0;
  double extra = 0.0;  // latent term contribution (finetune_pde)
  double total = 0.0;
  double val_total = 0.0;
};

struct TrainOptions {
  int epochs = 60;
  int batch_size = 128;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  // AdamW; a cosine period of 0 means one cycle over the whole run.
  diffnet::OptimizerConfig opt{.lr = 2e-3};
  bool cosine = true;
  // beta ramps linearly from 0 to beta_kl over this many epochs.
  int kl_warmup_epochs = 0;
};

// Extra objective evaluated at the sampled latents of each batch. Returns the
// batch loss and writes dL/dz (same shape as z). It may update its own
// parameters as a side effect.
using LatentTerm = std::function<double(const Mat& z, Mat& dz)>;

struct TrainResult {
  VaeModel model;  // parameters at the best validation loss
  std::vector<EpochStats> curve;
  int best_epoch = 0;
  double best_val = 0.0;
};

struct BatchLoss {
  double recon = 0.0, kl = 0.0, extra = 0.0;
};
// One forward/backward pass over a one-hot batch: recon and kl are batch means;
// gradients of recon + beta kl + extra are added into the given buffers. When
// enc_grads is null only the loss is computed.
BatchLoss batch_loss(const VaeModel& model, const Mat& x, Rng& rng, diffnet::Gradients* enc_grads,
                     diffnet::Gradients* dec_grads, double beta, const LatentTerm* extra = nullptr);

// The split is deterministic in the seed: the last val_fraction of a seeded
// permutation is held out.
struct Split {
  std::vector<molkit::TokenSequence> train, val;
};
Split split_data(const std::vector<molkit::TokenSequence>& data, double val_fraction, std::uint64_t seed);

// Loss is per-sample (sum over positions of cross-entropy + beta KL) averaged
// over the batch. A non-finite loss raises TrainingError with the epoch index.
TrainResult train_vae(const VaeModel& init, const std::vector<molkit::TokenSequence>& data,
                      const TrainOptions& opts, const LatentTerm& extra = {});

// Mean VAE loss of a set with a fixed noise stream.
EpochStats evaluate(const VaeModel& model, const std::vector<molkit::TokenSequence>& data, std::uint64_t seed);

struct Accuracy {
  double all_positions = 0.0;  // over every padded position
  double content = 0.0;        // over positions before the first Pad of the target
};
// Reconstruction through the posterior mean.
Accuracy reconstruction_accuracy(const VaeModel& model, const std::vector<molkit::TokenSequence>& seqs);

// Joint fine-tuning L_VAE + lambda_r L_r + lambda_phi L_phi (Appendix B). The
// residual of every field is evaluated at the batch's sampled latents with
// t drawn uniformly from 0..T-1, the boundary term at t = 0; both the VAE and
// the fields are updated. Zero weights reproduce a plain train_vae run.
struct FinetuneOptions {
  TrainOptions train{.epochs = 10, .opt = {.lr = 1e-4}};
  double lambda_r = 1.0;
  double lambda_phi = 1.0;
  diffnet::OptimizerConfig field_opt{.lr = 1e-4, .clip_norm = 1.0};
};

struct FinetuneLogRow {
  int epoch = 0;
  double l_vae = 0.0, l_r = 0.0, l_phi = 0.0, val_vae = 0.0;
};

struct FinetuneResult {
  TrainResult vae;
  std::vector<FinetuneLogRow> log;
};

FinetuneResult finetune_pde(const VaeModel& model, std::vector<flows::EnergyField>& fields,
                            const std::vector<molkit::TokenSequence>& data, const FinetuneOptions& opts);

void write_curve_csv(const std::vector<EpochStats>& curve, const std::filesystem::path& path);

}  // namespace chemflow::genvae
