#pragma once

// Time-conditioned energy fields phi^k(t, z) whose z-gradients are latent
// velocities, together with the PDE residuals, boundary loss and guidance
// terms used to train them.
//
// Gradients of losses that depend on grad_z phi or d phi/dt are formed from
// first-order parameter gradients at shifted points: for a fixed direction u,
//   d/dtheta (u . grad_z phi)(z) ~ [dphi/dtheta(z + e u) - dphi/dtheta(z - e u)] / 2e.
// The wave residual used in training is built from phi values only (second
// differences), so its parameter gradient is a weighted sum of dphi/dtheta.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "chemflow/checkpoint.hpp"
#include "chemflow/diffnet.hpp"
#include "chemflow/genvae.hpp"
#include "chemflow/surrogate.hpp"

namespace chemflow::flows {

enum class PdeKind { Hj, Wave };
std::string pde_name(PdeKind k);
PdeKind parse_pde(const std::string& s);

enum class Direction { Maximize, Minimize };
std::string direction_name(Direction d);
Direction parse_direction(const std::string& s);

struct FieldConfig {
  int embed_dim = 16;
  std::vector<int> hidden{128, 128};
  PdeKind pde = PdeKind::Wave;
  double wave_speed = 1.0;
  int horizon = 10;
};

class EnergyField : public diffnet::ScalarField {
 public:
  EnergyField() = default;
  EnergyField(int latent_dim, const FieldConfig& cfg, Rng& rng);

  int dim() const override { return dim_; }
  const FieldConfig& config() const { return cfg_; }
  Vec value(const Vec& t, const Mat& z) const override;
  void gradients(const Vec& t, const Mat& z, Vec* dt, Mat* dz) const override;
  Mat velocity(const Vec& t, const Mat& z) const;  // grad_z phi

  // sum_j w_j dphi(t_j, z_j)/dtheta in parameters() order.
  diffnet::Gradients param_grad(const Vec& t, const Mat& z, const Vec& w) const;
  std::vector<diffnet::ParamRef> parameters();
  diffnet::Gradients zero_gradients() const;

  diffnet::TimeEmbedding& embedding() { return emb_; }
  diffnet::DenseNet& net() { return net_; }
  const diffnet::DenseNet& net() const { return net_; }

  void to_checkpoint(Checkpoint& ck, const std::string& prefix) const;
  static EnergyField from_checkpoint(const Checkpoint& ck, const std::string& prefix);

 private:
  Mat input(const Vec& t, const Mat& z) const;

  int dim_ = 0;
  FieldConfig cfg_;
  diffnet::TimeEmbedding emb_;
  diffnet::DenseNet net_;
};

// Residual values ---------------------------------------------------------

// r = dphi/dt + 1/2 |grad_z phi|^2, exact first derivatives.
Vec hj_residual(const diffnet::ScalarField& phi, const Vec& t, const Mat& z);
// r = d2phi/dt2 - c^2 lap_z phi via diffnet::second_derivs.
Vec wave_residual(const diffnet::ScalarField& phi, const Vec& t, const Mat& z, double c,
                  const diffnet::SecondDerivOptions& opts = {});

// Training losses ---------------------------------------------------------

struct LossGrad {
  double value = 0.0;
  diffnet::Gradients grad;  // w.r.t. the field parameters
  Mat dz;                   // w.r.t. the input latents, when requested
};

struct StencilOptions {
  double h_dir = 1e-3;  // directional stencil step (in units of the direction norm)
  double h_t = 1e-2;
  double h_z = 1e-2;
  diffnet::LaplacianMode lap_mode = diffnet::LaplacianMode::Hutchinson;
  int probes = 8;
};

// Weighted directional derivative sum_j (u_j . grad_z phi(t_j, z_j)) w_j, differentiated
// w.r.t. parameters (and z when want_dz), by the central stencil along (dt_j, u_j).
diffnet::Gradients directional_param_grad(const EnergyField& f, const Vec& t, const Mat& z, const Vec& ut,
                                          const Mat& uz, const Vec& w, double h, Mat* dz = nullptr);

// mean_j r_j^2 over the given points.
LossGrad hj_loss(const EnergyField& f, const Vec& t, const Mat& z, const StencilOptions& o, bool want_dz = false);
// Value-stencil wave residual: [phi(t+h)-2phi+phi(t-h)]/h^2 - c^2 lap(phi), mean r^2.
LossGrad wave_loss(const EnergyField& f, const Vec& t, const Mat& z, const StencilOptions& o, Rng& rng,
                   bool want_dz = false);
LossGrad residual_loss(const EnergyField& f, const Vec& t, const Mat& z, const StencilOptions& o, Rng& rng,
                       bool want_dz = false);

// L_phi = mean_j sum_k |grad_z phi^k(0, z0_j)|^2 (unweighted; callers apply lambda).
double boundary_loss(const std::vector<const diffnet::ScalarField*>& fields, const Mat& z0);
// Single-field contribution with parameter gradient.
LossGrad boundary_loss_grad(const EnergyField& f, const Mat& z0, const StencilOptions& o, bool want_dz = false);

// d_j = <s grad h_j, grad_z phi_j>, s = +1 maximize / -1 minimize; L_P = mean_j -sign(d_j) d_j^2.
struct GuidanceValue {
  Vec d;
  double loss = 0.0;
};
GuidanceValue supervised_guidance_value(const Mat& grad_h, const Mat& grad_phi, Direction dir);
LossGrad supervised_guidance(const EnergyField& f, const Mat& grad_h, const Vec& t, const Mat& z, Direction dir,
                             const StencilOptions& o);

// L_J = -mean_j |J_g(z_j) grad_z phi_j|^2 with J_g v from diffnet::jvp on the decoder.
double jvp_guidance_value(const diffnet::DenseNet& decoder, const Mat& z, const Mat& grad_phi, double eps = 1e-3);
LossGrad jvp_guidance(const EnergyField& f, const genvae::VaeModel& vae, const Vec& t, const Mat& z,
                      const StencilOptions& o, double eps = 1e-3);

// Cross-entropy of classifier logits against k, averaged over columns.
// Throws ArgumentError when a label is outside 0..K-1.
double cross_entropy(const Mat& logits, const std::vector<int>& k, Mat* dlogits = nullptr);
double disentangle_loss(const diffnet::DenseNet& classifier, const Mat& x_t, const Mat& x_next,
                        const std::vector<int>& k);

// Training (Alg. 1) ----------------------------------------------------------

enum class GuidanceMode { Supervised, Unsupervised };

struct FlowTrainConfig {
  GuidanceMode mode = GuidanceMode::Supervised;
  int num_flows = 1;  // K; supervised runs use 1
  FieldConfig field{};
  int iterations = 1000;
  int batch_size = 32;
  double lambda_r = 1.0;
  double lambda_phi = 0.1;
  double lambda_guidance = 1.0;  // L_P or L_J
  double lambda_k = 1.0;
  std::uint64_t seed = 0;
  diffnet::OptimizerConfig opt{.lr = 1e-3, .weight_decay = 0.0, .clip_norm = 1.0};
  StencilOptions stencil{};
  // Supervised only.
  molkit::PropertyKind property = molkit::PropertyKind::Plogp;
  Direction direction = Direction::Maximize;
  std::vector<int> classifier_hidden{256};
};

struct FlowLogRow {
  int iter = 0;
  double l_r = 0.0, l_phi = 0.0, l_guide = 0.0, l_k = 0.0, total = 0.0;
};

struct FlowSet {
  std::vector<EnergyField> fields;
  diffnet::DenseNet classifier;  // unsupervised only
  FlowTrainConfig config;

  // Checkpoint plus manifest {k, pde_kind, mode, property?, T, c} per field.
  void save(const std::filesystem::path& dir) const;
  static FlowSet load(const std::filesystem::path& dir);
};

struct FlowTrainResult {
  FlowSet flows;
  std::vector<FlowLogRow> log;
};

// z0 candidates are latents of encoded corpus molecules (posterior samples).
// The surrogate is required in supervised mode (ConfigError otherwise).
FlowTrainResult train_flows(const FlowTrainConfig& cfg, const genvae::VaeModel& vae, const Mat& z_pool,
                            const surrogate::SurrogateModel* surrogate);

void write_log_csv(const std::vector<FlowLogRow>& log, GuidanceMode mode, const std::filesystem::path& path);

// Unit-step rollout z_{i+1} = z_i + grad phi(i, z_i) (Alg. 1); returns steps+1 states.
std::vector<Mat> rollout(const EnergyField& f, const Mat& z0, int steps);

// Held-out accuracy of the disentanglement classifier on fresh (pair, k) samples.
double classifier_accuracy(const FlowSet& flows, const genvae::VaeModel& vae, const Mat& z_pool, int n,
                           std::uint64_t seed);
// Mean |grad_z phi| over t = 0..T-1 for every field at the given probes.
std::vector<double> mean_velocity_norms(const FlowSet& flows, const Mat& probes);

}  // namespace chemflow::flows
