#pragma once

// Small dense-network substrate: layered feed-forward nets with reverse-mode
// gradients, sinusoidal time embeddings, finite-difference second-order
// utilities and SGD/AdamW optimizers. Batches are matrices whose columns are
// samples. All arithmetic is double precision.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chemflow/common.hpp"

namespace chemflow::diffnet {

enum class Activation { Identity, Relu, Mish, Softmax };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

double mish(double x);
double mish_derivative(double x);

struct ParamRef {
  std::string name;
  Eigen::Map<Mat> value;
};

// One entry per parameter, in DenseNet::parameters() order.
using Gradients = std::vector<Mat>;

void add_into(Gradients& acc, const Gradients& g, double scale = 1.0);
double squared_norm(const Gradients& g);

class DenseNet {
 public:
  struct Layer {
    enum class Kind { Dense, Residual } kind = Kind::Dense;
    Mat weight;  // out x in
    Vec bias;
    Activation act = Activation::Identity;
    // Softmax is applied independently over consecutive groups of this size.
    int group = 0;
  };

  // Per-layer intermediate values recorded by forward() for backward().
  struct Tape {
    std::vector<Mat> inputs;
    std::vector<Mat> pre;    // pre-activation (dense) or standardized input (residual)
    std::vector<Mat> inner;  // residual: mish input
    std::vector<Vec> inv_std;
    Mat output;
  };

  DenseNet() = default;

  // Fully connected stack over dims[0] -> ... -> dims.back(); `hidden` on all
  // but the last layer, `out` on the last.
  static DenseNet mlp(const std::vector<int>& dims, Activation hidden, Activation out, Rng& rng,
                      int softmax_group = 0);

  void add_dense(int in, int out, Activation act, Rng& rng, int softmax_group = 0);
  // x + W mish(standardize(x)) + b, square W.
  void add_residual(int width, Rng& rng);

  int input_dim() const;
  int output_dim() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  Mat forward(const Mat& x) const;
  Mat forward(const Mat& x, Tape& tape) const;
  // Returns dL/dx for the recorded batch; adds dL/dparams into *grads when given.
  // With skip_last_activation the upstream is taken w.r.t. the last layer's
  // pre-activation (e.g. softmax logits).
  Mat backward(const Tape& tape, const Mat& upstream, Gradients* grads, bool skip_last_activation = false) const;

  // dL/dx without touching parameter gradients.
  Mat grad_input(const Mat& x, const Mat& upstream) const;

  std::vector<ParamRef> parameters();
  Gradients zero_gradients() const;
  std::size_t parameter_count() const;
  bool parameters_finite() const;

  nlohmann::json architecture() const;
  static DenseNet from_architecture(const nlohmann::json& arch);

 private:
  std::vector<Layer> layers_;
};

// (f(x + eps v) - f(x)) / eps, columnwise. eps must be positive.
Mat jvp(const DenseNet& net, const Mat& x, const Mat& v, double eps = 1e-3);

// Sinusoidal features sin/cos(w_i t), w_i = 10000^(-2i/E), followed by a
// trainable linear layer.
class TimeEmbedding {
 public:
  TimeEmbedding() = default;
  TimeEmbedding(int dim, Rng& rng);

  int dim() const { return dim_; }
  Mat features(const Vec& t) const;             // dim x N, before the linear layer
  Mat features_dt(const Vec& t) const;          // d features / dt
  Mat forward(const Vec& t) const;              // dim x N
  DenseNet& linear() { return linear_; }
  const DenseNet& linear() const { return linear_; }

 private:
  int dim_ = 0;
  DenseNet linear_;
};

// Scalar field phi(t, z) evaluated on batches (t_j, z_j).
class ScalarField {
 public:
  virtual ~ScalarField() = default;
  virtual int dim() const = 0;
  virtual Vec value(const Vec& t, const Mat& z) const = 0;
  // dphi/dt and grad_z phi; either output may be null.
  virtual void gradients(const Vec& t, const Mat& z, Vec* dt, Mat* dz) const = 0;
};

enum class LaplacianMode { Coordinate, Hutchinson };

struct SecondDerivOptions {
  double h_t = 1e-2;
  double h_z = 1e-3;
  LaplacianMode mode = LaplacianMode::Coordinate;
  int probes = 8;
  std::uint64_t seed = 0;
};

struct SecondDerivs {
  Vec dt;    // dphi/dt
  Mat grad;  // grad_z phi, d x N
  Vec dtt;   // d2phi/dt2
  Vec lap;   // Laplacian in z
};

SecondDerivs second_derivs(const ScalarField& phi, const Vec& t, const Mat& z,
                           const SecondDerivOptions& opts = {});

// Rademacher probe matrix (d x probes) with entries +-1.
Mat rademacher(Rng& rng, int d, int probes);

enum class OptimizerKind { Sgd, AdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double momentum = 0.0;  // sgd only
  // Cosine schedule with warm restarts; disabled when period == 0.
  long cosine_period = 0;
  double min_lr = 1e-6;
  // Global gradient-norm clipping; disabled when <= 0.
  double clip_norm = 0.0;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  // Shape mismatch between params and grads throws ArgumentError.
  void step(std::vector<ParamRef>& params, const Gradients& grads);
  double current_lr() const;
  long step_count() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  long steps_ = 0;
  Gradients m_, v_;
};

}  // namespace chemflow::diffnet
