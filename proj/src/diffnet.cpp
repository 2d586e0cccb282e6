#include "chemflow/diffnet.hpp"

#include <cmath>

namespace chemflow::diffnet {

namespace {

constexpr double kNormEps = 1e-5;

double softplus(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }

Mat apply_activation(const Mat& pre, Activation act, int group) {
  switch (act) {
    case Activation::Identity: return pre;
    case Activation::Relu: return pre.cwiseMax(0.0);
    case Activation::Mish: return pre.unaryExpr([](double x) { return mish(x); });
    case Activation::Softmax: {
      Mat out(pre.rows(), pre.cols());
      for (Eigen::Index c = 0; c < pre.cols(); ++c) {
        for (Eigen::Index g0 = 0; g0 < pre.rows(); g0 += group) {
          auto seg = pre.col(c).segment(g0, group);
          const double mx = seg.maxCoeff();
          auto e = (seg.array() - mx).exp();
          out.col(c).segment(g0, group) = (e / e.sum()).matrix();
        }
      }
      return out;
    }
  }
  return pre;
}

Mat activation_backward(const Mat& pre, const Mat& out, const Mat& dy, Activation act, int group) {
  switch (act) {
    case Activation::Identity: return dy;
    case Activation::Relu: return (pre.array() > 0.0).cast<double>() * dy.array();
    case Activation::Mish: return pre.unaryExpr([](double x) { return mish_derivative(x); }).cwiseProduct(dy);
    case Activation::Softmax: {
      Mat dx(dy.rows(), dy.cols());
      for (Eigen::Index c = 0; c < dy.cols(); ++c) {
        for (Eigen::Index g0 = 0; g0 < dy.rows(); g0 += group) {
          auto y = out.col(c).segment(g0, group);
          auto g = dy.col(c).segment(g0, group);
          const double dot = y.dot(g);
          dx.col(c).segment(g0, group) = y.cwiseProduct((g.array() - dot).matrix());
        }
      }
      return dx;
    }
  }
  return dy;
}

void init_uniform(Mat& w, Vec& b, int in, Rng& rng, double scale = 1.0) {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = dist(rng);
}

}  // namespace

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Mish: return "mish";
    case Activation::Softmax: return "softmax";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "mish") return Activation::Mish;
  if (name == "softmax") return Activation::Softmax;
  throw ConfigError("unknown activation '" + name + "'");
}

double mish(double x) { return x * std::tanh(softplus(x)); }

double mish_derivative(double x) {
  const double sp = softplus(x);
  const double th = std::tanh(sp);
  const double sig = 1.0 / (1.0 + std::exp(-x));
  return th + x * (1.0 - th * th) * sig;
}

void add_into(Gradients& acc, const Gradients& g, double scale) {
  if (acc.size() != g.size()) throw ArgumentError("gradient registries differ in length");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * g[i];
}

double squared_norm(const Gradients& g) {
  double s = 0.0;
  for (const Mat& m : g) s += m.squaredNorm();
  return s;
}

DenseNet DenseNet::mlp(const std::vector<int>& dims, Activation hidden, Activation out, Rng& rng,
                       int softmax_group) {
  if (dims.size() < 2) throw ArgumentError("mlp needs at least input and output dims");
  DenseNet net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    net.add_dense(dims[i], dims[i + 1], last ? out : hidden, rng, last ? softmax_group : 0);
  }
  return net;
}

void DenseNet::add_dense(int in, int out, Activation act, Rng& rng, int softmax_group) {
  if (!layers_.empty() && output_dim() != in)
    throw ArgumentError("layer input " + std::to_string(in) + " does not chain onto " + std::to_string(output_dim()));
  if (act == Activation::Softmax && (softmax_group <= 0 || out % softmax_group != 0))
    throw ArgumentError("softmax group must divide the layer width");
  Layer l;
  l.kind = Layer::Kind::Dense;
  l.weight = Mat(out, in);
  l.bias = Vec(out);
  l.act = act;
  l.group = softmax_group;
  init_uniform(l.weight, l.bias, in, rng);
  layers_.push_back(std::move(l));
}

void DenseNet::add_residual(int width, Rng& rng) {
  if (!layers_.empty() && output_dim() != width) throw ArgumentError("residual width does not chain");
  Layer l;
  l.kind = Layer::Kind::Residual;
  l.weight = Mat(width, width);
  l.bias = Vec(width);
  l.act = Activation::Mish;
  init_uniform(l.weight, l.bias, width, rng, 0.5);
  layers_.push_back(std::move(l));
}

int DenseNet::input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
int DenseNet::output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

Mat DenseNet::forward(const Mat& x) const {
  Tape tape;
  return forward(x, tape);
}

Mat DenseNet::forward(const Mat& x, Tape& tape) const {
  if (x.rows() != input_dim() && !layers_.empty())
    throw ArgumentError("input has " + std::to_string(x.rows()) + " rows, net expects " + std::to_string(input_dim()));
  tape = Tape{};
  tape.inputs.reserve(layers_.size());
  Mat h = x;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    tape.inputs.push_back(h);
    if (l.kind == Layer::Kind::Dense) {
      Mat pre = l.weight * h;
      pre.colwise() += l.bias;
      h = apply_activation(pre, l.act, l.group);
      tape.pre.push_back(std::move(pre));
      tape.inner.emplace_back();
      tape.inv_std.emplace_back();
    } else {
      const Eigen::RowVectorXd mean = h.colwise().mean();
      Mat centered = h.rowwise() - mean;
      const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
      Vec inv_std = (var.array() + kNormEps).rsqrt().transpose();
      Mat u = centered * inv_std.asDiagonal();
      Mat m = u.unaryExpr([](double v) { return mish(v); });
      Mat y = h + l.weight * m;
      y.colwise() += l.bias;
      tape.pre.push_back(std::move(u));
      tape.inner.push_back(std::move(m));
      tape.inv_std.push_back(std::move(inv_std));
      h = std::move(y);
    }
    if (!h.allFinite()) throw NumericError("non-finite activation", static_cast<int>(li));
  }
  tape.output = h;
  return h;
}

Mat DenseNet::backward(const Tape& tape, const Mat& upstream, Gradients* grads, bool skip_last_activation) const {
  if (grads != nullptr && grads->size() != 2 * layers_.size()) *grads = zero_gradients();
  Mat dy = upstream;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& l = layers_[li];
    const Mat& x = tape.inputs[li];
    if (l.kind == Layer::Kind::Dense) {
      const Mat& out = li + 1 < layers_.size() ? tape.inputs[li + 1] : tape.output;
      Mat dpre = (skip_last_activation && li + 1 == layers_.size())
                     ? dy
                     : activation_backward(tape.pre[li], out, dy, l.act, l.group);
      if (grads != nullptr) {
        (*grads)[2 * li].noalias() += dpre * x.transpose();
        (*grads)[2 * li + 1] += dpre.rowwise().sum();
      }
      dy = l.weight.transpose() * dpre;
    } else {
      const Mat& u = tape.pre[li];
      const Mat& m = tape.inner[li];
      if (grads != nullptr) {
        (*grads)[2 * li].noalias() += dy * m.transpose();
        (*grads)[2 * li + 1] += dy.rowwise().sum();
      }
      Mat du = (l.weight.transpose() * dy).cwiseProduct(u.unaryExpr([](double v) { return mish_derivative(v); }));
      // standardization backward, per column
      const double n = static_cast<double>(u.rows());
      const Eigen::RowVectorXd mean_du = du.colwise().sum() / n;
      const Eigen::RowVectorXd mean_du_u = du.cwiseProduct(u).colwise().sum() / n;
      Mat dx = du.rowwise() - mean_du;
      dx -= u * mean_du_u.asDiagonal();
      dx = dx * tape.inv_std[li].asDiagonal();
      dy += dx;
    }
  }
  return dy;
}

Mat DenseNet::grad_input(const Mat& x, const Mat& upstream) const {
  Tape tape;
  forward(x, tape);
  return backward(tape, upstream, nullptr);
}

std::vector<ParamRef> DenseNet::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    Layer& l = layers_[li];
    const std::string prefix = "layer" + std::to_string(li);
    out.push_back({prefix + ".weight", Eigen::Map<Mat>(l.weight.data(), l.weight.rows(), l.weight.cols())});
    out.push_back({prefix + ".bias", Eigen::Map<Mat>(l.bias.data(), l.bias.size(), 1)});
  }
  return out;
}

Gradients DenseNet::zero_gradients() const {
  Gradients g;
  for (const Layer& l : layers_) {
    g.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    g.push_back(Mat::Zero(l.bias.size(), 1));
  }
  return g;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

bool DenseNet::parameters_finite() const {
  for (const Layer& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

nlohmann::json DenseNet::architecture() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : layers_) {
    layers.push_back({{"kind", l.kind == Layer::Kind::Dense ? "dense" : "residual"},
                      {"in", l.weight.cols()},
                      {"out", l.weight.rows()},
                      {"activation", activation_name(l.act)},
                      {"group", l.group}});
  }
  return {{"layers", layers}};
}

DenseNet DenseNet::from_architecture(const nlohmann::json& arch) {
  DenseNet net;
  Rng rng(0);
  for (const auto& l : arch.at("layers")) {
    const std::string kind = l.at("kind").get<std::string>();
    if (kind == "dense") {
      net.add_dense(l.at("in").get<int>(), l.at("out").get<int>(),
                    parse_activation(l.at("activation").get<std::string>()), rng, l.at("group").get<int>());
    } else if (kind == "residual") {
      net.add_residual(l.at("in").get<int>(), rng);
    } else {
      throw ConfigError("unknown layer kind '" + kind + "'");
    }
  }
  return net;
}

Mat jvp(const DenseNet& net, const Mat& x, const Mat& v, double eps) {
  if (!(eps > 0.0)) throw ArgumentError("jvp step eps must be positive");
  if (!v.allFinite()) throw ArgumentError("jvp direction must be finite");
  return (net.forward(x + eps * v) - net.forward(x)) / eps;
}

TimeEmbedding::TimeEmbedding(int dim, Rng& rng) : dim_(dim) {
  if (dim <= 0 || dim % 2 != 0) throw ArgumentError("time embedding dimension must be positive and even");
  linear_.add_dense(dim, dim, Activation::Identity, rng);
}

Mat TimeEmbedding::features(const Vec& t) const {
  Mat f(dim_, t.size());
  const int half = dim_ / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / dim_);
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      f(2 * i, j) = std::sin(w * t[j]);
      f(2 * i + 1, j) = std::cos(w * t[j]);
    }
  }
  return f;
}

Mat TimeEmbedding::features_dt(const Vec& t) const {
  Mat f(dim_, t.size());
  const int half = dim_ / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / dim_);
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      f(2 * i, j) = w * std::cos(w * t[j]);
      f(2 * i + 1, j) = -w * std::sin(w * t[j]);
    }
  }
  return f;
}

Mat TimeEmbedding::forward(const Vec& t) const { return linear_.forward(features(t)); }

Mat rademacher(Rng& rng, int d, int probes) {
  std::bernoulli_distribution coin(0.5);
  Mat v(d, probes);
  for (int j = 0; j < probes; ++j)
    for (int i = 0; i < d; ++i) v(i, j) = coin(rng) ? 1.0 : -1.0;
  return v;
}

SecondDerivs second_derivs(const ScalarField& phi, const Vec& t, const Mat& z, const SecondDerivOptions& opts) {
  const Eigen::Index n = z.cols();
  const int d = static_cast<int>(z.rows());
  SecondDerivs out;
  phi.gradients(t, z, &out.dt, &out.grad);

  Vec dt_plus, dt_minus;
  phi.gradients((t.array() + opts.h_t).matrix(), z, &dt_plus, nullptr);
  phi.gradients((t.array() - opts.h_t).matrix(), z, &dt_minus, nullptr);
  out.dtt = (dt_plus - dt_minus) / (2.0 * opts.h_t);

  // Directions per sample; all shifted points are evaluated as one batch.
  Mat dirs;
  int per_sample = 0;
  if (opts.mode == LaplacianMode::Coordinate) {
    dirs = Mat::Identity(d, d);
    per_sample = d;
  } else {
    Rng rng = make_rng(opts.seed, 17);
    dirs = rademacher(rng, d, opts.probes);
    per_sample = opts.probes;
  }
  Mat zp(d, n * per_sample), zm(d, n * per_sample);
  Vec tt(n * per_sample);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int p = 0; p < per_sample; ++p) {
      const Eigen::Index c = j * per_sample + p;
      zp.col(c) = z.col(j) + opts.h_z * dirs.col(p);
      zm.col(c) = z.col(j) - opts.h_z * dirs.col(p);
      tt[c] = t[j];
    }
  }
  Mat gp, gm;
  phi.gradients(tt, zp, nullptr, &gp);
  phi.gradients(tt, zm, nullptr, &gm);
  out.lap = Vec::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int p = 0; p < per_sample; ++p) {
      const Eigen::Index c = j * per_sample + p;
      acc += dirs.col(p).dot(gp.col(c) - gm.col(c)) / (2.0 * opts.h_z);
    }
    out.lap[j] = opts.mode == LaplacianMode::Coordinate ? acc : acc / per_sample;
  }
  return out;
}

double Optimizer::current_lr() const {
  if (cfg_.cosine_period <= 0) return cfg_.lr;
  const double phase = static_cast<double>(steps_ % cfg_.cosine_period) / static_cast<double>(cfg_.cosine_period);
  return cfg_.min_lr + 0.5 * (cfg_.lr - cfg_.min_lr) * (1.0 + std::cos(M_PI * phase));
}

void Optimizer::step(std::vector<ParamRef>& params, const Gradients& grads) {
  if (params.size() != grads.size()) throw ArgumentError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.rows() != grads[i].rows() || params[i].value.cols() != grads[i].cols())
      throw ArgumentError("optimizer: shape mismatch for " + params[i].name);
  }
  if (m_.empty()) {
    for (const Mat& g : grads) {
      m_.push_back(Mat::Zero(g.rows(), g.cols()));
      v_.push_back(Mat::Zero(g.rows(), g.cols()));
    }
  }
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = std::sqrt(squared_norm(grads));
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  const double lr = current_lr();
  ++steps_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    const Mat g = scale * grads[i];
    if (cfg_.kind == OptimizerKind::Sgd) {
      if (cfg_.momentum > 0.0) {
        m_[i] = cfg_.momentum * m_[i] + g;
        p -= lr * m_[i];
      } else {
        p -= lr * g;
      }
    } else {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
      const Mat mhat = m_[i] / bc1;
      const Mat vhat = v_[i] / bc2;
      p -= lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix() + lr * cfg_.weight_decay * p;
    }
  }
}

}  // namespace chemflow::diffnet
