#include "chemflow/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace chemflow::surrogate {

PropertyOracle make_oracle(molkit::PropertyKind kind, const molkit::NormStats* stats) {
  if (kind == molkit::PropertyKind::Plogp && stats == nullptr)
    throw ConfigError("plogp oracle requires corpus normalization stats");
  std::optional<molkit::NormStats> copy;
  if (stats != nullptr) copy = *stats;
  return [kind, copy](const molkit::MolGraph& g) {
    return molkit::compute_property(kind, g, copy ? &*copy : nullptr);
  };
}

SurrogateModel::SurrogateModel(int input_dim, const SurrogateConfig& cfg, Rng& rng) {
  if (cfg.width < 1 || cfg.blocks < 0) throw ConfigError("surrogate width must be positive");
  net_.add_dense(input_dim, cfg.width, diffnet::Activation::Identity, rng);
  for (int b = 0; b < cfg.blocks; ++b) net_.add_residual(cfg.width, rng);
  net_.add_dense(cfg.width, 1, diffnet::Activation::Identity, rng);
}

Vec SurrogateModel::predict_normalized(const Mat& probs) const { return net_.forward(probs).row(0).transpose(); }

Vec SurrogateModel::predict(const Mat& probs) const {
  return (predict_normalized(probs).array() * norm.std + norm.mean).matrix();
}

void SurrogateModel::save(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest) const {
  Checkpoint ck;
  ck.header["kind"] = "surrogate";
  ck.add_net("surrogate", net_);
  save_checkpoint(ck, checkpoint);
  nlohmann::json m = {{"property", std::string(molkit::property_name(kind))},
                      {"mean", norm.mean},
                      {"std", norm.std},
                      {"checkpoint", checkpoint.filename().string()}};
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << m.dump(2) << '\n';
}

SurrogateModel SurrogateModel::load(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot read " + manifest.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed surrogate manifest: " + std::string(e.what()));
  }
  SurrogateModel s;
  s.kind = molkit::parse_property(m.at("property").get<std::string>());
  s.norm = {m.at("mean").get<double>(), m.at("std").get<double>()};
  const auto ck = load_checkpoint(manifest.parent_path() / m.at("checkpoint").get<std::string>());
  s.net_ = ck.net("surrogate");
  return s;
}

Vec predict_latent(const SurrogateModel& s, const genvae::VaeModel& vae, const Mat& z) {
  return s.predict_normalized(vae.decode_probs(z));
}

Mat grad_wrt_latent(const SurrogateModel& s, const genvae::VaeModel& vae, const Mat& z) {
  const Mat probs = vae.decode_probs(z);
  const Mat dprobs = s.net().grad_input(probs, Mat::Ones(1, z.cols()));
  return vae.decode_vjp(z, dprobs);
}

LabelledSet sample_labelled(const genvae::VaeModel& vae, const PropertyOracle& oracle, int n, Rng& rng) {
  LabelledSet set;
  set.z = standard_normal(rng, vae.latent_dim(), n);
  set.probs = vae.decode_probs(set.z);
  set.labels.resize(n);
  for (int j = 0; j < n; ++j) {
    const auto seq = genvae::argmax_sequence(set.probs.col(j), vae.config().length);
    set.labels[j] = oracle(molkit::decode(seq));
  }
  return set;
}

namespace {

double mse(const SurrogateModel& m, const Mat& x, const Vec& y) {
  if (x.cols() == 0) return 0.0;
  return (m.predict_normalized(x) - y).squaredNorm() / static_cast<double>(x.cols());
}

}  // namespace

TrainResult train_surrogate(const genvae::VaeModel& vae, const PropertyOracle& oracle, molkit::PropertyKind kind,
                            const TrainOptions& opts) {
  if (opts.n_train < 2 || opts.n_val < 0 || opts.epochs < 0 || opts.batch_size < 1)
    throw ConfigError("surrogate training sizes are invalid");
  Rng data_rng = make_rng(opts.seed, 401);
  const LabelledSet train = sample_labelled(vae, oracle, opts.n_train, data_rng);
  const LabelledSet val = sample_labelled(vae, oracle, opts.n_val, data_rng);

  const double mean = train.labels.mean();
  const double var = (train.labels.array() - mean).square().mean();
  if (!(var > 0.0)) throw DegenerateError("degenerate property: training labels have zero variance");

  Rng init_rng = make_rng(opts.seed, 402);
  TrainResult result;
  SurrogateModel model(vae.input_dim(), opts.net, init_rng);
  model.kind = kind;
  model.norm = {mean, std::sqrt(var)};
  const Vec y_train = (train.labels.array() - mean) / model.norm.std;
  const Vec y_val = (val.labels.array() - mean) / model.norm.std;

  diffnet::Optimizer opt(opts.opt);
  Rng rng = make_rng(opts.seed, 403);
  std::vector<Eigen::Index> order(opts.n_train);
  std::iota(order.begin(), order.end(), 0);

  const bool has_val = opts.n_val > 0;
  const Mat& xv = has_val ? val.probs : train.probs;
  const Vec& yv = has_val ? y_val : y_train;
  result.model = model;
  result.val_mse = mse(model, xv, yv);

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (int i = 0; i < opts.n_train; i += opts.batch_size) {
      const int end = std::min(opts.n_train, i + opts.batch_size);
      const int b = end - i;
      Mat x(train.probs.rows(), b);
      Vec y(b);
      for (int k = 0; k < b; ++k) {
        x.col(k) = train.probs.col(order[i + k]);
        y[k] = y_train[order[i + k]];
      }
      diffnet::DenseNet::Tape tape;
      const Mat pred = model.net().forward(x, tape);
      const Vec err = pred.row(0).transpose() - y;
      sum += err.squaredNorm();
      diffnet::Gradients g = model.net().zero_gradients();
      model.net().backward(tape, (2.0 / b) * err.transpose(), &g);
      auto params = model.net().parameters();
      opt.step(params, g);
    }
    EpochLog log{epoch, sum / opts.n_train, mse(model, xv, yv)};
    if (!std::isfinite(log.train_mse) || !std::isfinite(log.val_mse))
      throw TrainingError("surrogate loss diverged", epoch);
    result.curve.push_back(log);
    if (log.val_mse < result.val_mse) {
      result.val_mse = log.val_mse;
      result.model = model;
    }
  }
  const double yv_var = (yv.array() - yv.mean()).square().mean();
  result.val_r2 = yv_var > 0.0 ? 1.0 - result.val_mse / yv_var : 0.0;
  return result;
}

}  // namespace chemflow::surrogate
