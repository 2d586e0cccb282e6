#include "chemflow/genvae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace chemflow::genvae {

using molkit::kAlphabetSize;
using molkit::TokenSequence;

nlohmann::json config_to_json(const VaeConfig& c) {
  return {{"length", c.length},         {"latent", c.latent},   {"enc_hidden", c.enc_hidden},
          {"dec_hidden", c.dec_hidden}, {"beta_kl", c.beta_kl}};
}

VaeConfig config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.length = j.value("length", c.length);
  c.latent = j.value("latent", c.latent);
  c.enc_hidden = j.value("enc_hidden", c.enc_hidden);
  c.dec_hidden = j.value("dec_hidden", c.dec_hidden);
  c.beta_kl = j.value("beta_kl", c.beta_kl);
  if (c.length < 1 || c.latent < 1) throw ConfigError("vae length and latent must be positive");
  return c;
}

Mat one_hot(const std::vector<TokenSequence>& seqs, int length) {
  Mat x = Mat::Zero(length * kAlphabetSize, static_cast<Eigen::Index>(seqs.size()));
  for (std::size_t j = 0; j < seqs.size(); ++j) {
    if (static_cast<int>(seqs[j].tokens.size()) != length)
      throw ArgumentError("sequence length " + std::to_string(seqs[j].tokens.size()) + " != " +
                          std::to_string(length));
    for (int p = 0; p < length; ++p) x(p * kAlphabetSize + molkit::token_index(seqs[j].tokens[p]), j) = 1.0;
  }
  return x;
}

VaeModel::VaeModel(const VaeConfig& cfg, Rng& rng) : cfg_(cfg) {
  using diffnet::Activation;
  std::vector<int> enc_dims{input_dim()};
  enc_dims.insert(enc_dims.end(), cfg.enc_hidden.begin(), cfg.enc_hidden.end());
  enc_dims.push_back(2 * cfg.latent);
  enc_ = diffnet::DenseNet::mlp(enc_dims, Activation::Mish, Activation::Identity, rng);

  std::vector<int> dec_dims{cfg.latent};
  dec_dims.insert(dec_dims.end(), cfg.dec_hidden.begin(), cfg.dec_hidden.end());
  dec_dims.push_back(input_dim());
  dec_ = diffnet::DenseNet::mlp(dec_dims, Activation::Mish, Activation::Softmax, rng, kAlphabetSize);
}

void VaeModel::encode(const Mat& x, Mat& mu, Mat& logvar) const {
  const Mat h = enc_.forward(x);
  mu = h.topRows(cfg_.latent);
  logvar = h.bottomRows(cfg_.latent).cwiseMax(kLogvarMin).cwiseMin(kLogvarMax);
}

Mat VaeModel::encode_mean(const std::vector<TokenSequence>& seqs) const {
  Mat mu, logvar;
  encode(one_hot(seqs, cfg_.length), mu, logvar);
  return mu;
}

Mat VaeModel::decode_probs(const Mat& z) const { return dec_.forward(z); }

Mat VaeModel::decode_vjp(const Mat& z, const Mat& dprobs) const { return dec_.grad_input(z, dprobs); }

TokenSequence argmax_sequence(const Eigen::Ref<const Vec>& probs, int length) {
  TokenSequence s;
  s.tokens.resize(length);
  for (int p = 0; p < length; ++p) {
    Eigen::Index best = 0;
    probs.segment(p * kAlphabetSize, kAlphabetSize).maxCoeff(&best);
    s.tokens[p] = molkit::token_from_index(static_cast<int>(best));
  }
  return s;
}

std::vector<TokenSequence> VaeModel::decode_sequences(const Mat& z) const {
  const Mat p = decode_probs(z);
  std::vector<TokenSequence> out;
  out.reserve(p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j) out.push_back(argmax_sequence(p.col(j), cfg_.length));
  return out;
}

TokenSequence VaeModel::decode_molecule(const Vec& z) const { return decode_sequences(z).front(); }

void VaeModel::to_checkpoint(Checkpoint& ck, const std::string& prefix) const {
  ck.header["vae_config"] = config_to_json(cfg_);
  ck.add_net(prefix + "/encoder", enc_);
  ck.add_net(prefix + "/decoder", dec_);
}

VaeModel VaeModel::from_checkpoint(const Checkpoint& ck, const std::string& prefix) {
  if (!ck.header.contains("vae_config")) throw IoError("checkpoint has no vae_config");
  VaeModel m;
  m.cfg_ = config_from_json(ck.header["vae_config"]);
  m.enc_ = ck.net(prefix + "/encoder");
  m.dec_ = ck.net(prefix + "/decoder");
  if (m.enc_.input_dim() != m.input_dim() || m.dec_.input_dim() != m.cfg_.latent)
    throw IoError("vae checkpoint shapes do not match its config");
  return m;
}

void VaeModel::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.header["kind"] = "vae";
  to_checkpoint(ck);
  save_checkpoint(ck, path);
}

VaeModel VaeModel::load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

Mat sample_z(const Mat& mu, const Mat& logvar, Rng& rng) {
  const Mat eps = standard_normal(rng, mu.rows(), mu.cols());
  return mu + (0.5 * logvar.array()).exp().matrix().cwiseProduct(eps);
}

Vec kl_divergence(const Mat& mu, const Mat& logvar) {
  return (0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).colwise().sum()).transpose();
}

BatchLoss batch_loss(const VaeModel& model, const Mat& x, Rng& rng, diffnet::Gradients* enc_grads,
                     diffnet::Gradients* dec_grads, double beta, const LatentTerm* extra) {
  const int d = model.latent_dim();
  const double b = static_cast<double>(x.cols());

  diffnet::DenseNet::Tape enc_tape, dec_tape;
  const Mat h = model.encoder().forward(x, enc_tape);
  const Mat mu = h.topRows(d);
  const Mat raw_lv = h.bottomRows(d);
  const Mat logvar = raw_lv.cwiseMax(kLogvarMin).cwiseMin(kLogvarMax);
  const Mat sigma = (0.5 * logvar.array()).exp().matrix();
  const Mat eps = standard_normal(rng, d, x.cols());
  const Mat z = mu + sigma.cwiseProduct(eps);
  const Mat p = model.decoder().forward(z, dec_tape);

  BatchLoss r;
  // Only the target entries contribute to the cross-entropy.
  r.recon = -(x.array() * p.array().max(1e-300).log()).sum() / b;
  r.kl = kl_divergence(mu, logvar).sum() / b;

  Mat dz_extra;
  if (extra != nullptr && *extra) {
    dz_extra = Mat::Zero(d, x.cols());
    r.extra = (*extra)(z, dz_extra);
  }
  if (enc_grads == nullptr) return r;

  const Mat dlogits = (p - x) / b;
  Mat dz = model.decoder().backward(dec_tape, dlogits, dec_grads, true);
  if (dz_extra.size() > 0) dz += dz_extra;

  Mat dh(2 * d, x.cols());
  dh.topRows(d) = dz + (beta / b) * mu;
  Mat dlv = dz.cwiseProduct(eps).cwiseProduct(sigma) * 0.5 +
            (beta / b) * 0.5 * (logvar.array().exp() - 1.0).matrix();
  for (Eigen::Index i = 0; i < dlv.size(); ++i)
    if (raw_lv(i) < kLogvarMin || raw_lv(i) > kLogvarMax) dlv(i) = 0.0;
  dh.bottomRows(d) = dlv;
  model.encoder().backward(enc_tape, dh, enc_grads);
  return r;
}

namespace {

std::vector<TokenSequence> gather(const std::vector<TokenSequence>& data, const std::vector<std::size_t>& idx,
                                  std::size_t begin, std::size_t end) {
  std::vector<TokenSequence> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(data[idx[i]]);
  return out;
}

}  // namespace

Split split_data(const std::vector<TokenSequence>& data, double val_fraction, std::uint64_t seed) {
  if (data.empty()) throw ArgumentError("empty training set");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must lie in [0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 101);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(data.size())));
  if (val_fraction > 0.0 && n_val == 0 && data.size() > 1) n_val = 1;
  Split s;
  const std::size_t n_train = data.size() - n_val;
  s.train = gather(data, idx, 0, n_train);
  s.val = gather(data, idx, n_train, data.size());
  return s;
}

EpochStats evaluate(const VaeModel& model, const std::vector<TokenSequence>& data, std::uint64_t seed) {
  EpochStats s;
  if (data.empty()) return s;
  Rng rng = make_rng(seed, 202);
  const std::size_t chunk = 512;
  for (std::size_t i = 0; i < data.size(); i += chunk) {
    std::vector<TokenSequence> part(data.begin() + i, data.begin() + std::min(data.size(), i + chunk));
    const auto r = batch_loss(model, one_hot(part, model.config().length), rng, nullptr, nullptr, model.config().beta_kl);
    s.recon += r.recon * part.size();
    s.kl += r.kl * part.size();
  }
  s.recon /= data.size();
  s.kl /= data.size();
  s.total = s.recon + model.config().beta_kl * s.kl;
  s.val_total = s.total;
  return s;
}

TrainResult train_vae(const VaeModel& init, const std::vector<TokenSequence>& data, const TrainOptions& opts,
                      const LatentTerm& extra) {
  if (opts.epochs < 0 || opts.batch_size < 1) throw ConfigError("epochs must be >= 0 and batch_size >= 1");
  const Split split = split_data(data, opts.val_fraction, opts.seed);
  const auto& train = split.train;
  const auto& val = split.val.empty() ? split.train : split.val;

  VaeModel model = init;
  const long steps_per_epoch = static_cast<long>((train.size() + opts.batch_size - 1) / opts.batch_size);
  diffnet::OptimizerConfig oc = opts.opt;
  if (opts.cosine && oc.cosine_period == 0) oc.cosine_period = std::max(1L, steps_per_epoch * opts.epochs);
  if (!opts.cosine) oc.cosine_period = 0;
  diffnet::Optimizer enc_opt(oc), dec_opt(oc);

  TrainResult result;
  result.model = model;
  // Non-finite activations anywhere in training surface as TrainingError
  // tagged with the epoch (0 for the pre-training validation pass).
  auto guarded_eval = [&](int epoch) {
    try {
      return evaluate(model, val, opts.seed).total;
    } catch (const NumericError& e) {
      throw TrainingError(std::string("vae training diverged: ") + e.what(), epoch);
    }
  };
  result.best_val = guarded_eval(0);
  result.best_epoch = 0;

  Rng rng = make_rng(opts.seed, 303);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats st;
    st.epoch = epoch;
    const double beta =
        model.config().beta_kl *
        (opts.kl_warmup_epochs > 0 ? std::min(1.0, static_cast<double>(epoch) / opts.kl_warmup_epochs) : 1.0);
    for (std::size_t i = 0; i < train.size(); i += opts.batch_size) {
      const std::size_t end = std::min(train.size(), i + opts.batch_size);
      const Mat x = one_hot(gather(train, order, i, end), model.config().length);
      diffnet::Gradients ge = model.encoder().zero_gradients(), gd = model.decoder().zero_gradients();
      BatchLoss r;
      try {
        r = batch_loss(model, x, rng, &ge, &gd, beta, &extra);
      } catch (const NumericError& e) {
        throw TrainingError(std::string("vae training diverged: ") + e.what(), epoch);
      }
      const double loss = r.recon + beta * r.kl + r.extra;
      if (!std::isfinite(loss)) throw TrainingError("vae loss diverged", epoch);
      const double w = static_cast<double>(end - i);
      st.recon += r.recon * w;
      st.kl += r.kl * w;
      st.extra += r.extra * w;
      auto pe = model.encoder().parameters();
      auto pd = model.decoder().parameters();
      enc_opt.step(pe, ge);
      dec_opt.step(pd, gd);
    }
    const double n = static_cast<double>(train.size());
    st.recon /= n;
    st.kl /= n;
    st.extra /= n;
    st.total = st.recon + model.config().beta_kl * st.kl + st.extra;
    st.val_total = guarded_eval(epoch);
    if (!std::isfinite(st.total) || !std::isfinite(st.val_total)) throw TrainingError("vae loss diverged", epoch);
    result.curve.push_back(st);
    if (st.val_total < result.best_val) {
      result.best_val = st.val_total;
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  // With no epochs run the initial model is returned unchanged.
  return result;
}

Accuracy reconstruction_accuracy(const VaeModel& model, const std::vector<TokenSequence>& seqs) {
  Accuracy acc;
  if (seqs.empty()) return acc;
  const auto recon = model.decode_sequences(model.encode_mean(seqs));
  long all_hit = 0, all_n = 0, content_hit = 0, content_n = 0;
  for (std::size_t j = 0; j < seqs.size(); ++j) {
    const std::size_t content_len = seqs[j].content().size();
    for (std::size_t p = 0; p < seqs[j].tokens.size(); ++p) {
      const bool hit = recon[j].tokens[p] == seqs[j].tokens[p];
      all_hit += hit;
      ++all_n;
      if (p < content_len) {
        content_hit += hit;
        ++content_n;
      }
    }
  }
  acc.all_positions = static_cast<double>(all_hit) / all_n;
  acc.content = content_n ? static_cast<double>(content_hit) / content_n : 1.0;
  return acc;
}

void write_curve_csv(const std::vector<EpochStats>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,recon,kl,total,val_total\n";
  for (const auto& s : curve) out << s.epoch << ',' << s.recon << ',' << s.kl << ',' << s.total << ',' << s.val_total << '\n';
}

}  // namespace chemflow::genvae
