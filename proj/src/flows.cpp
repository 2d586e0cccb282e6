#include "chemflow/flows.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace chemflow::flows {

using diffnet::Gradients;

std::string pde_name(PdeKind k) { return k == PdeKind::Hj ? "hj" : "wave"; }

PdeKind parse_pde(const std::string& s) {
  if (s == "hj") return PdeKind::Hj;
  if (s == "wave") return PdeKind::Wave;
  throw ConfigError("unknown pde kind '" + s + "' (expected hj or wave)");
}

std::string direction_name(Direction d) { return d == Direction::Maximize ? "maximize" : "minimize"; }

Direction parse_direction(const std::string& s) {
  if (s == "maximize" || s == "max") return Direction::Maximize;
  if (s == "minimize" || s == "min") return Direction::Minimize;
  throw ConfigError("unknown direction '" + s + "'");
}

// EnergyField ---------------------------------------------------------------

EnergyField::EnergyField(int latent_dim, const FieldConfig& cfg, Rng& rng)
    : dim_(latent_dim), cfg_(cfg), emb_(cfg.embed_dim, rng) {
  if (latent_dim < 1) throw ConfigError("latent dimension must be positive");
  if (cfg.horizon < 1) throw ConfigError("flow horizon T must be >= 1");
  std::vector<int> dims{cfg.embed_dim + latent_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);
  net_ = diffnet::DenseNet::mlp(dims, diffnet::Activation::Mish, diffnet::Activation::Identity, rng);
}

Mat EnergyField::input(const Vec& t, const Mat& z) const {
  if (z.rows() != dim_ || t.size() != z.cols()) throw ArgumentError("energy field input shape mismatch");
  Mat in(cfg_.embed_dim + dim_, z.cols());
  in.topRows(cfg_.embed_dim) = emb_.forward(t);
  in.bottomRows(dim_) = z;
  return in;
}

Vec EnergyField::value(const Vec& t, const Mat& z) const { return net_.forward(input(t, z)).row(0).transpose(); }

void EnergyField::gradients(const Vec& t, const Mat& z, Vec* dt, Mat* dz) const {
  const Mat din = net_.grad_input(input(t, z), Mat::Ones(1, z.cols()));
  if (dz != nullptr) *dz = din.bottomRows(dim_);
  if (dt != nullptr) {
    const Mat dfeat = emb_.linear().layers()[0].weight.transpose() * din.topRows(cfg_.embed_dim);
    *dt = dfeat.cwiseProduct(emb_.features_dt(t)).colwise().sum().transpose();
  }
}

Mat EnergyField::velocity(const Vec& t, const Mat& z) const {
  Mat g;
  gradients(t, z, nullptr, &g);
  return g;
}

Gradients EnergyField::param_grad(const Vec& t, const Mat& z, const Vec& w) const {
  diffnet::DenseNet::Tape te, tn;
  const Mat e = emb_.linear().forward(emb_.features(t), te);
  Mat in(cfg_.embed_dim + dim_, z.cols());
  in.topRows(cfg_.embed_dim) = e;
  in.bottomRows(dim_) = z;
  net_.forward(in, tn);
  Gradients gn, ge;
  const Mat din = net_.backward(tn, w.transpose(), &gn);
  emb_.linear().backward(te, din.topRows(cfg_.embed_dim), &ge);
  ge.insert(ge.end(), gn.begin(), gn.end());
  return ge;
}

std::vector<diffnet::ParamRef> EnergyField::parameters() {
  auto p = emb_.linear().parameters();
  for (auto& r : p) r.name = "embed." + r.name;
  for (auto& r : net_.parameters()) p.push_back({"mlp." + r.name, r.value});
  return p;
}

Gradients EnergyField::zero_gradients() const {
  Gradients g = emb_.linear().zero_gradients();
  for (auto& m : net_.zero_gradients()) g.push_back(std::move(m));
  return g;
}

void EnergyField::to_checkpoint(Checkpoint& ck, const std::string& prefix) const {
  ck.header["fields"][prefix] = {{"dim", dim_},
                                 {"embed_dim", cfg_.embed_dim},
                                 {"hidden", cfg_.hidden},
                                 {"pde_kind", pde_name(cfg_.pde)},
                                 {"c", cfg_.wave_speed},
                                 {"T", cfg_.horizon}};
  ck.add_net(prefix + "/embed", emb_.linear());
  ck.add_net(prefix + "/mlp", net_);
}

EnergyField EnergyField::from_checkpoint(const Checkpoint& ck, const std::string& prefix) {
  if (!ck.header.contains("fields") || !ck.header["fields"].contains(prefix))
    throw IoError("checkpoint has no energy field '" + prefix + "'");
  const auto& h = ck.header["fields"][prefix];
  FieldConfig cfg;
  cfg.embed_dim = h.at("embed_dim").get<int>();
  cfg.hidden = h.at("hidden").get<std::vector<int>>();
  cfg.pde = parse_pde(h.at("pde_kind").get<std::string>());
  cfg.wave_speed = h.at("c").get<double>();
  cfg.horizon = h.at("T").get<int>();
  Rng rng(0);
  EnergyField f(h.at("dim").get<int>(), cfg, rng);
  f.emb_.linear() = ck.net(prefix + "/embed");
  f.net_ = ck.net(prefix + "/mlp");
  return f;
}

// Residual values -------------------------------------------------------------

Vec hj_residual(const diffnet::ScalarField& phi, const Vec& t, const Mat& z) {
  Vec dt;
  Mat g;
  phi.gradients(t, z, &dt, &g);
  return dt + 0.5 * g.colwise().squaredNorm().transpose();
}

Vec wave_residual(const diffnet::ScalarField& phi, const Vec& t, const Mat& z, double c,
                  const diffnet::SecondDerivOptions& opts) {
  const auto s = diffnet::second_derivs(phi, t, z, opts);
  return s.dtt - c * c * s.lap;
}

// Training losses ---------------------------------------------------------------

Gradients directional_param_grad(const EnergyField& f, const Vec& t, const Mat& z, const Vec& ut, const Mat& uz,
                                 const Vec& w, double h, Mat* dz) {
  const Eigen::Index n = z.cols();
  Vec tp(2 * n), wp(2 * n);
  Mat zp(z.rows(), 2 * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double norm = std::sqrt(ut[j] * ut[j] + uz.col(j).squaredNorm());
    const double scale = norm > 0.0 ? h / norm : 0.0;
    tp[j] = t[j] + scale * ut[j];
    tp[n + j] = t[j] - scale * ut[j];
    zp.col(j) = z.col(j) + scale * uz.col(j);
    zp.col(n + j) = z.col(j) - scale * uz.col(j);
    const double coef = norm > 0.0 ? w[j] * norm / (2.0 * h) : 0.0;
    wp[j] = coef;
    wp[n + j] = -coef;
  }
  if (dz != nullptr) {
    const Mat g = f.velocity(tp, zp);
    *dz = (g.leftCols(n) - g.rightCols(n)) * wp.head(n).asDiagonal();
  }
  return f.param_grad(tp, zp, wp);
}

LossGrad hj_loss(const EnergyField& f, const Vec& t, const Mat& z, const StencilOptions& o, bool want_dz) {
  const Eigen::Index n = z.cols();
  Vec dt;
  Mat g;
  f.gradients(t, z, &dt, &g);
  const Vec r = dt + 0.5 * g.colwise().squaredNorm().transpose();
  LossGrad out;
  out.value = r.squaredNorm() / n;
  const Vec w = 2.0 * r / static_cast<double>(n);
  out.grad = directional_param_grad(f, t, z, Vec::Ones(n), g, w, o.h_dir, want_dz ? &out.dz : nullptr);
  return out;
}

LossGrad wave_loss(const EnergyField& f, const Vec& t, const Mat& z, const StencilOptions& o, Rng& rng,
                   bool want_dz) {
  const Eigen::Index n = z.cols();
  const int d = static_cast<int>(z.rows());
  const bool coord = o.lap_mode == diffnet::LaplacianMode::Coordinate;
  const int p = coord ? d : o.probes;
  const int per = 3 + 2 * p;  // center, t +- h, z +- h v_q
  const double c2 = f.config().wave_speed * f.config().wave_speed;
  const double lap_scale = coord ? 1.0 : 1.0 / p;

  Vec tp(n * per);
  Mat zp(d, n * per);
  Vec coef(n * per);  // r_j = sum_q coef_q phi(point_q)
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index base = j * per;
    const Mat dirs = coord ? Mat(Mat::Identity(d, d)) : diffnet::rademacher(rng, d, p);
    tp[base] = t[j];
    zp.col(base) = z.col(j);
    tp[base + 1] = t[j] + o.h_t;
    tp[base + 2] = t[j] - o.h_t;
    zp.col(base + 1) = z.col(j);
    zp.col(base + 2) = z.col(j);
    const double it2 = 1.0 / (o.h_t * o.h_t), iz2 = 1.0 / (o.h_z * o.h_z);
    coef[base] = -2.0 * it2 + c2 * lap_scale * 2.0 * iz2 * p;
    coef[base + 1] = it2;
    coef[base + 2] = it2;
    for (int q = 0; q < p; ++q) {
      const Eigen::Index a = base + 3 + 2 * q;
      tp[a] = tp[a + 1] = t[j];
      zp.col(a) = z.col(j) + o.h_z * dirs.col(q);
      zp.col(a + 1) = z.col(j) - o.h_z * dirs.col(q);
      coef[a] = coef[a + 1] = -c2 * lap_scale * iz2;
    }
  }
  const Vec phi = f.value(tp, zp);
  Vec r(n);
  for (Eigen::Index j = 0; j < n; ++j) r[j] = coef.segment(j * per, per).dot(phi.segment(j * per, per));

  LossGrad out;
  out.value = r.squaredNorm() / n;
  Vec w(n * per);
  for (Eigen::Index j = 0; j < n; ++j) w.segment(j * per, per) = (2.0 * r[j] / n) * coef.segment(j * per, per);
  out.grad = f.param_grad(tp, zp, w);
  if (want_dz) {
    const Mat g = f.velocity(tp, zp);
    out.dz = Mat::Zero(d, n);
    for (Eigen::Index j = 0; j < n; ++j) out.dz.col(j) = g.middleCols(j * per, per) * w.segment(j * per, per);
  }
  return out;
}

LossGrad residual_loss(const EnergyField& f, const Vec& t, const Mat& z, const StencilOptions& o, Rng& rng,
                       bool want_dz) {
  return f.config().pde == PdeKind::Hj ? hj_loss(f, t, z, o, want_dz) : wave_loss(f, t, z, o, rng, want_dz);
}

double boundary_loss(const std::vector<const diffnet::ScalarField*>& fields, const Mat& z0) {
  if (z0.cols() == 0) return 0.0;
  const Vec t0 = Vec::Zero(z0.cols());
  double total = 0.0;
  for (const auto* f : fields) {
    Mat g;
    f->gradients(t0, z0, nullptr, &g);
    total += g.squaredNorm();
  }
  return total / static_cast<double>(z0.cols());
}

LossGrad boundary_loss_grad(const EnergyField& f, const Mat& z0, const StencilOptions& o, bool want_dz) {
  const Eigen::Index n = z0.cols();
  const Vec t0 = Vec::Zero(n);
  const Mat g = f.velocity(t0, z0);
  LossGrad out;
  out.value = g.squaredNorm() / n;
  out.grad = directional_param_grad(f, t0, z0, Vec::Zero(n), g, Vec::Constant(n, 2.0 / n), o.h_dir,
                                    want_dz ? &out.dz : nullptr);
  return out;
}

GuidanceValue supervised_guidance_value(const Mat& grad_h, const Mat& grad_phi, Direction dir) {
  const double s = dir == Direction::Maximize ? 1.0 : -1.0;
  GuidanceValue v;
  v.d = s * grad_h.cwiseProduct(grad_phi).colwise().sum().transpose();
  double acc = 0.0;
  for (Eigen::Index j = 0; j < v.d.size(); ++j) {
    const double dj = v.d[j];
    acc += -(dj > 0.0 ? 1.0 : dj < 0.0 ? -1.0 : 0.0) * dj * dj;
  }
  v.loss = v.d.size() ? acc / v.d.size() : 0.0;
  return v;
}

LossGrad supervised_guidance(const EnergyField& f, const Mat& grad_h, const Vec& t, const Mat& z, Direction dir,
                             const StencilOptions& o) {
  const Eigen::Index n = z.cols();
  const double s = dir == Direction::Maximize ? 1.0 : -1.0;
  const auto gv = supervised_guidance_value(grad_h, f.velocity(t, z), dir);
  LossGrad out;
  out.value = gv.loss;
  const Vec w = (-2.0 / n) * gv.d.cwiseAbs();
  out.grad = directional_param_grad(f, t, z, Vec::Zero(n), s * grad_h, w, o.h_dir);
  return out;
}

double jvp_guidance_value(const diffnet::DenseNet& decoder, const Mat& z, const Mat& grad_phi, double eps) {
  if (z.cols() == 0) return 0.0;
  return -diffnet::jvp(decoder, z, grad_phi, eps).squaredNorm() / static_cast<double>(z.cols());
}

LossGrad jvp_guidance(const EnergyField& f, const genvae::VaeModel& vae, const Vec& t, const Mat& z,
                      const StencilOptions& o, double eps) {
  const Eigen::Index n = z.cols();
  const Mat g = f.velocity(t, z);
  const Mat y = diffnet::jvp(vae.decoder(), z, g, eps);
  LossGrad out;
  out.value = -y.squaredNorm() / n;
  // dL/dv = -2/n J^T y, taken by exact reverse mode through the decoder.
  const Mat dv = vae.decode_vjp(z, (-2.0 / n) * y);
  out.grad = directional_param_grad(f, t, z, Vec::Zero(n), dv, Vec::Ones(n), o.h_dir);
  return out;
}

double cross_entropy(const Mat& logits, const std::vector<int>& k, Mat* dlogits) {
  const Eigen::Index n = logits.cols();
  if (static_cast<Eigen::Index>(k.size()) != n) throw ArgumentError("label count does not match logits");
  double loss = 0.0;
  if (dlogits != nullptr) dlogits->resize(logits.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (k[j] < 0 || k[j] >= logits.rows())
      throw ArgumentError("flow index " + std::to_string(k[j]) + " outside 0.." + std::to_string(logits.rows() - 1));
    const double m = logits.col(j).maxCoeff();
    const Vec e = (logits.col(j).array() - m).exp();
    const double z = e.sum();
    loss += -(logits(k[j], j) - m - std::log(z));
    if (dlogits != nullptr) {
      dlogits->col(j) = e / z;
      (*dlogits)(k[j], j) -= 1.0;
    }
  }
  if (n > 0) {
    loss /= n;
    if (dlogits != nullptr) *dlogits /= static_cast<double>(n);
  }
  return loss;
}

double disentangle_loss(const diffnet::DenseNet& classifier, const Mat& x_t, const Mat& x_next,
                        const std::vector<int>& k) {
  Mat in(x_t.rows() + x_next.rows(), x_t.cols());
  in << x_t, x_next;
  return cross_entropy(classifier.forward(in), k);
}

// Training -----------------------------------------------------------------------

std::vector<Mat> rollout(const EnergyField& f, const Mat& z0, int steps) {
  std::vector<Mat> states{z0};
  states.reserve(steps + 1);
  for (int i = 0; i < steps; ++i) {
    const Vec t = Vec::Constant(z0.cols(), static_cast<double>(i));
    states.push_back(states.back() + f.velocity(t, states.back()));
  }
  return states;
}

namespace {

Mat pick_columns(const Mat& m, const std::vector<Eigen::Index>& idx) {
  Mat out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(i) = m.col(idx[i]);
  return out;
}

void scale_into(Gradients& acc, const Gradients& g, double s) {
  if (acc.empty()) {
    acc = g;
    for (auto& m : acc) m *= s;
  } else {
    diffnet::add_into(acc, g, s);
  }
}

nlohmann::json config_json(const FlowTrainConfig& c) {
  nlohmann::json j = {{"mode", c.mode == GuidanceMode::Supervised ? "supervised" : "unsupervised"},
                      {"K", c.num_flows},
                      {"pde_kind", pde_name(c.field.pde)},
                      {"T", c.field.horizon},
                      {"c", c.field.wave_speed},
                      {"embed_dim", c.field.embed_dim},
                      {"hidden", c.field.hidden},
                      {"classifier_hidden", c.classifier_hidden}};
  if (c.mode == GuidanceMode::Supervised) {
    j["property"] = std::string(molkit::property_name(c.property));
    j["direction"] = direction_name(c.direction);
  }
  return j;
}

}  // namespace

FlowTrainResult train_flows(const FlowTrainConfig& cfg, const genvae::VaeModel& vae, const Mat& z_pool,
                            const surrogate::SurrogateModel* surrogate) {
  const bool supervised = cfg.mode == GuidanceMode::Supervised;
  if (supervised && surrogate == nullptr) throw ConfigError("supervised flow training requires a surrogate");
  if (cfg.num_flows < 1) throw ConfigError("number of flows K must be >= 1");
  if (cfg.batch_size < 1 || cfg.iterations < 0) throw ConfigError("invalid flow batch size or iteration count");
  if (z_pool.cols() == 0 || z_pool.rows() != vae.latent_dim()) throw ConfigError("latent pool is empty or mis-shaped");

  const int d = vae.latent_dim();
  const int big_t = cfg.field.horizon;
  const int kk = cfg.num_flows;

  FlowTrainResult res;
  res.flows.config = cfg;
  for (int k = 0; k < kk; ++k) {
    Rng init = make_rng(cfg.seed, 600 + k);
    res.flows.fields.emplace_back(d, cfg.field, init);
  }
  std::vector<diffnet::Optimizer> opts(kk, diffnet::Optimizer(cfg.opt));
  diffnet::Optimizer cls_opt(cfg.opt);
  if (!supervised) {
    Rng init = make_rng(cfg.seed, 700);
    std::vector<int> dims{2 * vae.input_dim()};
    dims.insert(dims.end(), cfg.classifier_hidden.begin(), cfg.classifier_hidden.end());
    dims.push_back(kk);
    res.flows.classifier = diffnet::DenseNet::mlp(dims, diffnet::Activation::Mish, diffnet::Activation::Identity, init);
  }

  Rng rng = make_rng(cfg.seed, 501);
  std::uniform_int_distribution<Eigen::Index> pick(0, z_pool.cols() - 1);
  std::uniform_int_distribution<int> pick_t(0, big_t - 1), pick_k(0, kk - 1);
  const double b = static_cast<double>(cfg.batch_size);

  for (int it = 1; it <= cfg.iterations; ++it) {
    Mat z0(d, cfg.batch_size);
    std::vector<int> ts(cfg.batch_size), ks(cfg.batch_size);
    for (int j = 0; j < cfg.batch_size; ++j) {
      z0.col(j) = z_pool.col(pick(rng));
      ts[j] = pick_t(rng);
      ks[j] = pick_k(rng);
    }

    FlowLogRow row;
    row.iter = it;
    std::vector<Gradients> grads(kk);
    Gradients cls_grads;
    if (!supervised) cls_grads = res.flows.classifier.zero_gradients();

    for (int k = 0; k < kk; ++k) {
      EnergyField& f = res.flows.fields[k];
      const auto bl = boundary_loss_grad(f, z0, cfg.stencil);
      row.l_phi += bl.value;
      scale_into(grads[k], bl.grad, cfg.lambda_phi);

      std::vector<Eigen::Index> idx;
      for (int j = 0; j < cfg.batch_size; ++j)
        if (ks[j] == k) idx.push_back(j);
      if (idx.empty()) continue;
      const double share = static_cast<double>(idx.size()) / b;
      const Mat zk = pick_columns(z0, idx);
      const auto states = rollout(f, zk, big_t - 1);

      // Residual over every integer step 0..T-1 of the rolled trajectory.
      const Eigen::Index nk = zk.cols();
      Vec tr(nk * big_t);
      Mat zr(d, nk * big_t);
      for (int i = 0; i < big_t; ++i) {
        tr.segment(i * nk, nk).setConstant(static_cast<double>(i));
        zr.middleCols(i * nk, nk) = states[i];
      }
      const auto rl = residual_loss(f, tr, zr, cfg.stencil, rng);
      row.l_r += share * rl.value;
      scale_into(grads[k], rl.grad, cfg.lambda_r * share);

      // Guidance at the sampled endpoint step.
      Vec te(nk);
      Mat ze(d, nk);
      for (Eigen::Index i = 0; i < nk; ++i) {
        te[i] = ts[idx[i]];
        ze.col(i) = states[ts[idx[i]]].col(i);
      }
      if (supervised) {
        const Mat gh = surrogate::grad_wrt_latent(*surrogate, vae, ze);
        const auto gl = supervised_guidance(f, gh, te, ze, cfg.direction, cfg.stencil);
        row.l_guide += share * gl.value;
        scale_into(grads[k], gl.grad, cfg.lambda_guidance * share);
      } else {
        const auto jl = jvp_guidance(f, vae, te, ze, cfg.stencil);
        row.l_guide += share * jl.value;
        scale_into(grads[k], jl.grad, cfg.lambda_guidance * share);

        const Mat z_next = ze + f.velocity(te, ze);
        Mat in(2 * vae.input_dim(), nk);
        in << vae.decode_probs(ze), vae.decode_probs(z_next);
        diffnet::DenseNet::Tape tape;
        const Mat logits = res.flows.classifier.forward(in, tape);
        Mat dlogits;
        const double ce = cross_entropy(logits, std::vector<int>(nk, k), &dlogits);
        row.l_k += share * ce;
        dlogits *= cfg.lambda_k * share;
        const Mat din = res.flows.classifier.backward(tape, dlogits, &cls_grads);
        const Mat dz_next = vae.decode_vjp(z_next, din.bottomRows(vae.input_dim()));
        scale_into(grads[k], directional_param_grad(f, te, ze, Vec::Zero(nk), dz_next, Vec::Ones(nk),
                                                    cfg.stencil.h_dir),
                   1.0);
      }
    }
    row.total = cfg.lambda_r * row.l_r + cfg.lambda_phi * row.l_phi + cfg.lambda_guidance * row.l_guide +
                cfg.lambda_k * row.l_k;
    if (!std::isfinite(row.total)) throw TrainingError("flow loss diverged", it);
    for (int k = 0; k < kk; ++k) {
      if (!std::isfinite(diffnet::squared_norm(grads[k]))) throw TrainingError("flow gradient diverged", it);
      auto params = res.flows.fields[k].parameters();
      opts[k].step(params, grads[k]);
    }
    if (!supervised) {
      auto params = res.flows.classifier.parameters();
      cls_opt.step(params, cls_grads);
    }
    res.log.push_back(row);
  }
  return res;
}

void write_log_csv(const std::vector<FlowLogRow>& log, GuidanceMode mode, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  if (mode == GuidanceMode::Supervised) {
    out << "iter,L_r,L_phi,L_P,total\n";
    for (const auto& r : log) out << r.iter << ',' << r.l_r << ',' << r.l_phi << ',' << r.l_guide << ',' << r.total << '\n';
  } else {
    out << "iter,L_r,L_phi,L_J,L_k,total\n";
    for (const auto& r : log)
      out << r.iter << ',' << r.l_r << ',' << r.l_phi << ',' << r.l_guide << ',' << r.l_k << ',' << r.total << '\n';
  }
}

void FlowSet::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  Checkpoint ck;
  ck.header["kind"] = "flows";
  for (std::size_t k = 0; k < fields.size(); ++k) fields[k].to_checkpoint(ck, "flow" + std::to_string(k));
  const bool unsup = config.mode == GuidanceMode::Unsupervised;
  if (unsup) ck.add_net("classifier", classifier);
  save_checkpoint(ck, dir / "flows.ckpt");

  nlohmann::json m = config_json(config);
  m["checkpoint"] = "flows.ckpt";
  m["fields"] = nlohmann::json::array();
  for (std::size_t k = 0; k < fields.size(); ++k) {
    nlohmann::json f = {{"k", k},
                        {"pde_kind", pde_name(fields[k].config().pde)},
                        {"mode", unsup ? "unsupervised" : "supervised"},
                        {"T", fields[k].config().horizon},
                        {"c", fields[k].config().wave_speed}};
    if (!unsup) f["property"] = std::string(molkit::property_name(config.property));
    m["fields"].push_back(f);
  }
  std::ofstream out(dir / "flows.json");
  if (!out) throw IoError("cannot write " + (dir / "flows.json").string());
  out << m.dump(2) << '\n';
}

FlowSet FlowSet::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "flows.json");
  if (!in) throw IoError("cannot read " + (dir / "flows.json").string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed flow manifest: " + std::string(e.what()));
  }
  FlowSet fs;
  fs.config.mode = m.at("mode") == "supervised" ? GuidanceMode::Supervised : GuidanceMode::Unsupervised;
  fs.config.num_flows = m.at("K").get<int>();
  fs.config.field.pde = parse_pde(m.at("pde_kind").get<std::string>());
  fs.config.field.horizon = m.at("T").get<int>();
  fs.config.field.wave_speed = m.at("c").get<double>();
  fs.config.field.embed_dim = m.at("embed_dim").get<int>();
  fs.config.field.hidden = m.at("hidden").get<std::vector<int>>();
  if (m.contains("property")) fs.config.property = molkit::parse_property(m["property"].get<std::string>());
  if (m.contains("direction")) fs.config.direction = parse_direction(m["direction"].get<std::string>());
  const auto ck = load_checkpoint(dir / m.at("checkpoint").get<std::string>());
  for (int k = 0; k < fs.config.num_flows; ++k)
    fs.fields.push_back(EnergyField::from_checkpoint(ck, "flow" + std::to_string(k)));
  if (fs.config.mode == GuidanceMode::Unsupervised) fs.classifier = ck.net("classifier");
  return fs;
}

double classifier_accuracy(const FlowSet& flows, const genvae::VaeModel& vae, const Mat& z_pool, int n,
                           std::uint64_t seed) {
  const int kk = static_cast<int>(flows.fields.size());
  if (kk == 0 || flows.classifier.layers().empty()) throw ConfigError("flow set has no classifier");
  Rng rng = make_rng(seed, 800);
  std::uniform_int_distribution<Eigen::Index> pick(0, z_pool.cols() - 1);
  std::uniform_int_distribution<int> pick_t(0, flows.fields[0].config().horizon - 1), pick_k(0, kk - 1);
  int hits = 0;
  for (int j = 0; j < n; ++j) {
    const Mat z0 = z_pool.col(pick(rng));
    const int t = pick_t(rng);
    const int k = pick_k(rng);
    const auto states = rollout(flows.fields[k], z0, t);
    const Mat zt = states.back();
    const Mat zn = zt + flows.fields[k].velocity(Vec::Constant(1, t), zt);
    Mat in(2 * vae.input_dim(), 1);
    in << vae.decode_probs(zt), vae.decode_probs(zn);
    Eigen::Index best = 0;
    flows.classifier.forward(in).col(0).maxCoeff(&best);
    hits += best == k;
  }
  return n > 0 ? static_cast<double>(hits) / n : 0.0;
}

std::vector<double> mean_velocity_norms(const FlowSet& flows, const Mat& probes) {
  std::vector<double> out;
  for (const auto& f : flows.fields) {
    double acc = 0.0;
    for (int i = 0; i < f.config().horizon; ++i)
      acc += f.velocity(Vec::Constant(probes.cols(), i), probes).colwise().norm().mean();
    out.push_back(acc / f.config().horizon);
  }
  return out;
}

}  // namespace chemflow::flows
