#include "chemflow/traversal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

namespace chemflow::traversal {

std::string kind_name(SourceKind k) {
  switch (k) {
    case SourceKind::LearnedFlow: return "learned_flow";
    case SourceKind::GradientFlow: return "gradient_flow";
    case SourceKind::Langevin: return "langevin";
    case SourceKind::Random: return "random";
    case SourceKind::Random1d: return "random_1d";
    case SourceKind::ChemSpace: return "chemspace";
  }
  return "?";
}

SourceKind parse_kind(const std::string& s) {
  for (auto k : {SourceKind::LearnedFlow, SourceKind::GradientFlow, SourceKind::Langevin, SourceKind::Random,
                 SourceKind::Random1d, SourceKind::ChemSpace})
    if (kind_name(k) == s) return k;
  throw ConfigError("unknown direction source '" + s + "'");
}

bool is_linear(SourceKind k) {
  return k == SourceKind::Random || k == SourceKind::Random1d || k == SourceKind::ChemSpace;
}

Potential surrogate_potential(const surrogate::SurrogateModel& s, const genvae::VaeModel& vae, flows::Direction dir) {
  const double sign = dir == flows::Direction::Maximize ? -1.0 : 1.0;
  return {[&s, &vae, sign](const Mat& z) -> Vec { return sign * surrogate::predict_latent(s, vae, z); },
          [&s, &vae, sign](const Mat& z) -> Mat { return sign * surrogate::grad_wrt_latent(s, vae, z); }};
}

Potential quadratic_potential(const Vec& center) {
  return {[center](const Mat& z) -> Vec { return 0.5 * (z.colwise() - center).colwise().squaredNorm().transpose(); },
          [center](const Mat& z) -> Mat { return z.colwise() - center; }};
}

Potential double_well_potential() {
  auto value = [](const Mat& z) -> Vec {
    if (z.rows() != 2) throw ArgumentError("double well is two-dimensional");
    const Eigen::ArrayXd x = z.row(0).transpose().array(), y = z.row(1).transpose().array();
    return (0.5 * (x * x - 1.0).square() + (3.0 * x - x.cube()) / 8.0 - 0.75 + 0.5 * y * y).matrix();
  };
  auto grad = [](const Mat& z) -> Mat {
    if (z.rows() != 2) throw ArgumentError("double well is two-dimensional");
    Mat g(2, z.cols());
    const Eigen::ArrayXd x = z.row(0).transpose().array();
    // d/dx = (x^2 - 1)(2x - 3/8)
    g.row(0) = ((x * x - 1.0) * (2.0 * x - 0.375)).matrix().transpose();
    g.row(1) = z.row(1);
    return g;
  };
  return {value, grad};
}

void validate(const DirectionSource& s, int latent_dim) {
  if (!std::isfinite(s.alpha)) throw ConfigError("step size must be finite");
  switch (s.kind) {
    case SourceKind::LearnedFlow:
      if (s.fields.empty()) throw ConfigError("learned_flow requires a trained flow");
      for (const auto* f : s.fields)
        if (f == nullptr || f->dim() != latent_dim) throw ConfigError("flow latent dimension mismatch");
      break;
    case SourceKind::GradientFlow:
    case SourceKind::Langevin:
      if (s.potentials.empty()) throw ConfigError(kind_name(s.kind) + " requires a surrogate potential");
      break;
    default:
      if (s.direction.size() != latent_dim) throw ConfigError("linear direction has the wrong dimension");
      if (std::abs(s.direction.norm() - 1.0) > 1e-9) throw ConfigError("linear direction must have unit norm");
  }
}

Vec random_direction(int d, Rng& rng) {
  Vec v = standard_normal(rng, d);
  return v / v.norm();
}

Vec random_1d_direction(int d, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, d - 1);
  std::bernoulli_distribution coin(0.5);
  Vec v = Vec::Zero(d);
  v[pick(rng)] = coin(rng) ? 1.0 : -1.0;
  return v;
}

Mat multi_objective_direction(const std::vector<Mat>& directions) {
  if (directions.empty()) throw ArgumentError("no directions to combine");
  Mat acc = directions.front();
  for (std::size_t i = 1; i < directions.size(); ++i) {
    if (directions[i].rows() != acc.rows() || directions[i].cols() != acc.cols())
      throw ArgumentError("direction shapes differ");
    acc += directions[i];
  }
  return acc / static_cast<double>(directions.size());
}

NoiseStreams::NoiseStreams(std::uint64_t seed, std::uint64_t first_id, Eigen::Index n) {
  rngs_.reserve(n);
  for (Eigen::Index j = 0; j < n; ++j) rngs_.push_back(make_rng(seed, first_id + j));
}

Mat NoiseStreams::draw(Eigen::Index rows) {
  Mat out(rows, static_cast<Eigen::Index>(rngs_.size()));
  std::normal_distribution<double> n01;
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = n01(rngs_[j]);
  return out;
}

namespace {

Mat descent_direction(const DirectionSource& s, const Mat& z) {
  std::vector<Mat> dirs;
  for (const auto& p : s.potentials) dirs.push_back(-p.grad(z));
  return dirs.size() == 1 ? dirs.front() : multi_objective_direction(dirs);
}

double beta_at(const DirectionSource& s, int t) {
  if (s.anneal_steps <= 0) return s.beta;
  if (t >= s.anneal_steps) return 0.0;
  return s.beta * 0.5 * (1.0 + std::cos(std::numbers::pi * t / s.anneal_steps));
}

}  // namespace

Mat step(const DirectionSource& s, int t, const Mat& z, NoiseStreams* noise) {
  switch (s.kind) {
    case SourceKind::LearnedFlow: {
      const Vec tv = Vec::Constant(z.cols(), static_cast<double>(t - 1));
      std::vector<Mat> dirs;
      for (const auto* f : s.fields) dirs.push_back(f->velocity(tv, z));
      return z + s.alpha * (dirs.size() == 1 ? dirs.front() : multi_objective_direction(dirs));
    }
    case SourceKind::GradientFlow:
      return z + s.alpha * descent_direction(s, z);
    case SourceKind::Langevin: {
      Mat next = z + s.alpha * descent_direction(s, z);
      const double b = beta_at(s, t - 1);
      if (b != 0.0) {
        if (noise == nullptr) throw ArgumentError("langevin step needs noise streams");
        next += b * std::sqrt(2.0 * s.alpha) * noise->draw(z.rows());
      }
      return next;
    }
    default:
      return z.colwise() + s.alpha * s.direction;
  }
}

std::vector<Mat> traverse_latent(const DirectionSource& s, const Mat& z0, int steps, std::uint64_t seed,
                                 std::uint64_t first_id) {
  if (steps < 1) throw ArgumentError("traversal needs T >= 1");
  validate(s, static_cast<int>(z0.rows()));
  NoiseStreams noise(seed, first_id, z0.cols());
  std::vector<Mat> states{z0};
  states.reserve(steps + 1);
  for (int t = 1; t <= steps; ++t) {
    states.push_back(step(s, t, states.back(), &noise));
    if (!states.back().allFinite()) throw BlowUpError("traversal produced a non-finite latent", t);
  }
  return states;
}

std::vector<Trajectory> decode_trajectories(const std::vector<Mat>& states, const genvae::VaeModel& vae,
                                            const molkit::NormStats& stats, std::uint64_t first_id) {
  const Eigen::Index n = states.empty() ? 0 : states.front().cols();
  std::vector<Trajectory> out(n);
  for (Eigen::Index j = 0; j < n; ++j) out[j].id = first_id + j;
  for (std::size_t t = 0; t < states.size(); ++t) {
    const auto seqs = vae.decode_sequences(states[t]);
    for (Eigen::Index j = 0; j < n; ++j) {
      TrajectoryPoint p;
      p.step = static_cast<int>(t);
      p.z = states[t].col(j);
      p.tokens = seqs[j];
      p.props = molkit::all_properties(molkit::decode(seqs[j]), stats);
      out[j].points.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<Trajectory> traverse(const DirectionSource& s, const genvae::VaeModel& vae,
                                 const molkit::NormStats& stats, const Mat& z0, int steps, std::uint64_t seed,
                                 std::uint64_t first_id) {
  return decode_trajectories(traverse_latent(s, z0, steps, seed, first_id), vae, stats, first_id);
}

void write_jsonl(const std::vector<Trajectory>& trajs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& tr : trajs)
    for (const auto& p : tr.points) {
      nlohmann::json props;
      for (auto k : molkit::kAllProperties) props[std::string(molkit::property_name(k))] = p.props.get(k);
      nlohmann::json tokens = nlohmann::json::array();
      for (auto t : p.tokens.tokens) tokens.push_back(std::string(molkit::token_name(t)));
      const nlohmann::json rec = {{"traj", tr.id},
                                  {"step", p.step},
                                  {"z", std::vector<double>(p.z.data(), p.z.data() + p.z.size())},
                                  {"tokens", tokens},
                                  {"props", props}};
      out << rec.dump() << '\n';
    }
}

std::vector<Trajectory> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Trajectory> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      const auto id = rec.at("traj").get<std::uint64_t>();
      if (out.empty() || out.back().id != id) out.push_back({id, {}});
      TrajectoryPoint p;
      p.step = rec.at("step").get<int>();
      const auto z = rec.at("z").get<std::vector<double>>();
      p.z = Eigen::Map<const Vec>(z.data(), static_cast<Eigen::Index>(z.size()));
      for (const auto& t : rec.at("tokens")) p.tokens.tokens.push_back(molkit::parse_token(t.get<std::string>()));
      const auto& props = rec.at("props");
      p.props.logp_lite = props.at("logp_lite").get<double>();
      p.props.sa_lite = props.at("sa_lite").get<double>();
      p.props.ring_penalty = props.at("ring_penalty").get<double>();
      p.props.plogp = props.at("plogp").get<double>();
      p.props.qed_lite = props.at("qed_lite").get<double>();
      out.back().points.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<int> median_labels(const Vec& values) {
  if (values.size() == 0) return {};
  std::vector<double> sorted(values.data(), values.data() + values.size());
  const auto mid = sorted.begin() + sorted.size() / 2;
  std::nth_element(sorted.begin(), mid, sorted.end());
  double median = *mid;
  if (sorted.size() % 2 == 0) median = 0.5 * (median + *std::max_element(sorted.begin(), mid));
  std::vector<int> labels(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) labels[i] = values[i] > median ? 1 : 0;
  return labels;
}

Vec fit_chemspace_boundary(const Mat& latents, const std::vector<int>& labels, const SvmOptions& o) {
  const Eigen::Index n = latents.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ArgumentError("label count does not match latents");
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  const auto neg = std::count(labels.begin(), labels.end(), 0);
  if (pos + neg != n) throw ArgumentError("chemspace labels must be 0 or 1");
  if (pos == 0 || neg == 0) throw DegenerateError("chemspace labels contain a single class");
  if (std::min(pos, neg) < o.min_per_class)
    throw ArgumentError("chemspace boundary needs at least " + std::to_string(o.min_per_class) + " samples per class");

  Vec y(n);
  for (Eigen::Index j = 0; j < n; ++j) y[j] = labels[j] == 1 ? 1.0 : -1.0;
  Vec w = Vec::Zero(latents.rows());
  double b = 0.0;
  for (int it = 0; it < o.iterations; ++it) {
    const Vec margin = y.cwiseProduct(latents.transpose() * w + Vec::Constant(n, b));
    Vec gw = o.lambda * w;
    double gb = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (margin[j] < 1.0) {
        gw -= (y[j] / n) * latents.col(j);
        gb -= y[j] / n;
      }
    w -= o.lr * gw;
    b -= o.lr * gb;
  }
  const double norm = w.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DegenerateError("chemspace boundary has zero norm");
  return w / norm;
}

EaResult ea_optimize(const Mat& z0, const ScoreFn& score, const DirectionFn& direction, const EaOptions& o,
                     const genvae::VaeModel* vae) {
  const Eigen::Index n = z0.cols(), d = z0.rows();
  if (o.k < 1 || o.k > n) throw ArgumentError("EA needs 1 <= k <= n");
  if (n % o.k != 0) throw ArgumentError("EA needs k to divide n");
  if (o.steps < 0) throw ArgumentError("EA steps must be >= 0");
  const Eigen::Index per = n / o.k;

  Rng rng = make_rng(o.seed, 1100);
  EaResult res;
  res.population = z0;
  std::vector<Eigen::Index> order(n);
  for (int it = 0; it < o.steps; ++it) {
    const Vec s = score(res.population);
    std::iota(order.begin(), order.end(), 0);
    // Stable ordering keeps ties deterministic.
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return s[a] > s[b]; });
    res.best_score.push_back(s[order[0]]);

    Mat top(d, o.k);
    for (int j = 0; j < o.k; ++j) top.col(j) = res.population.col(order[j]);
    top += o.alpha * direction(top) + o.noise_scale * standard_normal(rng, d, o.k);
    Mat next(d, n);
    for (int j = 0; j < o.k; ++j)
      for (Eigen::Index r = 0; r < per; ++r)
        next.col(j * per + r) = top.col(j) + (o.noise_scale * o.resample_sigma) * standard_normal(rng, d);
    res.population = std::move(next);
  }
  res.best_score.push_back(score(res.population).maxCoeff());
  if (vae != nullptr) res.decoded = vae->decode_sequences(res.population);
  return res;
}

}  // namespace chemflow::traversal
