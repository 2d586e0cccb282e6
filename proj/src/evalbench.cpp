#include "chemflow/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace chemflow::evalbench {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double orient(flows::Direction dir) { return dir == flows::Direction::Maximize ? 1.0 : -1.0; }

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  return out;
}

std::vector<Mat> run_states(const traversal::DirectionSource& s, const Mat& z0, int steps, std::uint64_t seed) {
  if (steps < 0) throw ArgumentError("steps must be non-negative");
  if (steps == 0) return {z0};
  return traversal::traverse_latent(s, z0, steps, seed);
}

std::vector<molkit::Fingerprint> fingerprints(const traversal::Trajectory& traj) {
  std::vector<molkit::Fingerprint> fps;
  fps.reserve(traj.points.size());
  for (const auto& p : traj.points) fps.push_back(molkit::fingerprint(molkit::decode(p.tokens)));
  return fps;
}

void check_series(const TrajectoryMetrics& m) {
  if (m.score.size() < 2) throw ArgumentError("success needs a trajectory of at least two steps");
  if (m.similarity.size() != m.score.size() || m.keys.size() != m.score.size())
    throw ArgumentError("trajectory metric series differ in length");
}

// Standard competition rank, 1 = largest.
std::vector<int> rank_desc(const std::vector<double>& v) {
  std::vector<int> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    r[i] = 1 + static_cast<int>(std::count_if(v.begin(), v.end(), [&](double x) { return x > v[i]; }));
  return r;
}

}  // namespace

SuccessCriteria criteria_for(molkit::PropertyKind kind, const molkit::Corpus& corpus) {
  if (corpus.records.empty()) throw ArgumentError("criteria need a non-empty corpus");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : corpus.records) {
    const double v = r.props.get(kind);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  SuccessCriteria c;
  c.eps = 0.05 * (hi - lo);
  return c;
}

TrajectoryMetrics trajectory_metrics(const traversal::Trajectory& traj, molkit::PropertyKind kind,
                                     flows::Direction dir) {
  TrajectoryMetrics m;
  const auto fps = fingerprints(traj);
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    m.score.push_back(orient(dir) * traj.points[i].props.get(kind));
    m.similarity.push_back(molkit::tanimoto(fps[i], fps.front()));
    m.keys.push_back(molkit::canonical_key(molkit::decode(traj.points[i].tokens)));
  }
  return m;
}

int distinct_molecules(const TrajectoryMetrics& m) {
  return static_cast<int>(std::set<std::string>(m.keys.begin(), m.keys.end()).size());
}

bool strict_success(const TrajectoryMetrics& m, const SuccessCriteria& c) {
  check_series(m);
  for (std::size_t i = 0; i + 1 < m.score.size(); ++i) {
    if (m.score[i] - m.score[i + 1] > 0.0) return false;
    if (m.similarity[i + 1] - m.similarity[i] > 0.0) return false;
  }
  return distinct_molecules(m) >= c.min_distinct;
}

bool relaxed_success(const TrajectoryMetrics& m, const SuccessCriteria& c) {
  check_series(m);
  if (c.eps < 0.0 || c.gamma < 0.0 || c.gamma > 1.0) throw ArgumentError("eps must be >= 0 and gamma in [0, 1]");
  for (std::size_t i = 0; i + 1 < m.score.size(); ++i) {
    if (m.score[i] - m.score[i + 1] > c.eps) return false;
    if (m.similarity[i + 1] - m.similarity[i] > c.gamma) return false;
  }
  return distinct_molecules(m) >= c.min_distinct;
}

ManipulationReport manipulation_benchmark(const std::vector<MethodSpec>& methods, const genvae::VaeModel& vae,
                                          const molkit::Corpus& corpus, const Mat& z0, int steps,
                                          std::uint64_t seed) {
  ManipulationReport rep;
  std::map<molkit::PropertyKind, SuccessCriteria> crit;
  for (const auto& m : methods) {
    if (!crit.contains(m.property)) crit[m.property] = criteria_for(m.property, corpus);
    const auto trajs = traversal::traverse(m.source, vae, corpus.stats, z0, steps, seed);
    ManipulationRow row{.method = m.name, .property = m.property, .n = static_cast<int>(trajs.size())};
    int strict = 0, relaxed = 0;
    for (const auto& t : trajs) {
      const auto mt = trajectory_metrics(t, m.property, m.direction);
      strict += strict_success(mt, crit[m.property]);
      relaxed += relaxed_success(mt, crit[m.property]);
    }
    row.strict_rate = trajs.empty() ? 0.0 : 100.0 * strict / static_cast<double>(trajs.size());
    row.relaxed_rate = trajs.empty() ? 0.0 : 100.0 * relaxed / static_cast<double>(trajs.size());
    rep.rows.push_back(row);
  }

  std::vector<std::string> names;
  for (const auto& r : rep.rows)
    if (std::find(names.begin(), names.end(), r.method) == names.end()) names.push_back(r.method);
  std::vector<double> avg_strict(names.size(), 0.0), avg_relaxed(names.size(), 0.0);
  for (std::size_t i = 0; i < names.size(); ++i) {
    int n = 0;
    for (const auto& r : rep.rows)
      if (r.method == names[i]) {
        avg_strict[i] += r.strict_rate;
        avg_relaxed[i] += r.relaxed_rate;
        ++n;
      }
    avg_strict[i] /= n;
    avg_relaxed[i] /= n;
  }
  const auto rs = rank_desc(avg_strict), rr = rank_desc(avg_relaxed);
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), 0);
  auto mean_rank = [&](std::size_t i) { return 0.5 * (rs[i] + rr[i]); };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (mean_rank(a) != mean_rank(b)) return mean_rank(a) < mean_rank(b);
    return rs[a] < rs[b];
  });
  for (auto i : order) rep.ranking.emplace_back(names[i], mean_rank(i));
  return rep;
}

void write_manipulation_csv(const ManipulationReport& r, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "method,property,n,strict_rate,relaxed_rate,mean_rank\n";
  for (const auto& row : r.rows) {
    double rank = kNaN;
    for (const auto& [name, v] : r.ranking)
      if (name == row.method) rank = v;
    out << row.method << ',' << molkit::property_name(row.property) << ',' << row.n << ',' << row.strict_rate << ','
        << row.relaxed_rate << ',' << rank << '\n';
  }
}

OrderStats order_stats(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("order statistics of an empty sample");
  OrderStats s;
  const double n = static_cast<double>(v.size());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  return s;
}

UnconstrainedReport unconstrained_benchmark(const MethodSpec& method, const genvae::VaeModel& vae,
                                            const molkit::NormStats& stats, const Mat& z0, int steps,
                                            std::uint64_t seed) {
  if (z0.cols() == 0) throw ArgumentError("unconstrained benchmark needs samples");
  const auto trajs = traversal::decode_trajectories(run_states(method.source, z0, steps, seed), vae, stats);
  const double s = orient(method.direction);
  UnconstrainedReport rep;
  std::vector<double> oriented;
  for (const auto& t : trajs) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& p : t.points) best = std::max(best, s * p.props.get(method.property));
    oriented.push_back(best);
    rep.best.push_back(s * best);
  }
  std::sort(oriented.begin(), oriented.end(), std::greater<>());
  for (std::size_t i = 0; i < 3; ++i) rep.top3[i] = i < oriented.size() ? s * oriented[i] : kNaN;
  std::vector<double> top(oriented.begin(), oriented.begin() + std::min<std::size_t>(100, oriented.size()));
  for (auto& v : top) v *= s;
  rep.top100 = order_stats(top);
  return rep;
}

void write_unconstrained_csv(const std::vector<std::pair<std::string, UnconstrainedReport>>& rows,
                             const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "method,top1,top2,top3,top100_mean,top100_std,top100_median\n";
  for (const auto& [name, r] : rows)
    out << name << ',' << r.top3[0] << ',' << r.top3[1] << ',' << r.top3[2] << ',' << r.top100.mean << ','
        << r.top100.std << ',' << r.top100.median << '\n';
}

ConstrainedReport constrained_report(const std::vector<traversal::Trajectory>& trajs, molkit::PropertyKind kind,
                                     flows::Direction dir, const std::vector<double>& deltas) {
  ConstrainedReport rep;
  const double s = orient(dir);
  std::vector<std::vector<double>> sims(trajs.size()), gains(trajs.size());
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    const auto fps = fingerprints(trajs[j]);
    const double start = s * trajs[j].points.front().props.get(kind);
    for (std::size_t i = 1; i < fps.size(); ++i) {
      sims[j].push_back(molkit::tanimoto(fps[i], fps.front()));
      gains[j].push_back(s * trajs[j].points[i].props.get(kind) - start);
    }
  }
  for (double delta : deltas) {
    ConstrainedCell cell;
    cell.delta = delta;
    std::vector<double> improvements;
    for (std::size_t j = 0; j < trajs.size(); ++j) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sims[j].size(); ++i)
        if (sims[j][i] >= delta) best = std::max(best, gains[j][i]);
      const bool ok = best > 0.0;
      cell.success.push_back(ok);
      if (ok) improvements.push_back(best);
    }
    if (!improvements.empty()) cell.improvement = order_stats(improvements);
    cell.success_rate = trajs.empty() ? 0.0 : 100.0 * improvements.size() / static_cast<double>(trajs.size());
    rep.cells.push_back(std::move(cell));
  }
  return rep;
}

ConstrainedReport constrained_benchmark(const MethodSpec& method, const genvae::VaeModel& vae,
                                        const molkit::NormStats& stats, const Mat& z0, int steps,
                                        std::uint64_t seed, const std::vector<double>& deltas,
                                        std::vector<traversal::Trajectory>* trajectories) {
  auto trajs = traversal::decode_trajectories(run_states(method.source, z0, steps, seed), vae, stats);
  auto rep = constrained_report(trajs, method.property, method.direction, deltas);
  if (trajectories) *trajectories = std::move(trajs);
  return rep;
}

void write_constrained_csv(const std::vector<std::pair<std::string, ConstrainedReport>>& rows,
                           const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "method,delta,improvement_mean,improvement_std,improvement_median,success_rate\n";
  for (const auto& [name, r] : rows)
    for (const auto& c : r.cells)
      out << name << ',' << c.delta << ',' << c.improvement.mean << ',' << c.improvement.std << ','
          << c.improvement.median << ',' << c.success_rate << '\n';
}

std::vector<molkit::TokenSequence> lowest_property_seeds(const molkit::Corpus& corpus, molkit::PropertyKind kind,
                                                         flows::Direction dir, int count) {
  if (count < 0) throw ArgumentError("seed count must be non-negative");
  const double s = orient(dir);
  std::vector<std::size_t> idx(corpus.records.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return s * corpus.records[a].props.get(kind) < s * corpus.records[b].props.get(kind);
  });
  std::vector<molkit::TokenSequence> out;
  for (std::size_t i = 0; i < idx.size() && static_cast<int>(out.size()) < count; ++i)
    out.push_back(corpus.records[idx[i]].seq);
  return out;
}

void write_shift_histograms(const std::vector<traversal::Trajectory>& trajs, molkit::PropertyKind kind,
                            const std::vector<int>& steps, int bins, const std::filesystem::path& path) {
  if (bins < 1) throw ArgumentError("histogram needs at least one bin");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& t : trajs)
    for (int s : steps)
      if (s >= 0 && s < static_cast<int>(t.points.size())) {
        lo = std::min(lo, t.points[s].props.get(kind));
        hi = std::max(hi, t.points[s].props.get(kind));
      }
  auto out = open_csv(path);
  out << "step,bin_lo,bin_hi,count\n";
  if (!(hi >= lo)) return;
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  for (int s : steps) {
    std::vector<int> counts(bins, 0);
    for (const auto& t : trajs) {
      if (s < 0 || s >= static_cast<int>(t.points.size())) continue;
      const int b = std::min(bins - 1, static_cast<int>((t.points[s].props.get(kind) - lo) / width));
      ++counts[b];
    }
    for (int b = 0; b < bins; ++b) out << s << ',' << lo + b * width << ',' << lo + (b + 1) * width << ',' << counts[b] << '\n';
  }
}

traversal::DirectionSource combine_sources(const std::vector<traversal::DirectionSource>& sources) {
  if (sources.empty()) throw ConfigError("no direction sources to combine");
  traversal::DirectionSource out = sources.front();
  for (std::size_t i = 1; i < sources.size(); ++i) {
    const auto& s = sources[i];
    if (s.kind != out.kind) throw ConfigError("cannot combine direction sources of different kinds");
    out.fields.insert(out.fields.end(), s.fields.begin(), s.fields.end());
    out.potentials.insert(out.potentials.end(), s.potentials.begin(), s.potentials.end());
    if (traversal::is_linear(out.kind)) out.direction += s.direction;
  }
  if (traversal::is_linear(out.kind) && sources.size() > 1) {
    const double n = out.direction.norm();
    if (n == 0.0) throw DegenerateError("combined linear directions cancel");
    out.direction /= n;
  }
  return out;
}

MultiObjectiveReport multiobjective_report(const std::vector<traversal::Trajectory>& trajs,
                                           const std::vector<Objective>& objectives,
                                           const std::vector<double>& deltas) {
  if (objectives.empty()) throw ArgumentError("multi-objective report needs objectives");
  MultiObjectiveReport rep;
  rep.objectives = objectives;
  const std::size_t k = objectives.size();
  std::vector<double> lo(k, std::numeric_limits<double>::infinity()), hi(k, -std::numeric_limits<double>::infinity());
  for (const auto& t : trajs)
    for (const auto& p : t.points)
      for (std::size_t o = 0; o < k; ++o) {
        lo[o] = std::min(lo[o], p.props.get(objectives[o].property));
        hi[o] = std::max(hi[o], p.props.get(objectives[o].property));
      }
  auto scaled = [&](const traversal::TrajectoryPoint& p, std::size_t o) {
    if (!(hi[o] > lo[o])) return 0.0;
    const double u = 100.0 * (p.props.get(objectives[o].property) - lo[o]) / (hi[o] - lo[o]);
    return objectives[o].direction == flows::Direction::Maximize ? u : 100.0 - u;
  };

  std::vector<std::vector<double>> sims(trajs.size());
  std::vector<std::vector<std::vector<double>>> vals(trajs.size());  // [traj][point][objective]
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    const auto fps = fingerprints(trajs[j]);
    for (std::size_t i = 0; i < fps.size(); ++i) {
      sims[j].push_back(molkit::tanimoto(fps[i], fps.front()));
      std::vector<double> v(k);
      for (std::size_t o = 0; o < k; ++o) v[o] = scaled(trajs[j].points[i], o);
      vals[j].push_back(std::move(v));
    }
  }
  auto total = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };

  for (double delta : deltas) {
    MultiObjectiveCell cell;
    cell.delta = delta;
    std::vector<std::vector<double>> gains(k);
    int successes = 0;
    for (std::size_t j = 0; j < trajs.size(); ++j) {
      std::size_t best = 0;
      double best_sum = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 1; i < vals[j].size(); ++i)
        if (sims[j][i] >= delta && total(vals[j][i]) > best_sum) {
          best_sum = total(vals[j][i]);
          best = i;
        }
      if (best == 0 || !(best_sum > total(vals[j][0]))) continue;
      ++successes;
      for (std::size_t o = 0; o < k; ++o) gains[o].push_back(vals[j][best][o] - vals[j][0][o]);
    }
    for (std::size_t o = 0; o < k; ++o) cell.improvement.push_back(gains[o].empty() ? OrderStats{} : order_stats(gains[o]));
    cell.success_rate = trajs.empty() ? 0.0 : 100.0 * successes / static_cast<double>(trajs.size());
    rep.cells.push_back(std::move(cell));
  }
  return rep;
}

MultiObjectiveReport multiobjective_benchmark(const std::vector<Objective>& objectives,
                                              const std::vector<traversal::DirectionSource>& sources,
                                              const genvae::VaeModel& vae, const molkit::NormStats& stats,
                                              const Mat& z0, int steps, std::uint64_t seed,
                                              const std::vector<double>& deltas) {
  if (sources.size() != objectives.size()) throw ConfigError("one direction source per objective is required");
  const auto combined = combine_sources(sources);
  const auto trajs = traversal::decode_trajectories(run_states(combined, z0, steps, seed), vae, stats);
  return multiobjective_report(trajs, objectives, deltas);
}

void write_multiobjective_csv(const MultiObjectiveReport& r, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "delta,objective,direction,improvement_mean,improvement_std,improvement_median,success_rate\n";
  for (const auto& c : r.cells)
    for (std::size_t o = 0; o < r.objectives.size(); ++o)
      out << c.delta << ',' << molkit::property_name(r.objectives[o].property) << ','
          << flows::direction_name(r.objectives[o].direction) << ',' << c.improvement[o].mean << ','
          << c.improvement[o].std << ',' << c.improvement[o].median << ',' << c.success_rate << '\n';
}

double pearson(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ArgumentError("pearson inputs differ in length");
  if (a.size() < 2) return kNaN;
  // Exact test: the mean of equal values need not reproduce them bit for bit.
  if (a.minCoeff() == a.maxCoeff() || b.minCoeff() == b.maxCoeff()) return kNaN;
  const Eigen::ArrayXd x = a.array() - a.mean(), y = b.array() - b.mean();
  const double sxx = (x * x).sum(), syy = (y * y).sum();
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return (x * y).sum() / std::sqrt(sxx * syy);
}

LatentProperty decoded_property(const genvae::VaeModel& vae, molkit::PropertyKind kind,
                                const molkit::NormStats& stats) {
  return [&vae, kind, stats](const Mat& z) {
    const auto seqs = vae.decode_sequences(z);
    Vec v(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) v[j] = molkit::compute_property(kind, molkit::decode(seqs[j]), &stats);
    return v;
  };
}

StepFn flow_step(const flows::EnergyField& f, double alpha) {
  return [&f, alpha](int t, const Mat& z) -> Mat {
    return z + alpha * f.velocity(Vec::Constant(z.cols(), static_cast<double>(t - 1)), z);
  };
}

PearsonResult pearson_select(const std::vector<StepFn>& flows, const Mat& z_test, const LatentProperty& property,
                             flows::Direction dir, int steps) {
  if (flows.size() < 2) throw ArgumentError("pearson selection needs at least two flows");
  if (steps < 1) throw ArgumentError("pearson selection needs steps >= 1");
  PearsonResult res;
  Vec index(steps + 1);
  for (int t = 0; t <= steps; ++t) index[t] = t;
  for (const auto& step : flows) {
    Mat values(z_test.cols(), steps + 1);
    Mat z = z_test;
    values.col(0) = property(z);
    for (int t = 1; t <= steps; ++t) {
      z = step(t, z);
      values.col(t) = property(z);
    }
    double sum = 0.0;
    int used = 0;
    for (Eigen::Index j = 0; j < values.rows(); ++j) {
      const double r = pearson(values.row(j).transpose(), index);
      if (std::isnan(r)) continue;
      sum += r;
      ++used;
    }
    res.mean_r.push_back(used > 0 ? sum / used : kNaN);
    res.used.push_back(used);
  }
  const double s = orient(dir);
  for (std::size_t k = 0; k < flows.size(); ++k) {
    if (res.used[k] == 0) continue;
    if (res.index < 0 || s * res.mean_r[k] > s * res.mean_r[res.index]) res.index = static_cast<int>(k);
  }
  if (res.index < 0) throw DegenerateError("no flow changed the property along any trajectory");
  return res;
}

void write_pearson_csv(const PearsonResult& r, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "flow,mean_r,used,selected\n";
  for (std::size_t k = 0; k < r.mean_r.size(); ++k)
    out << k << ',' << r.mean_r[k] << ',' << r.used[k] << ',' << (static_cast<int>(k) == r.index) << '\n';
}

double norm_band_fraction(const Vec& norms, int d, double lo, double hi) {
  if (norms.size() == 0) throw ArgumentError("no norms");
  const double r = std::sqrt(static_cast<double>(d));
  const auto inside = ((norms.array() >= lo * r) && (norms.array() <= hi * r)).count();
  return static_cast<double>(inside) / static_cast<double>(norms.size());
}

LatentAnalysis latent_analysis(const Mat& latents, const std::vector<molkit::PropertyValues>& props) {
  if (static_cast<Eigen::Index>(props.size()) != latents.cols())
    throw ArgumentError("one property record per latent is required");
  LatentAnalysis a;
  a.norms = latents.colwise().norm().transpose();
  for (std::size_t p = 0; p < molkit::kAllProperties.size(); ++p) {
    Vec v(latents.cols());
    for (Eigen::Index j = 0; j < latents.cols(); ++j) v[j] = props[j].get(molkit::kAllProperties[p]);
    a.norm_property_r[p] = pearson(a.norms, v);
  }
  return a;
}

void add_random_traversals(LatentAnalysis& a, const genvae::VaeModel& vae, const molkit::NormStats& stats,
                           int n_traj, int steps, double alpha, std::uint64_t seed) {
  if (n_traj < 0 || steps < 0) throw ArgumentError("trajectory counts must be non-negative");
  Rng rng = make_rng(seed, 1300);
  const int d = vae.latent_dim();
  for (int k = 0; k < n_traj; ++k) {
    const Vec z0 = standard_normal(rng, d);
    const Vec dir = traversal::random_direction(d, rng);
    Mat states(d, steps + 1);
    for (int t = 0; t <= steps; ++t) states.col(t) = z0 + (alpha * t) * dir;
    const auto seqs = vae.decode_sequences(states);
    std::vector<double> norms;
    std::vector<molkit::PropertyValues> props;
    for (int t = 0; t <= steps; ++t) {
      norms.push_back(states.col(t).norm());
      props.push_back(molkit::all_properties(molkit::decode(seqs[t]), stats));
    }
    a.traversal_norms.push_back(std::move(norms));
    a.traversal_props.push_back(std::move(props));
  }
}

void write_latent_analysis(const LatentAnalysis& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_csv(dir / "norms.csv");
    out << "index,norm\n";
    for (Eigen::Index j = 0; j < a.norms.size(); ++j) out << j << ',' << a.norms[j] << '\n';
  }
  {
    auto out = open_csv(dir / "correlations.csv");
    out << "property,pearson_norm\n";
    for (std::size_t p = 0; p < molkit::kAllProperties.size(); ++p)
      out << molkit::property_name(molkit::kAllProperties[p]) << ',' << a.norm_property_r[p] << '\n';
  }
  if (a.traversal_norms.empty()) return;
  auto out = open_csv(dir / "traversal.csv");
  out << "traj,step,norm";
  for (auto k : molkit::kAllProperties) out << ',' << molkit::property_name(k);
  out << '\n';
  for (std::size_t k = 0; k < a.traversal_norms.size(); ++k)
    for (std::size_t t = 0; t < a.traversal_norms[k].size(); ++t) {
      out << k << ',' << t << ',' << a.traversal_norms[k][t];
      for (auto p : molkit::kAllProperties) out << ',' << a.traversal_props[k][t].get(p);
      out << '\n';
    }
}

}  // namespace chemflow::evalbench
