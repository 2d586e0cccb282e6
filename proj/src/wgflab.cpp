#include "chemflow/wgflab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace chemflow::wgflab {

std::string field_name(FieldKind k) {
  switch (k) {
    case FieldKind::Heat: return "heat";
    case FieldKind::FokkerPlanck: return "fp";
    case FieldKind::Porous: return "porous";
  }
  return "?";
}

FieldKind parse_field(const std::string& s) {
  if (s == "heat") return FieldKind::Heat;
  if (s == "fp" || s == "fokker-planck") return FieldKind::FokkerPlanck;
  if (s == "porous") return FieldKind::Porous;
  throw ConfigError("unknown field kind: " + s);
}

DensityFn gaussian_density(std::function<double(double)> variance) {
  return [variance](const Mat& z, double t, const Mat&) {
    const double v = variance(t);
    if (!(v > 0.0)) throw DensityDomainError("gaussian variance must be positive");
    const double d = static_cast<double>(z.rows());
    const double norm = std::pow(2.0 * std::numbers::pi * v, -0.5 * d);
    DensityEval e;
    e.rho = (norm * (-0.5 / v * z.colwise().squaredNorm().array()).exp()).matrix().transpose();
    e.grad = -(z.array().rowwise() * e.rho.transpose().array()).matrix() / v;
    return e;
  };
}

DensityFn heat_gaussian(double sigma0) {
  return gaussian_density([s2 = sigma0 * sigma0](double t) { return s2 + 2.0 * t; });
}

DensityFn fp_quadratic_gaussian(double sigma0) {
  return gaussian_density([s2 = sigma0 * sigma0](double t) { return 1.0 + (s2 - 1.0) * std::exp(-2.0 * t); });
}

DensityFn parabolic_profile() {
  return [](const Mat& z, double, const Mat&) {
    if (z.rows() != 1) throw ArgumentError("parabolic profile is 1-D");
    DensityEval e;
    e.rho.resize(z.cols());
    e.grad.resize(1, z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double x = z(0, j);
      const bool inside = std::abs(x) < 1.0;
      e.rho[j] = inside ? 1.0 - x * x : 0.0;
      e.grad(0, j) = inside ? -2.0 * x : 0.0;
    }
    return e;
  };
}

DensityFn kde_density(double bandwidth) {
  return [bandwidth](const Mat& z, double, const Mat& ens) {
    const auto n = ens.cols();
    const auto d = ens.rows();
    if (n < 2) throw ArgumentError("kde needs at least two particles");
    double h = bandwidth;
    if (h <= 0.0) {
      const Vec mean = ens.rowwise().mean();
      const double sd = std::sqrt((ens.colwise() - mean).squaredNorm() / static_cast<double>(d * (n - 1)));
      h = sd * std::pow(4.0 / ((static_cast<double>(d) + 2.0) * static_cast<double>(n)), 1.0 / (static_cast<double>(d) + 4.0));
      if (!(h > 0.0)) throw DegenerateError("kde bandwidth collapsed (identical particles)");
    }
    const double norm = std::pow(2.0 * std::numbers::pi * h * h, -0.5 * static_cast<double>(d)) / static_cast<double>(n);
    DensityEval e;
    e.rho = Vec::Zero(z.cols());
    e.grad = Mat::Zero(d, z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vec diff = z.col(j) - ens.col(i);
        const double k = norm * std::exp(-0.5 * diff.squaredNorm() / (h * h));
        e.rho[j] += k;
        e.grad.col(j) -= k * diff / (h * h);
      }
    }
    return e;
  };
}

std::function<Mat(const Mat&)> quadratic_drift() {
  return [](const Mat& z) -> Mat { return -z; };
}

Mat velocity(const VelocityField& f, const Mat& z, double t, const Mat& ensemble) {
  if (!f.density) throw ConfigError("velocity field has no density model");
  const DensityEval e = f.density(z, t, ensemble);
  Mat v(z.rows(), z.cols());
  switch (f.kind) {
    case FieldKind::Heat:
    case FieldKind::FokkerPlanck: {
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        if (!(e.rho[j] > 0.0)) throw DensityDomainError("density is not positive at particle " + std::to_string(j));
        v.col(j) = -e.grad.col(j) / e.rho[j];
      }
      if (f.kind == FieldKind::FokkerPlanck) {
        if (!f.grad_a) throw ConfigError("fokker-planck field needs grad A");
        v += f.grad_a(z);
      }
      break;
    }
    case FieldKind::Porous: {
      if (!(f.m > 1.0)) throw ConfigError("porous exponent must exceed 1");
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        // Frozen outside the support.
        v.col(j) = e.rho[j] > 0.0 ? Vec(-f.m * std::pow(e.rho[j], f.m - 2.0) * e.grad.col(j)) : Vec::Zero(z.rows());
      }
      break;
    }
  }
  return v;
}

namespace {

MomentRow moments(int step, double t, const Mat& z) {
  MomentRow r;
  r.step = step;
  r.t = t;
  r.mean = z.rowwise().mean();
  const double n = static_cast<double>(z.cols());
  r.var = (z.colwise() - r.mean).array().square().rowwise().sum() / std::max(1.0, n - 1.0);
  return r;
}

}  // namespace

SimResult simulate(const VelocityField& f, const Mat& ensemble, double t0, double t_end, double h) {
  if (!(h > 0.0)) throw ArgumentError("step size must be positive");
  if (t_end < t0) throw ArgumentError("t_end precedes t0");
  const int steps = static_cast<int>(std::lround((t_end - t0) / h));
  SimResult res;
  res.particles = ensemble;
  res.moments.push_back(moments(0, t0, ensemble));
  for (int k = 1; k <= steps; ++k) {
    const double t = t0 + (k - 1) * h;
    res.particles += h * velocity(f, res.particles, t, res.particles);
    if (!res.particles.allFinite() || res.particles.cwiseAbs().maxCoeff() > 1e6)
      throw BlowUpError("particle ensemble blew up", k);
    res.moments.push_back(moments(k, t0 + k * h, res.particles));
  }
  return res;
}

void write_moments_csv(const std::vector<MomentRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const auto d = rows.empty() ? 0 : rows.front().mean.size();
  out << "step,t";
  for (Eigen::Index i = 0; i < d; ++i) out << ",mean" << i;
  for (Eigen::Index i = 0; i < d; ++i) out << ",var" << i;
  out << '\n';
  out.precision(10);
  for (const auto& r : rows) {
    out << r.step << ',' << r.t;
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << r.mean[i];
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << r.var[i];
    out << '\n';
  }
}

double Grid1d::mass() const {
  double s = 0.0;
  for (double r : rho) s += r;
  return s * dz;
}

Grid1d make_grid(double lo, double hi, std::size_t cells, const std::function<double(double)>& rho0) {
  if (!(hi > lo) || cells < 2) throw ArgumentError("grid needs hi > lo and at least two cells");
  Grid1d g;
  g.lo = lo;
  g.dz = (hi - lo) / static_cast<double>(cells);
  g.rho.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) g.rho[i] = rho0(g.center(i));
  return g;
}

Grid1d grid_oracle_1d(FieldKind kind, const Grid1d& rho0, double t_end, const GridOptions& o) {
  if (t_end < 0.0) throw ArgumentError("t_end must be non-negative");
  for (double r : rho0.rho)
    if (!(r >= 0.0)) throw ArgumentError("initial density must be non-negative");
  if (kind == FieldKind::FokkerPlanck && !o.drift_a) throw ConfigError("fokker-planck oracle needs A'");
  if (kind == FieldKind::Porous && !(o.m > 1.0)) throw ConfigError("porous exponent must exceed 1");

  Grid1d g = rho0;
  const std::size_t n = g.rho.size();
  const double dz = g.dz;

  std::vector<double> a_face(n > 0 ? n - 1 : 0, 0.0);
  double amax = 0.0;
  if (kind == FieldKind::FokkerPlanck) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      a_face[i] = o.drift_a(g.lo + static_cast<double>(i + 1) * dz);
      amax = std::max(amax, std::abs(a_face[i]));
    }
  }
  // The porous limit uses the initial maximum; the scheme obeys a maximum principle.
  auto limit = [&]() {
    switch (kind) {
      case FieldKind::Heat: return 0.5 * dz * dz;
      case FieldKind::FokkerPlanck: return 1.0 / (2.0 / (dz * dz) + amax / dz);
      case FieldKind::Porous: {
        const double rmax = *std::max_element(g.rho.begin(), g.rho.end());
        return rmax > 0.0 ? dz * dz / (2.0 * o.m * std::pow(rmax, o.m - 1.0)) : 1.0;
      }
    }
    return 0.0;
  }();
  double dt = o.dt;
  if (dt > 0.0) {
    if (dt > limit) throw ConfigError("dt " + std::to_string(dt) + " exceeds the stability limit " + std::to_string(limit));
  } else {
    dt = 0.4 * limit;
  }
  const long steps = static_cast<long>(std::ceil(t_end / dt - 1e-12));
  if (steps > 0) dt = t_end / static_cast<double>(steps);

  std::vector<double> flux(n + 1, 0.0), pm(n);
  for (long s = 0; s < steps; ++s) {
    if (kind == FieldKind::Porous)
      for (std::size_t i = 0; i < n; ++i) pm[i] = std::pow(g.rho[i], o.m);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      switch (kind) {
        case FieldKind::Heat: flux[i + 1] = -(g.rho[i + 1] - g.rho[i]) / dz; break;
        case FieldKind::FokkerPlanck:
          flux[i + 1] = a_face[i] * 0.5 * (g.rho[i] + g.rho[i + 1]) - (g.rho[i + 1] - g.rho[i]) / dz;
          break;
        case FieldKind::Porous: flux[i + 1] = -(pm[i + 1] - pm[i]) / dz; break;
      }
    }
    for (std::size_t i = 0; i < n; ++i) g.rho[i] -= dt / dz * (flux[i + 1] - flux[i]);
  }
  return g;
}

std::vector<double> histogram(const Mat& particles, const Grid1d& grid) {
  if (particles.rows() != 1) throw ArgumentError("histogram needs 1-D particles");
  std::vector<double> h(grid.rho.size(), 0.0);
  const double w = 1.0 / (static_cast<double>(particles.cols()) * grid.dz);
  for (Eigen::Index j = 0; j < particles.cols(); ++j) {
    const double u = (particles(0, j) - grid.lo) / grid.dz;
    if (u < 0.0) continue;
    const auto i = static_cast<std::size_t>(u);
    if (i < h.size()) h[i] += w;
  }
  return h;
}

double l1_distance(const std::vector<double>& a, const std::vector<double>& b, double dz) {
  if (a.size() != b.size()) throw ArgumentError("l1_distance size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s * dz;
}

void write_grid_csv(const Grid1d& grid, const std::vector<std::vector<double>>& columns,
                    const std::vector<std::string>& names, const std::filesystem::path& path) {
  if (columns.size() != names.size()) throw ArgumentError("column/name count mismatch");
  for (const auto& c : columns)
    if (c.size() != grid.rho.size()) throw ArgumentError("column length does not match the grid");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << 'z';
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  out.precision(10);
  for (std::size_t i = 0; i < grid.rho.size(); ++i) {
    out << grid.center(i);
    for (const auto& c : columns) out << ',' << c[i];
    out << '\n';
  }
}

double gaussian_w2(double sigma0, double sigma1, int d) {
  if (!(sigma0 > 0.0) || !(sigma1 > 0.0)) throw ArgumentError("gaussian_w2 needs positive scales");
  if (d < 1) throw ArgumentError("gaussian_w2 needs d >= 1");
  return std::sqrt(static_cast<double>(d)) * std::abs(sigma1 - sigma0);
}

flows::EnergyField train_hj_transport(const HjTransportOptions& o) {
  if (o.d < 1 || o.iterations < 0 || o.batch_size < 1) throw ConfigError("invalid hj transport options");
  gaussian_w2(o.sigma0, o.sigma1, o.d);  // validates the scales
  Rng init = make_rng(o.seed, 1200);
  Rng rng = make_rng(o.seed, 1201);
  flows::FieldConfig cfg = o.field;
  cfg.pde = flows::PdeKind::Hj;
  flows::EnergyField f(o.d, cfg, init);
  diffnet::Optimizer opt(o.opt);
  auto params = f.parameters();
  const double a = o.sigma1 / o.sigma0 - 1.0;
  const double spread = std::max(o.sigma0, o.sigma1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const flows::StencilOptions st{};
  const auto b = o.batch_size;

  for (int it = 0; it < o.iterations; ++it) {
    // Residual points cover the region swept between the two scales.
    Vec t(b);
    for (Eigen::Index j = 0; j < b; ++j) t[j] = unif(rng);
    const Mat z = spread * standard_normal(rng, o.d, b);
    flows::LossGrad lg = flows::hj_loss(f, t, z, st);

    const Mat z0 = o.sigma0 * standard_normal(rng, o.d, b);
    const Vec t0 = Vec::Zero(b);
    const Vec target = 0.5 * a * z0.colwise().squaredNorm().transpose();
    const Vec r = f.value(t0, z0) - target;
    const Vec w = 2.0 * r / static_cast<double>(b);
    diffnet::add_into(lg.grad, f.param_grad(t0, z0, w));
    opt.step(params, lg.grad);
  }
  return f;
}

TransportCost transport_cost(const flows::EnergyField& f, const Mat& z0, int steps) {
  if (steps < 1) throw ArgumentError("transport_cost needs at least one step");
  const double h = 1.0 / steps;
  TransportCost tc;
  Mat z = z0;
  for (int k = 0; k < steps; ++k) {
    const Mat v = f.velocity(Vec::Constant(z.cols(), k * h), z);
    tc.cost += h * 0.5 * v.colwise().squaredNorm().mean();
    z += h * v;
  }
  tc.endpoint_rms = std::sqrt(z.squaredNorm() / static_cast<double>(z.size()));
  tc.endpoint = std::move(z);
  return tc;
}

}  // namespace chemflow::wgflab
