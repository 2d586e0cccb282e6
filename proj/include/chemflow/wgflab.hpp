#pragma once

// Particle checks of the velocity fields behind heat, Fokker-Planck and
// porous-medium flows, a finite-volume 1-D oracle for the same PDEs, and the
// Gaussian W2 checkpoint for HJ transport.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "chemflow/flows.hpp"

namespace chemflow::wgflab {

enum class FieldKind { Heat, FokkerPlanck, Porous };
std::string field_name(FieldKind k);
FieldKind parse_field(const std::string& s);

// Density and its gradient at the columns of z.
struct DensityEval {
  Vec rho;
  Mat grad;
};
// (z, t, current ensemble) -> density. Analytic models ignore the ensemble.
using DensityFn = std::function<DensityEval(const Mat& z, double t, const Mat& ensemble)>;

// N(0, var(t) I).
DensityFn gaussian_density(std::function<double(double)> variance);
// Heat flow from N(0, s0^2 I): var = s0^2 + 2t.
DensityFn heat_gaussian(double sigma0);
// Fokker-Planck with A = -|z|^2 / 2 (Ornstein-Uhlenbeck) from N(0, s0^2 I):
// var = 1 + (s0^2 - 1) exp(-2t).
DensityFn fp_quadratic_gaussian(double sigma0);
// Static 1-D parabolic profile max(0, 1 - z^2).
DensityFn parabolic_profile();
// Gaussian KDE over the current ensemble; bandwidth <= 0 uses Silverman's rule.
// O(N^2) per evaluation, intended for small qualitative runs.
DensityFn kde_density(double bandwidth = 0.0);

struct VelocityField {
  FieldKind kind = FieldKind::Heat;
  DensityFn density;
  std::function<Mat(const Mat&)> grad_a;  // grad A for Fokker-Planck
  double m = 2.0;                         // porous exponent, > 1
};

// A = -|z|^2 / 2
std::function<Mat(const Mat&)> quadratic_drift();

// heat: -grad log rho; FP: grad A - grad log rho; porous: -m rho^(m-2) grad rho.
// DensityDomainError where rho <= 0 for heat and FP. Porous particles at
// rho <= 0 are frozen (v = 0). ConfigError when m <= 1.
Mat velocity(const VelocityField& f, const Mat& z, double t, const Mat& ensemble);
inline Mat velocity(const VelocityField& f, const Mat& z, double t) { return velocity(f, z, t, z); }

struct MomentRow {
  int step = 0;
  double t = 0.0;
  Vec mean, var;  // per coordinate
};

struct SimResult {
  Mat particles;
  std::vector<MomentRow> moments;  // step 0 (initial) through the last step
};

// Explicit Euler z <- z + h v(z, t). BlowUpError (with the step) once any
// coordinate exceeds 1e6 in magnitude.
SimResult simulate(const VelocityField& f, const Mat& ensemble, double t0, double t_end, double h);

void write_moments_csv(const std::vector<MomentRow>& rows, const std::filesystem::path& path);

// 1-D finite-volume oracle -------------------------------------------------------

struct Grid1d {
  double lo = -8.0;
  double dz = 0.01;
  std::vector<double> rho;  // cell averages
  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * dz; }
  double mass() const;
};

Grid1d make_grid(double lo, double hi, std::size_t cells, const std::function<double(double)>& rho0);

struct GridOptions {
  double dt = 0.0;  // 0 picks 0.4 of the stability limit
  double m = 2.0;   // porous exponent
  std::function<double(double)> drift_a;  // A'(z) for Fokker-Planck
};

// Heat: rho_t = rho_zz. FP: rho_t = -(rho A')_z + rho_zz. Porous: rho_t = (rho^m)_zz.
// Zero-flux boundaries conserve mass to roundoff. ConfigError when an explicit
// dt exceeds the stability limit, ArgumentError on negative rho0 or t_end < 0.
Grid1d grid_oracle_1d(FieldKind kind, const Grid1d& rho0, double t_end, const GridOptions& o = {});

// Histogram of 1-D particles on the grid cells (density units).
std::vector<double> histogram(const Mat& particles, const Grid1d& grid);
double l1_distance(const std::vector<double>& a, const std::vector<double>& b, double dz);

void write_grid_csv(const Grid1d& grid, const std::vector<std::vector<double>>& columns,
                    const std::vector<std::string>& names, const std::filesystem::path& path);

// Optimal transport checkpoint ---------------------------------------------------

// W2 between N(0, s0^2 I_d) and N(0, s1^2 I_d): sqrt(d) |s1 - s0|.
double gaussian_w2(double sigma0, double sigma1, int d);

struct HjTransportOptions {
  int d = 2;
  double sigma0 = 1.0, sigma1 = 2.0;
  int iterations = 3000;
  int batch_size = 128;
  std::uint64_t seed = 0;
  flows::FieldConfig field{.embed_dim = 8, .hidden = {64, 64}, .pde = flows::PdeKind::Hj, .horizon = 1};
  diffnet::OptimizerConfig opt{.lr = 2e-3, .weight_decay = 0.0};
};

// Trains phi on t in [0, 1] with the HJ residual plus the initial condition
// phi(0, z) = a |z|^2 / 2, a = s1/s0 - 1, whose characteristics carry
// N(0, s0^2 I) to N(0, s1^2 I) at t = 1.
flows::EnergyField train_hj_transport(const HjTransportOptions& o);

struct TransportCost {
  double cost = 0.0;  // sum_k h mean 1/2 |v_k|^2 over Euler steps on [0, 1]
  double endpoint_rms = 0.0;  // sqrt(E|z_1|^2 / d)
  Mat endpoint;
};
TransportCost transport_cost(const flows::EnergyField& f, const Mat& z0, int steps);

}  // namespace chemflow::wgflab
