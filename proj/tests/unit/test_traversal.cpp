#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "chemflow/traversal.hpp"

using namespace chemflow;
using namespace chemflow::traversal;

namespace {

DirectionSource linear_source(const Vec& n, double alpha) {
  DirectionSource s;
  s.kind = SourceKind::Random;
  s.direction = n;
  s.alpha = alpha;
  return s;
}

double angle_deg(const Vec& a, const Vec& b) {
  return std::acos(std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST_CASE("source kinds round trip by name") {
  for (auto k : {SourceKind::LearnedFlow, SourceKind::GradientFlow, SourceKind::Langevin, SourceKind::Random,
                 SourceKind::Random1d, SourceKind::ChemSpace})
    CHECK(parse_kind(kind_name(k)) == k);
  CHECK_THROWS_AS(parse_kind("sideways"), ConfigError);
}

TEST_CASE("step updates") {
  SUBCASE("langevin with zero gradient and beta 0 leaves z unchanged") {
    DirectionSource s;
    s.kind = SourceKind::Langevin;
    s.beta = 0.0;
    s.potentials = {quadratic_potential(Vec::Zero(3))};
    const Mat z = Mat::Zero(3, 2);
    CHECK(step(s, 1, z) == z);
  }
  SUBCASE("gradient flow on 1/2 |z|^2") {
    DirectionSource s;
    s.kind = SourceKind::GradientFlow;
    s.alpha = 0.1;
    s.potentials = {quadratic_potential(Vec::Zero(2))};
    const Mat z = (Mat(2, 1) << 1.0, 0.0).finished();
    const Mat next = step(s, 1, z);
    CHECK(next(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(next(1, 0) == 0.0);
  }
  SUBCASE("random_1d moves a single coordinate by +-alpha") {
    Rng rng(1);
    const Vec n = random_1d_direction(8, rng);
    CHECK(n.cwiseAbs().sum() == 1.0);
    CHECK(n.norm() == 1.0);
    const Mat z = Mat::Random(8, 3);
    const Mat next = step(linear_source(n, 0.5), 1, z);
    CHECK(((next - z).cwiseAbs().array() > 0).count() == 3);
  }
  SUBCASE("learned flow uses phi(t - 1, .)") {
    Rng rng(2);
    flows::FieldConfig fc;
    fc.embed_dim = 4;
    fc.hidden = {8};
    flows::EnergyField f(3, fc, rng);
    DirectionSource s;
    s.kind = SourceKind::LearnedFlow;
    s.alpha = 0.3;
    s.fields = {&f};
    const Mat z = standard_normal(rng, 3, 4);
    CHECK(step(s, 3, z) == z + 0.3 * f.velocity(Vec::Constant(4, 2.0), z));
  }
  SUBCASE("missing models are configuration errors") {
    DirectionSource s;
    s.kind = SourceKind::GradientFlow;
    CHECK_THROWS_AS(traverse_latent(s, Mat::Zero(2, 1), 1, 0), ConfigError);
    s.kind = SourceKind::Langevin;
    CHECK_THROWS_AS(traverse_latent(s, Mat::Zero(2, 1), 1, 0), ConfigError);
    s.kind = SourceKind::LearnedFlow;
    CHECK_THROWS_AS(traverse_latent(s, Mat::Zero(2, 1), 1, 0), ConfigError);
    s.kind = SourceKind::Random;
    s.direction = Vec::Ones(2);  // not unit
    CHECK_THROWS_AS(traverse_latent(s, Mat::Zero(2, 1), 1, 0), ConfigError);
  }
}

TEST_CASE("traverse_latent") {
  Rng rng(3);
  const Vec n = random_direction(4, rng);
  CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-15));
  const Mat z0 = standard_normal(rng, 4, 5);

  SUBCASE("T = 1 gives two states") { CHECK(traverse_latent(linear_source(n, 0.1), z0, 1, 0).size() == 2); }
  SUBCASE("T = 0 is rejected") { CHECK_THROWS_AS(traverse_latent(linear_source(n, 0.1), z0, 0, 0), ArgumentError); }
  SUBCASE("alpha = 0 keeps every state identical") {
    for (const auto& z : traverse_latent(linear_source(n, 0.0), z0, 5, 0)) CHECK(z == z0);
  }
  SUBCASE("T steps of alpha equal one step of T alpha") {
    const auto many = traverse_latent(linear_source(n, 0.1), z0, 8, 0);
    const auto one = traverse_latent(linear_source(n, 0.8), z0, 1, 0);
    CHECK((many.back() - one.back()).cwiseAbs().maxCoeff() < 1e-14);
    // Exact when every increment is exactly representable.
    Vec e = Vec::Zero(4);
    e[2] = -1.0;
    CHECK(traverse_latent(linear_source(e, 0.25), z0, 4, 0).back() ==
          traverse_latent(linear_source(e, 1.0), z0, 1, 0).back());
  }
  SUBCASE("langevin trajectories are bit-reproducible and independent of batching") {
    DirectionSource s;
    s.kind = SourceKind::Langevin;
    s.alpha = 0.05;
    s.beta = 0.8;
    s.potentials = {quadratic_potential(Vec::Zero(4))};
    const auto a = traverse_latent(s, z0, 6, 11);
    const auto b = traverse_latent(s, z0, 6, 11);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t] == b[t]);
    // Column 3 traversed alone with trajectory id 3.
    const auto single = traverse_latent(s, z0.col(3), 6, 11, 3);
    CHECK(single.back().col(0) == a.back().col(3));
    const auto other = traverse_latent(s, z0, 6, 12);
    CHECK(other.back() != a.back());
  }
}

TEST_CASE("langevin on a quadratic reaches the N(0, I) stationary variance") {
  DirectionSource s;
  s.kind = SourceKind::Langevin;
  s.alpha = 0.01;
  s.beta = 1.0;
  s.potentials = {quadratic_potential(Vec::Zero(2))};
  const int chains = 2000;
  NoiseStreams noise(5, 0, chains);
  Mat z = Mat::Constant(2, chains, 3.0);
  for (int t = 1; t <= 1500; ++t) z = step(s, t, z, &noise);
  // Euler-Maruyama stationary variance is 1 / (1 - alpha / 2).
  for (int i = 0; i < 2; ++i) {
    const double mean = z.row(i).mean();
    const double var = (z.row(i).array() - mean).square().mean();
    CHECK(std::abs(var - 1.0) < 0.1);
    CHECK(std::abs(mean) < 0.1);
  }
}

TEST_CASE("double-well potential") {
  const auto p = double_well_potential();
  const Mat minima = (Mat(2, 2) << -1.0, 1.0, 0.0, 0.0).finished();
  const Vec v = p.value(minima);
  CHECK(v[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(p.grad(minima).cwiseAbs().maxCoeff() == 0.0);
  const Mat saddle = (Mat(2, 1) << kDoubleWellSeparatrix, 0.0).finished();
  CHECK(p.grad(saddle).cwiseAbs().maxCoeff() < 1e-15);
  // Analytic gradient against central differences.
  Rng rng(6);
  Mat z = 1.5 * standard_normal(rng, 2, 6);
  const Mat g = p.grad(z);
  for (int i = 0; i < 2; ++i) {
    Mat zp = z, zm = z;
    zp.row(i).array() += 1e-6;
    zm.row(i).array() -= 1e-6;
    const Vec fd = (p.value(zp) - p.value(zm)) / 2e-6;
    CHECK((fd - g.row(i).transpose()).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("multi-objective direction") {
  const Mat v = (Mat(3, 1) << 1.0, -2.0, 0.5).finished();
  CHECK(multi_objective_direction({v, v}) == v);
  CHECK(multi_objective_direction({v, Mat(-v)}).cwiseAbs().maxCoeff() == 0.0);
  const Mat a = (Mat(2, 1) << 1.0, 2.0).finished(), b = (Mat(2, 1) << 4.0, -1.0).finished(),
            c = (Mat(2, 1) << -2.0, 5.0).finished();
  const Mat m = multi_objective_direction({a, b, c});
  CHECK(m(0, 0) == doctest::Approx(1.0));
  CHECK(m(1, 0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(multi_objective_direction({}), ArgumentError);
}

TEST_CASE("chemspace boundary") {
  Rng rng(7);
  const int n = 400;
  Mat x(2, n);
  std::vector<int> labels(n);
  for (int j = 0; j < n; ++j) {
    const double side = j % 2 == 0 ? 1.0 : -1.0;
    x.col(j) = side * Vec::Unit(2, 0) + 0.2 * standard_normal(rng, 2);
    labels[j] = side > 0 ? 1 : 0;
  }
  const Vec w = fit_chemspace_boundary(x, labels);
  CHECK(std::abs(w.norm() - 1.0) < 1e-12);
  CHECK(angle_deg(w, Vec::Unit(2, 0)) < 5.0);

  std::vector<int> flipped(n);
  for (int j = 0; j < n; ++j) flipped[j] = 1 - labels[j];
  const Vec wf = fit_chemspace_boundary(x, flipped);
  CHECK(angle_deg(wf, -w) < 5.0);

  CHECK_THROWS_AS(fit_chemspace_boundary(x, std::vector<int>(n, 1)), DegenerateError);
  std::vector<int> few(n, 0);
  for (int j = 0; j < 10; ++j) few[j] = 1;
  CHECK_THROWS_AS(fit_chemspace_boundary(x, few), ArgumentError);

  const Vec values = (Vec(5) << 3.0, 1.0, 2.0, 5.0, 4.0).finished();
  CHECK(median_labels(values) == std::vector<int>{0, 0, 0, 1, 1});
}

TEST_CASE("evolutionary baseline") {
  const int d = 6;
  Rng rng(8);
  const Mat z0 = standard_normal(rng, d, 64);
  Vec target = Vec::Zero(d);
  target[0] = 300.0;
  // Maximize -|z - z*|^2 with the unit gradient direction.
  ScoreFn score = [&](const Mat& z) -> Vec { return -(z.colwise() - target).colwise().squaredNorm().transpose(); };
  DirectionFn toward = [&](const Mat& z) -> Mat {
    Mat g = -(z.colwise() - target);
    for (Eigen::Index j = 0; j < g.cols(); ++j) g.col(j) /= std::max(g.col(j).norm(), 1e-12);
    return g;
  };

  SUBCASE("steps = 0 returns the initial population") {
    EaOptions o;
    o.steps = 0;
    const auto r = ea_optimize(z0, score, toward, o);
    CHECK(r.population == z0);
    CHECK(r.best_score.size() == 1);
  }
  SUBCASE("alpha = 0 without noise collapses onto the top-k ancestors") {
    EaOptions o;
    o.alpha = 0.0;
    o.noise_scale = 0.0;
    o.steps = 1;
    const auto r = ea_optimize(z0, score, toward, o);
    const Vec s0 = score(z0);
    std::vector<int> idx(64);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s0[a] > s0[b]; });
    for (int j = 0; j < o.k; ++j)
      for (int r2 = 0; r2 < 8; ++r2) CHECK(r.population.col(j * 8 + r2) == z0.col(idx[j]));
  }
  SUBCASE("quadratic landscape improves almost monotonically") {
    // Per-iteration progress along the direction is alpha against unit
    // Gaussian perturbations, so alpha = 3 keeps regressions rare.
    EaOptions o;
    o.n = 64;
    o.k = 8;
    o.alpha = 3.0;
    o.steps = 50;
    o.seed = 3;
    const auto r = ea_optimize(z0, score, toward, o);
    REQUIRE(r.best_score.size() == 51);
    int improved = 0;
    for (int i = 1; i <= 50; ++i) improved += r.best_score[i] > r.best_score[i - 1];
    CHECK(improved >= 45);
  }
  SUBCASE("argument checks") {
    EaOptions o;
    o.k = 65;
    CHECK_THROWS_AS(ea_optimize(z0, score, toward, o), ArgumentError);
    o.k = 7;
    CHECK_THROWS_AS(ea_optimize(z0, score, toward, o), ArgumentError);
  }
}

TEST_CASE("trajectories decode, score and round trip through JSONL") {
  genvae::VaeConfig cfg;
  cfg.length = 8;
  cfg.latent = 3;
  cfg.enc_hidden = {8};
  cfg.dec_hidden = {8};
  Rng rng(9);
  genvae::VaeModel vae(cfg, rng);
  const auto corpus = molkit::gen_corpus(200, 2);
  const Mat z0 = standard_normal(rng, 3, 4);
  const auto trajs = traverse(linear_source(random_direction(3, rng), 0.5), vae, corpus.stats, z0, 3, 0, 10);
  REQUIRE(trajs.size() == 4);
  CHECK(trajs[2].id == 12);
  REQUIRE(trajs[2].points.size() == 4);
  const auto& p = trajs[2].points[3];
  CHECK(p.tokens == vae.decode_sequences(p.z)[0]);
  CHECK(p.props.plogp == molkit::all_properties(molkit::decode(p.tokens), corpus.stats).plogp);

  const auto path = std::filesystem::temp_directory_path() / "chemflow_traj.jsonl";
  write_jsonl(trajs, path);
  const auto back = read_jsonl(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == trajs.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == trajs[i].id);
    for (std::size_t t = 0; t < back[i].points.size(); ++t) {
      CHECK(back[i].points[t].z == trajs[i].points[t].z);
      CHECK(back[i].points[t].tokens == trajs[i].points[t].tokens);
      CHECK(back[i].points[t].props.qed_lite == trajs[i].points[t].props.qed_lite);
    }
  }
}

TEST_CASE("learned HJ flow fitted to the analytic plane wave transports along a") {
  // Fit phi to a.z - |a|^2 t / 2 by value regression, then traverse.
  const Vec a = (Vec(2) << 0.6, -0.8).finished();
  flows::FieldConfig fc;
  fc.embed_dim = 4;
  fc.hidden = {32, 32};
  fc.pde = flows::PdeKind::Hj;
  fc.horizon = 5;
  Rng rng(10);
  flows::EnergyField f(2, fc, rng);
  diffnet::Optimizer opt({.lr = 3e-3, .weight_decay = 0.0});
  std::uniform_real_distribution<double> ut(0.0, 5.0);
  for (int it = 0; it < 3000; ++it) {
    const Mat z = 1.5 * standard_normal(rng, 2, 64);
    Vec t(64);
    for (auto& v : t) v = ut(rng);
    const Vec target = z.transpose() * a - 0.5 * a.squaredNorm() * t;
    const Vec err = f.value(t, z) - target;
    auto g = f.param_grad(t, z, (2.0 / 64) * err);
    auto params = f.parameters();
    opt.step(params, g);
  }
  DirectionSource s;
  s.kind = SourceKind::LearnedFlow;
  s.alpha = 0.1;
  s.fields = {&f};
  const Mat z0 = 0.5 * standard_normal(rng, 2, 20);
  const auto states = traverse_latent(s, z0, 5, 0);
  const Vec expected = 5 * 0.1 * a;
  for (Eigen::Index j = 0; j < z0.cols(); ++j) {
    CAPTURE(j);
    CHECK((states.back().col(j) - z0.col(j) - expected).norm() < 0.05 * expected.norm());
  }
}
