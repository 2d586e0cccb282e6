#include <doctest.h>

#include <filesystem>

#include "chemflow/checkpoint.hpp"
#include "chemflow/diffnet.hpp"
#include "../common/gradcheck.hpp"

using namespace chemflow;
using namespace chemflow::diffnet;
using chemflow::testing::check_net;

namespace {

// phi(t, z) given in closed form, with derivatives supplied analytically.
struct QuadraticField : ScalarField {
  int d;
  double a, b;  // phi = a t^2 / 2 + b |z|^2 / 2
  int dim() const override { return d; }
  Vec value(const Vec& t, const Mat& z) const override {
    return (0.5 * a * t.array().square() + 0.5 * b * z.colwise().squaredNorm().transpose().array()).matrix();
  }
  void gradients(const Vec& t, const Mat& z, Vec* dt, Mat* dz) const override {
    if (dt) *dt = a * t;
    if (dz) *dz = b * z;
  }
};

struct AffineField : ScalarField {
  Vec w;
  double c;
  int dim() const override { return static_cast<int>(w.size()); }
  Vec value(const Vec& t, const Mat& z) const override { return (c * t + z.transpose() * w); }
  void gradients(const Vec& t, const Mat& z, Vec* dt, Mat* dz) const override {
    if (dt) *dt = Vec::Constant(t.size(), c);
    if (dz) *dz = w.replicate(1, z.cols());
  }
};

}  // namespace

TEST_CASE("single identity layer passes inputs and gradients through") {
  Rng rng(1);
  DenseNet net;
  net.add_dense(4, 4, Activation::Identity, rng);
  net.layers()[0].weight.setIdentity();
  net.layers()[0].bias.setZero();
  Mat x = standard_normal(rng, 4, 5);
  CHECK((net.forward(x) - x).norm() == 0.0);
  Mat up = standard_normal(rng, 4, 5);
  CHECK((net.grad_input(x, up) - up).norm() == 0.0);
}

TEST_CASE("linear layer input gradient is the transpose product") {
  Rng rng(2);
  DenseNet net;
  net.add_dense(5, 3, Activation::Identity, rng);
  Mat x = standard_normal(rng, 5, 7);
  Mat up = standard_normal(rng, 3, 7);
  const Mat expect = net.layers()[0].weight.transpose() * up;
  CHECK((net.grad_input(x, up) - expect).norm() < 1e-12);
}

TEST_CASE("reverse-mode gradients match central differences") {
  Rng rng(3);
  SUBCASE("mish mlp") {
    DenseNet net = DenseNet::mlp({6, 8, 8, 3}, Activation::Mish, Activation::Identity, rng);
    auto r = check_net(net, standard_normal(rng, 6, 4), standard_normal(rng, 3, 4));
    CHECK(r.checked > 100);
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("residual blocks") {
    DenseNet net;
    net.add_dense(5, 6, Activation::Identity, rng);
    net.add_residual(6, rng);
    net.add_residual(6, rng);
    net.add_dense(6, 1, Activation::Identity, rng);
    auto r = check_net(net, standard_normal(rng, 5, 3), standard_normal(rng, 1, 3));
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("grouped softmax output") {
    DenseNet net = DenseNet::mlp({4, 7, 12}, Activation::Mish, Activation::Softmax, rng, 4);
    auto r = check_net(net, standard_normal(rng, 4, 3), standard_normal(rng, 12, 3));
    CHECK(r.max_rel_err < 1e-4);
  }
  SUBCASE("skip_last_activation differentiates the logits") {
    DenseNet net = DenseNet::mlp({4, 7, 6}, Activation::Mish, Activation::Softmax, rng, 3);
    auto r = check_net(net, standard_normal(rng, 4, 3), standard_normal(rng, 6, 3), 1, true);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("softmax groups sum to one") {
  Rng rng(4);
  DenseNet net = DenseNet::mlp({3, 12}, Activation::Identity, Activation::Softmax, rng, 4);
  Mat y = net.forward(standard_normal(rng, 3, 5));
  for (int c = 0; c < 5; ++c)
    for (int g = 0; g < 3; ++g) CHECK(y.col(c).segment(4 * g, 4).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("non-finite activation reports the layer") {
  Rng rng(5);
  DenseNet net = DenseNet::mlp({2, 4, 1}, Activation::Mish, Activation::Identity, rng);
  Mat x(2, 1);
  x << 1.0, std::numeric_limits<double>::quiet_NaN();
  try {
    net.forward(x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.layer == 0);
  }
}

TEST_CASE("jvp") {
  Rng rng(6);
  SUBCASE("linear map gives W v") {
    DenseNet net;
    net.add_dense(4, 3, Activation::Identity, rng);
    Mat x = standard_normal(rng, 4, 2), v = standard_normal(rng, 4, 2);
    CHECK((jvp(net, x, v) - net.layers()[0].weight * v).norm() < 1e-9);
  }
  SUBCASE("zero direction") {
    DenseNet net = DenseNet::mlp({3, 5, 2}, Activation::Mish, Activation::Identity, rng);
    Mat x = standard_normal(rng, 3, 2);
    CHECK(jvp(net, x, Mat::Zero(3, 2)).norm() == 0.0);
  }
  SUBCASE("invalid arguments") {
    DenseNet net = DenseNet::mlp({3, 2}, Activation::Identity, Activation::Identity, rng);
    Mat x = standard_normal(rng, 3, 1), v = standard_normal(rng, 3, 1);
    CHECK_THROWS_AS(jvp(net, x, v, 0.0), ArgumentError);
    v(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(jvp(net, x, v), ArgumentError);
  }
  SUBCASE("agrees with a central-difference oracle") {
    DenseNet net = DenseNet::mlp({5, 16, 4}, Activation::Mish, Activation::Identity, rng);
    Mat x = standard_normal(rng, 5, 8), v = standard_normal(rng, 5, 8);
    const double h = 1e-4;
    const Mat oracle = (net.forward(x + h * v) - net.forward(x - h * v)) / (2 * h);
    const Mat got = jvp(net, x, v);
    CHECK((got - oracle).norm() / oracle.norm() < 1e-3);
  }
}

TEST_CASE("second derivatives of closed-form fields") {
  Rng rng(7);
  Vec t = Vec::LinSpaced(4, 0.0, 3.0);
  Mat z = standard_normal(rng, 3, 4);
  SUBCASE("constant field") {
    AffineField f;
    f.w = Vec::Zero(3);
    f.c = 0.0;
    auto s = second_derivs(f, t, z);
    CHECK(s.dt.norm() == 0.0);
    CHECK(s.grad.norm() == 0.0);
    CHECK(s.dtt.norm() == 0.0);
    CHECK(s.lap.norm() == 0.0);
  }
  SUBCASE("half squared norm has Laplacian d") {
    QuadraticField f;
    f.d = 3;
    f.a = 2.0;
    f.b = 1.0;
    auto s = second_derivs(f, t, z);
    for (int j = 0; j < 4; ++j) {
      CHECK(s.lap[j] == doctest::Approx(3.0).epsilon(1e-9));
      CHECK(s.dtt[j] == doctest::Approx(2.0).epsilon(1e-9));
    }
    SecondDerivOptions h;
    h.mode = LaplacianMode::Hutchinson;
    h.probes = 4;
    auto sh = second_derivs(f, t, z, h);
    // Rademacher probes are exact for an isotropic Hessian.
    for (int j = 0; j < 4; ++j) CHECK(sh.lap[j] == doctest::Approx(3.0).epsilon(1e-9));
  }
  SUBCASE("affine field") {
    AffineField f;
    f.w = standard_normal(rng, 3);
    f.c = 0.7;
    auto s = second_derivs(f, t, z);
    CHECK((s.dt.array() - 0.7).abs().maxCoeff() < 1e-12);
    CHECK((s.grad - f.w.replicate(1, 4)).norm() < 1e-12);
    CHECK(s.dtt.cwiseAbs().maxCoeff() < 1e-6);
    CHECK(s.lap.cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("time embedding") {
  Rng rng(8);
  TimeEmbedding emb(16, rng);
  Vec t = Vec::LinSpaced(1001, 0.0, 1000.0);
  SUBCASE("injective on integer times") {
    const Mat e = emb.forward(t);
    double min_dist = 1e300;
    for (int i = 0; i < 1001; ++i)
      for (int j = i + 1; j < 1001; ++j) min_dist = std::min(min_dist, (e.col(i) - e.col(j)).norm());
    CHECK(min_dist > 1e-6);
  }
  SUBCASE("features_dt is the time derivative") {
    const Vec tt = Vec::LinSpaced(7, 0.0, 30.0);
    const double h = 1e-6;
    const Mat fd = (emb.features((tt.array() + h).matrix()) - emb.features((tt.array() - h).matrix())) / (2 * h);
    CHECK((fd - emb.features_dt(tt)).cwiseAbs().maxCoeff() < 1e-7);
  }
  CHECK_THROWS_AS(TimeEmbedding(7, rng), ArgumentError);
}

TEST_CASE("optimizers") {
  SUBCASE("sgd with zero gradient leaves parameters unchanged") {
    Mat p = Mat::Constant(2, 2, 3.0);
    std::vector<ParamRef> params{{"p", Eigen::Map<Mat>(p.data(), 2, 2)}};
    Optimizer opt({.kind = OptimizerKind::Sgd, .lr = 0.5, .weight_decay = 0.0});
    opt.step(params, {Mat::Zero(2, 2)});
    CHECK((p.array() == 3.0).all());
  }
  SUBCASE("sgd on x^2 from 1 with lr 0.1") {
    Mat p = Mat::Constant(1, 1, 1.0);
    std::vector<ParamRef> params{{"x", Eigen::Map<Mat>(p.data(), 1, 1)}};
    Optimizer opt({.kind = OptimizerKind::Sgd, .lr = 0.1});
    opt.step(params, {2.0 * p});
    CHECK(p(0, 0) == doctest::Approx(0.8).epsilon(1e-12));
  }
  SUBCASE("adamw decreases a convex loss every step") {
    Mat p = Mat::Constant(3, 1, 1.0);
    std::vector<ParamRef> params{{"x", Eigen::Map<Mat>(p.data(), 3, 1)}};
    Optimizer opt;
    double prev = p.squaredNorm();
    for (int i = 0; i < 100; ++i) {
      opt.step(params, {2.0 * p});
      const double loss = p.squaredNorm();
      REQUIRE(loss < prev);
      prev = loss;
    }
  }
  SUBCASE("shape mismatch") {
    Mat p = Mat::Zero(2, 2);
    std::vector<ParamRef> params{{"p", Eigen::Map<Mat>(p.data(), 2, 2)}};
    Optimizer opt;
    CHECK_THROWS_AS(opt.step(params, {Mat::Zero(2, 3)}), ArgumentError);
    CHECK_THROWS_AS(opt.step(params, {}), ArgumentError);
  }
  SUBCASE("cosine schedule restarts") {
    Optimizer opt({.lr = 1.0, .cosine_period = 4, .min_lr = 0.0});
    CHECK(opt.current_lr() == doctest::Approx(1.0));
  }
}

TEST_CASE("fixed seed gives identical nets and outputs") {
  Rng a(42), b(42);
  DenseNet na = DenseNet::mlp({3, 8, 2}, Activation::Mish, Activation::Identity, a);
  DenseNet nb = DenseNet::mlp({3, 8, 2}, Activation::Mish, Activation::Identity, b);
  Mat x = Mat::Ones(3, 2);
  CHECK((na.forward(x) - nb.forward(x)).norm() == 0.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(9);
  DenseNet net;
  net.add_dense(4, 6, Activation::Mish, rng);
  net.add_residual(6, rng);
  net.add_dense(6, 6, Activation::Softmax, rng, 3);
  Checkpoint ck;
  ck.header["kind"] = "test";
  ck.add_net("net", net);
  ck.add("extra", standard_normal(rng, 2, 3));
  const auto path = std::filesystem::temp_directory_path() / "chemflow_test_ckpt.bin";
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back.header["kind"] == "test");
  CHECK(back.array("extra") == ck.array("extra"));
  DenseNet net2 = back.net("net");
  Mat x = standard_normal(rng, 4, 3);
  CHECK(net2.forward(x) == net.forward(x));
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}
