#include <doctest.h>

#include <filesystem>

#include "chemflow/flows.hpp"
#include "chemflow/genvae.hpp"
#include "../common/gradcheck.hpp"

using namespace chemflow;
using namespace chemflow::genvae;
using chemflow::testing::check_gradient;
using molkit::TokenSequence;

namespace {

VaeModel tiny_vae(std::uint64_t seed, int length = 4) {
  VaeConfig cfg;
  cfg.length = length;
  cfg.latent = 3;
  cfg.enc_hidden = {8};
  cfg.dec_hidden = {8};
  cfg.beta_kl = 0.7;
  Rng rng = make_rng(seed);
  return VaeModel(cfg, rng);
}

std::vector<TokenSequence> corpus_seqs(int n, std::uint64_t seed, int max_len = 20, int length = 24) {
  std::vector<TokenSequence> out;
  for (auto& s : molkit::sample_sequences(n, seed, max_len, length)) out.push_back(s);
  return out;
}

bool valence_legal(const molkit::MolGraph& g) {
  for (int a = 0; a < g.atom_count(); ++a)
    if (g.bond_order_sum(a) > g.atoms[a].valence) return false;
  return true;
}

bool same_params(diffnet::DenseNet a, diffnet::DenseNet b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].value != pb[i].value) return false;
  return true;
}

}  // namespace

TEST_CASE("KL divergence is zero at the prior") {
  const Mat mu = Mat::Zero(4, 3), lv = Mat::Zero(4, 3);
  CHECK(kl_divergence(mu, lv).cwiseAbs().maxCoeff() == 0.0);
  Mat mu2 = Mat::Zero(2, 1);
  mu2 << 1.0, -2.0;
  Mat lv2 = Mat::Zero(2, 1);
  lv2 << std::log(4.0), 0.0;
  // 0.5 * [(1 + 4 - 1 - ln 4) + (4 + 1 - 1 - 0)]
  CHECK(kl_divergence(mu2, lv2)[0] == doctest::Approx(0.5 * (4.0 - std::log(4.0) + 4.0)));
}

TEST_CASE("sigma to zero limit gives z = mu") {
  Rng rng(1);
  const Mat mu = standard_normal(rng, 5, 7);
  const Mat lv = Mat::Constant(5, 7, kLogvarMin);
  const Mat z = sample_z(mu, lv, rng);
  CHECK((z - mu).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("encode clamps logvar to the configured range") {
  auto vae = tiny_vae(2);
  vae.encoder().layers().back().bias.setConstant(100.0);
  Mat mu, lv;
  vae.encode(one_hot(corpus_seqs(3, 1, 4, 4), 4), mu, lv);
  CHECK(lv.maxCoeff() == kLogvarMax);
  vae.encoder().layers().back().bias.setConstant(-100.0);
  vae.encode(one_hot(corpus_seqs(3, 1, 4, 4), 4), mu, lv);
  CHECK(lv.minCoeff() == kLogvarMin);
}

TEST_CASE("one-hot layout and argmax decode round trip") {
  const auto seqs = corpus_seqs(5, 3);
  const Mat x = one_hot(seqs, 24);
  CHECK(x.rows() == 24 * molkit::kAlphabetSize);
  for (int j = 0; j < 5; ++j) {
    CHECK(x.col(j).sum() == 24.0);
    CHECK(argmax_sequence(x.col(j), 24) == seqs[j]);
  }
}

TEST_CASE("every prior sample decodes to a valid graph") {
  Rng rng(4);
  VaeModel vae(VaeConfig{}, rng);
  const Mat z = standard_normal(rng, 32, 1000);
  for (const auto& s : vae.decode_sequences(z)) {
    const auto g = molkit::decode(s);
    REQUIRE(valence_legal(g));
  }
}

TEST_CASE("batch loss gradients match finite differences through frozen noise") {
  auto vae = tiny_vae(5);
  const Mat x = one_hot(corpus_seqs(4, 9, 4, 4), 4);
  // Extra latent term 0.3 * sum |z|^2 / B exercises the dz path into the encoder.
  LatentTerm extra = [](const Mat& z, Mat& dz) {
    dz += (0.6 / z.cols()) * z;
    return 0.3 * z.squaredNorm() / z.cols();
  };
  const double beta = 0.7;
  auto loss = [&] {
    Rng r(123);
    const auto b = batch_loss(vae, x, r, nullptr, nullptr, beta, &extra);
    return b.recon + beta * b.kl + b.extra;
  };
  diffnet::Gradients ge = vae.encoder().zero_gradients(), gd = vae.decoder().zero_gradients();
  Rng r(123);
  batch_loss(vae, x, r, &ge, &gd, beta, &extra);
  double worst = 0.0;
  auto pe = vae.encoder().parameters();
  for (std::size_t i = 0; i < pe.size(); ++i)
    worst = std::max(worst, check_gradient(loss, pe[i].value.data(), pe[i].value.size(), ge[i].data()).max_rel_err);
  auto pd = vae.decoder().parameters();
  for (std::size_t i = 0; i < pd.size(); ++i)
    worst = std::max(worst, check_gradient(loss, pd[i].value.data(), pd[i].value.size(), gd[i].data()).max_rel_err);
  CHECK(worst < 1e-4);
}

TEST_CASE("one epoch smoke on ten molecules writes a loadable checkpoint") {
  auto seqs = corpus_seqs(10, 11);
  Rng rng(6);
  VaeModel vae(VaeConfig{}, rng);
  TrainOptions o;
  o.epochs = 1;
  o.seed = 3;
  const auto res = train_vae(vae, seqs, o);
  REQUIRE(res.curve.size() == 1);
  CHECK(std::isfinite(res.curve[0].total));
  CHECK(std::isfinite(res.curve[0].val_total));

  const auto path = std::filesystem::temp_directory_path() / "chemflow_vae_smoke.ckpt";
  res.model.save(path);
  const auto back = VaeModel::load(path);
  std::filesystem::remove(path);
  const Mat z = standard_normal(rng, 32, 3);
  CHECK(back.decode_probs(z) == res.model.decode_probs(z));
}

TEST_CASE("training is deterministic in the seed") {
  const auto seqs = corpus_seqs(60, 12, 8, 8);
  auto vae = tiny_vae(7, 8);
  TrainOptions o;
  o.epochs = 2;
  o.batch_size = 16;
  o.seed = 5;
  const auto a = train_vae(vae, seqs, o);
  const auto b = train_vae(vae, seqs, o);
  CHECK(same_params(a.model.encoder(), b.model.encoder()));
  CHECK(same_params(a.model.decoder(), b.model.decoder()));
  REQUIRE(a.curve.size() == 2);
  CHECK(a.curve[1].total == b.curve[1].total);
}

TEST_CASE("non-finite parameters surface as a training error with the epoch") {
  // A NaN weight in the initial model is caught by the pre-training validation pass.
  const auto seqs = corpus_seqs(20, 13, 8, 8);
  auto vae = tiny_vae(8, 8);
  vae.decoder().layers()[0].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainOptions o;
  o.epochs = 2;
  try {
    train_vae(vae, seqs, o);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.step == 0);
  }
}

TEST_CASE("finetune_pde") {
  const auto seqs = corpus_seqs(80, 14, 8, 8);
  auto vae = tiny_vae(9, 8);
  flows::FieldConfig fc;
  fc.embed_dim = 4;
  fc.hidden = {8};
  fc.horizon = 3;
  Rng frng(10);
  std::vector<flows::EnergyField> fields{flows::EnergyField(3, fc, frng)};

  SUBCASE("zero weights reproduce train_vae") {
    FinetuneOptions fo;
    fo.train.epochs = 2;
    fo.train.batch_size = 16;
    fo.train.seed = 21;
    fo.lambda_r = 0.0;
    fo.lambda_phi = 0.0;
    const auto ft = finetune_pde(vae, fields, seqs, fo);
    const auto plain = train_vae(vae, seqs, fo.train);
    CHECK(same_params(ft.vae.model.encoder(), plain.model.encoder()));
    CHECK(same_params(ft.vae.model.decoder(), plain.model.decoder()));
  }
  SUBCASE("two-epoch smoke logs finite per-term losses") {
    FinetuneOptions fo;
    fo.train.epochs = 2;
    fo.train.batch_size = 16;
    const auto ft = finetune_pde(vae, fields, seqs, fo);
    REQUIRE(ft.log.size() == 2);
    for (const auto& r : ft.log) {
      CHECK(std::isfinite(r.l_vae));
      CHECK(std::isfinite(r.l_r));
      CHECK(std::isfinite(r.l_phi));
      CHECK(r.l_r >= 0.0);
      CHECK(r.l_phi >= 0.0);
    }
  }
  SUBCASE("dimension mismatch") {
    Rng r(1);
    std::vector<flows::EnergyField> bad{flows::EnergyField(5, fc, r)};
    CHECK_THROWS_AS(finetune_pde(vae, bad, seqs, FinetuneOptions{}), ConfigError);
  }
}
