#include <cmath>
#include <fstream>

#include "chemflow/flows.hpp"
#include "chemflow/genvae.hpp"

namespace chemflow::genvae {

FinetuneResult finetune_pde(const VaeModel& model, std::vector<flows::EnergyField>& fields,
                            const std::vector<molkit::TokenSequence>& data, const FinetuneOptions& opts) {
  for (const auto& f : fields)
    if (f.dim() != model.latent_dim()) throw ConfigError("energy field dimension does not match the VAE latent");
  const bool active = opts.lambda_r != 0.0 || opts.lambda_phi != 0.0;
  std::vector<diffnet::Optimizer> field_opts(fields.size(), diffnet::Optimizer(opts.field_opt));
  Rng rng = make_rng(opts.train.seed, 901);
  const flows::StencilOptions stencil{};

  std::vector<double> batch_r, batch_phi;
  LatentTerm term = [&](const Mat& z, Mat& dz) {
    if (!active) {
      batch_r.push_back(0.0);
      batch_phi.push_back(0.0);
      return 0.0;
    }
    double lr_sum = 0.0, lphi_sum = 0.0;
    for (std::size_t k = 0; k < fields.size(); ++k) {
      auto& f = fields[k];
      std::uniform_int_distribution<int> pick_t(0, f.config().horizon - 1);
      Vec t(z.cols());
      for (auto& v : t) v = pick_t(rng);
      const auto rl = flows::residual_loss(f, t, z, stencil, rng, true);
      const auto bl = flows::boundary_loss_grad(f, z, stencil, true);
      lr_sum += rl.value;
      lphi_sum += bl.value;
      dz += opts.lambda_r * rl.dz + opts.lambda_phi * bl.dz;
      diffnet::Gradients g = rl.grad;
      for (auto& m : g) m *= opts.lambda_r;
      diffnet::add_into(g, bl.grad, opts.lambda_phi);
      auto params = f.parameters();
      field_opts[k].step(params, g);
    }
    batch_r.push_back(lr_sum);
    batch_phi.push_back(lphi_sum);
    return opts.lambda_r * lr_sum + opts.lambda_phi * lphi_sum;
  };

  FinetuneResult out;
  out.vae = train_vae(model, data, opts.train, term);

  // Regroup per-batch terms into epochs.
  const auto split = split_data(data, opts.train.val_fraction, opts.train.seed);
  const std::size_t per_epoch = (split.train.size() + opts.train.batch_size - 1) / opts.train.batch_size;
  for (const auto& e : out.vae.curve) {
    FinetuneLogRow row;
    row.epoch = e.epoch;
    row.l_vae = e.recon + model.config().beta_kl * e.kl;
    row.val_vae = e.val_total;
    const std::size_t begin = (e.epoch - 1) * per_epoch;
    for (std::size_t i = begin; i < begin + per_epoch && i < batch_r.size(); ++i) {
      row.l_r += batch_r[i] / per_epoch;
      row.l_phi += batch_phi[i] / per_epoch;
    }
    out.log.push_back(row);
  }
  return out;
}

}  // namespace chemflow::genvae
