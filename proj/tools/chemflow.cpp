// chemflow: corpus generation, training, traversal, benchmarks and analyses.
//
// Every subcommand writes into --out, alongside a resolved config snapshot
// (config.toml, reloadable with --config) and the tool version. Exit status:
// 0 success, 1 runtime error, 2 usage error.

#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "chemflow/evalbench.hpp"
#include "chemflow/traversal.hpp"
#include "chemflow/wgflab.hpp"

#ifndef CHEMFLOW_GIT
#define CHEMFLOW_GIT "unknown"
#endif

namespace fs = std::filesystem;
using namespace chemflow;
using nlohmann::json;

namespace {

struct Global {
  std::uint64_t seed = 0;
  std::string out;
  int workers = 1;  // accepted for config compatibility; the build is single-threaded
};

std::string cli_version() { return std::string("chemflow ") + CHEMFLOW_VERSION + " (" + CHEMFLOW_GIT + ")"; }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

// Shared model inputs ---------------------------------------------------------

struct CorpusArg {
  std::string dir;
  void add(CLI::App* s, bool required = true) {
    auto* o = s->add_option("--corpus", dir, "Directory with corpus.jsonl and stats.json (gen-corpus output)");
    if (required) o->required();
  }
  molkit::NormStats stats() const { return molkit::read_stats_json(fs::path(dir) / "stats.json"); }
  molkit::Corpus corpus(int length) const {
    return molkit::read_corpus(fs::path(dir) / "corpus.jsonl", fs::path(dir) / "stats.json", length);
  }
};

std::vector<molkit::TokenSequence> sequences(const molkit::Corpus& c, int limit = 0) {
  std::vector<molkit::TokenSequence> out;
  for (const auto& r : c.records) {
    if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    out.push_back(r.seq);
  }
  return out;
}

flows::Direction parse_dir(const std::string& s) {
  if (s == "max") return flows::Direction::Maximize;
  if (s == "min") return flows::Direction::Minimize;
  return flows::parse_direction(s);
}

// Direction-source options shared by traverse / optimize / manipulate.
struct SourceArgs {
  std::string vae;
  CorpusArg corpus;
  std::string method = "random";
  double alpha = 0.1;
  double beta = 1.0;
  int anneal = 0;
  std::vector<std::string> surrogates;
  std::vector<std::string> flows;
  std::vector<std::string> directions{"maximize"};
  int flow_index = -1;
  std::string property = "plogp";
  int chemspace_samples = 2000;

  void add(CLI::App* s) {
    s->add_option("--vae", vae, "VAE checkpoint")->required();
    corpus.add(s);
    s->add_option("--alpha", alpha, "Step size")->capture_default_str();
    s->add_option("--beta", beta, "Langevin noise strength")->capture_default_str();
    s->add_option("--anneal", anneal, "Cosine-anneal beta to 0 over this many steps (0: constant)")
        ->capture_default_str();
    s->add_option("--surrogate", surrogates, "Surrogate manifest(s), one per objective")->delimiter(',');
    s->add_option("--flows", flows, "Flow directories (train-flows output)")->delimiter(',');
    s->add_option("--direction", directions, "maximize|minimize per objective")->delimiter(',')->capture_default_str();
    s->add_option("--flow-index", flow_index, "Use one field of a flow set (-1: average all)")->capture_default_str();
    s->add_option("--property", property, "Target property")->capture_default_str();
    s->add_option("--chemspace-samples", chemspace_samples, "Prior samples for the ChemSpace boundary")
        ->capture_default_str();
  }

  flows::Direction direction(std::size_t i) const {
    if (directions.empty()) return flows::Direction::Maximize;
    return parse_dir(directions[std::min(i, directions.size() - 1)]);
  }
  molkit::PropertyKind kind() const { return molkit::parse_property(property); }
};

// Loaded models; deques keep references stable for the potentials.
struct Models {
  genvae::VaeModel vae;
  molkit::NormStats stats;
  std::deque<surrogate::SurrogateModel> surrogates;
  std::deque<flows::FlowSet> flow_sets;

  explicit Models(const SourceArgs& a) {
    vae = genvae::VaeModel::load(a.vae);
    stats = a.corpus.stats();
    for (const auto& s : a.surrogates) surrogates.push_back(surrogate::SurrogateModel::load(s));
    for (const auto& f : a.flows) flow_sets.push_back(flows::FlowSet::load(f));
  }
};

traversal::DirectionSource base_source(traversal::SourceKind kind, const SourceArgs& a) {
  traversal::DirectionSource s;
  s.kind = kind;
  s.alpha = a.alpha;
  s.beta = a.beta;
  s.anneal_steps = a.anneal;
  return s;
}

std::vector<const flows::EnergyField*> select_fields(const flows::FlowSet& fs, int index) {
  std::vector<const flows::EnergyField*> out;
  if (index >= static_cast<int>(fs.fields.size())) throw ConfigError("--flow-index out of range");
  for (std::size_t k = 0; k < fs.fields.size(); ++k)
    if (index < 0 || static_cast<int>(k) == index) out.push_back(&fs.fields[k]);
  return out;
}

// Source for one objective (surrogate / flow set number i).
traversal::DirectionSource make_source(const std::string& method, const SourceArgs& a, Models& m, std::size_t i,
                                       std::uint64_t seed) {
  const auto kind = traversal::parse_kind(method);
  auto s = base_source(kind, a);
  const int d = m.vae.latent_dim();
  Rng rng = make_rng(seed, 2000 + i);
  switch (kind) {
    case traversal::SourceKind::Random: s.direction = traversal::random_direction(d, rng); break;
    case traversal::SourceKind::Random1d: s.direction = traversal::random_1d_direction(d, rng); break;
    case traversal::SourceKind::ChemSpace: {
      const Mat z = standard_normal(rng, d, a.chemspace_samples);
      const auto seqs = m.vae.decode_sequences(z);
      Vec v(z.cols());
      for (Eigen::Index j = 0; j < z.cols(); ++j)
        v[j] = molkit::compute_property(a.kind(), molkit::decode(seqs[j]), &m.stats);
      auto labels = traversal::median_labels(v);
      if (a.direction(i) == flows::Direction::Minimize)
        for (auto& l : labels) l = 1 - l;
      s.direction = traversal::fit_chemspace_boundary(z, labels);
      break;
    }
    case traversal::SourceKind::GradientFlow:
    case traversal::SourceKind::Langevin:
      if (i >= m.surrogates.size()) throw ConfigError(method + " needs --surrogate");
      s.potentials = {traversal::surrogate_potential(m.surrogates[i], m.vae, a.direction(i))};
      break;
    case traversal::SourceKind::LearnedFlow:
      if (i >= m.flow_sets.size()) throw ConfigError("learned_flow needs --flows");
      s.fields = select_fields(m.flow_sets[i], a.flow_index);
      break;
  }
  return s;
}

Mat prior_latents(int d, int n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 2100);
  return standard_normal(rng, d, n);
}

Mat posterior_latents(const genvae::VaeModel& vae, const std::vector<molkit::TokenSequence>& seqs,
                      std::uint64_t seed) {
  Mat mu, logvar;
  vae.encode(genvae::one_hot(seqs, vae.config().length), mu, logvar);
  Rng rng = make_rng(seed, 2200);
  return genvae::sample_z(mu, logvar, rng);
}

// Resolved options of the top level and the active subcommand. The output
// directory is left out so snapshots of identical runs compare equal.
std::string config_snapshot(const CLI::App& app) {
  std::string active;
  for (const auto* sub : app.get_subcommands()) active = sub->get_name() + ".";
  std::istringstream in(app.config_to_str(true, false));
  std::string out, line;
  while (std::getline(in, line)) {
    const auto key = line.substr(0, line.find('='));
    if (key == "out") continue;
    if (key.find('.') != std::string::npos && key.rfind(active, 0) != 0) continue;
    out += line + "\n";
  }
  return out;
}

// Subcommands ------------------------------------------------------------------

struct Command {
  CLI::App* app;
  std::function<void()> run;
};

Command gen_corpus(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("gen-corpus", "Generate a fragment-grammar corpus with property labels");
  struct {
    int n = 10000, max_len = 20, length = molkit::kDefaultLength;
  } static o;
  s->add_option("--n", o.n, "Number of molecules")->capture_default_str();
  s->add_option("--max-len", o.max_len, "Maximum content length")->capture_default_str();
  s->add_option("--length", o.length, "Padded sequence length")->capture_default_str();
  return {s, [&g] {
            const auto c = molkit::gen_corpus(o.n, g.seed, o.max_len, o.length);
            molkit::write_corpus_jsonl(c, fs::path(g.out) / "corpus.jsonl");
            molkit::write_stats_json(c.stats, fs::path(g.out) / "stats.json");
            std::cout << "wrote " << c.records.size() << " molecules\n";
          }};
}

Command train_vae(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("train-vae", "Train the sequence VAE");
  static CorpusArg corpus;
  static genvae::VaeConfig cfg;
  static genvae::TrainOptions opts;
  static int limit = 0;
  corpus.add(s);
  s->add_option("--limit", limit, "Use the first N corpus molecules (0: all)")->capture_default_str();
  s->add_option("--latent", cfg.latent, "Latent dimension")->capture_default_str();
  s->add_option("--enc-hidden", cfg.enc_hidden, "Encoder widths")->delimiter(',')->capture_default_str();
  s->add_option("--dec-hidden", cfg.dec_hidden, "Decoder widths")->delimiter(',')->capture_default_str();
  s->add_option("--beta", cfg.beta_kl, "KL weight")->capture_default_str();
  s->add_option("--epochs", opts.epochs, "Epochs")->capture_default_str();
  s->add_option("--batch", opts.batch_size, "Batch size")->capture_default_str();
  s->add_option("--lr", opts.opt.lr, "Learning rate")->capture_default_str();
  s->add_option("--warmup", opts.kl_warmup_epochs, "KL warm-up epochs")->capture_default_str();
  s->add_option("--val-fraction", opts.val_fraction, "Held-out fraction")->capture_default_str();
  return {s, [&g] {
            const auto c = corpus.corpus(cfg.length);
            const auto data = sequences(c, limit);
            opts.seed = g.seed;
            Rng rng = make_rng(g.seed, 2300);
            const genvae::VaeModel init(cfg, rng);
            const auto res = genvae::train_vae(init, data, opts);
            res.model.save(fs::path(g.out) / "vae.ckpt");
            genvae::write_curve_csv(res.curve, fs::path(g.out) / "curve.csv");
            const auto split = genvae::split_data(data, opts.val_fraction, opts.seed);
            const auto acc = genvae::reconstruction_accuracy(res.model, split.val.empty() ? data : split.val);
            write_json(fs::path(g.out) / "metrics.json", {{"best_epoch", res.best_epoch},
                                                          {"best_val", res.best_val},
                                                          {"heldout_accuracy", acc.all_positions},
                                                          {"content_accuracy", acc.content}});
            std::cout << "held-out token accuracy " << acc.all_positions << '\n';
          }};
}

Command finetune(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("finetune-pde", "Jointly fine-tune the VAE with PDE-regularized energy fields");
  static CorpusArg corpus;
  static std::string vae_path;
  static genvae::FinetuneOptions opts;
  static flows::FieldConfig field;
  static std::string pde = "wave";
  static int k = 1, limit = 0;
  s->add_option("--vae", vae_path, "VAE checkpoint")->required();
  corpus.add(s);
  s->add_option("--limit", limit, "Use the first N corpus molecules (0: all)")->capture_default_str();
  s->add_option("--pde", pde, "wave|hj")->capture_default_str();
  s->add_option("--k", k, "Number of fields")->capture_default_str();
  s->add_option("--horizon", field.horizon, "Time horizon T")->capture_default_str();
  s->add_option("--wave-speed", field.wave_speed, "Wave speed c")->capture_default_str();
  s->add_option("--field-hidden", field.hidden, "Field widths")->delimiter(',')->capture_default_str();
  s->add_option("--embed-dim", field.embed_dim, "Time embedding width")->capture_default_str();
  s->add_option("--epochs", opts.train.epochs, "Epochs")->capture_default_str();
  s->add_option("--batch", opts.train.batch_size, "Batch size")->capture_default_str();
  s->add_option("--lr", opts.train.opt.lr, "VAE learning rate")->capture_default_str();
  s->add_option("--field-lr", opts.field_opt.lr, "Field learning rate")->capture_default_str();
  s->add_option("--lambda-r", opts.lambda_r, "Residual weight")->capture_default_str();
  s->add_option("--lambda-phi", opts.lambda_phi, "Boundary weight")->capture_default_str();
  return {s, [&g] {
            const auto vae = genvae::VaeModel::load(vae_path);
            const auto data = sequences(corpus.corpus(vae.config().length), limit);
            field.pde = flows::parse_pde(pde);
            opts.train.seed = g.seed;
            Rng rng = make_rng(g.seed, 2400);
            std::vector<flows::EnergyField> fields;
            for (int i = 0; i < k; ++i) fields.emplace_back(vae.latent_dim(), field, rng);
            const auto res = genvae::finetune_pde(vae, fields, data, opts);
            res.vae.model.save(fs::path(g.out) / "vae.ckpt");
            Checkpoint ck;
            ck.header["kind"] = "fields";
            ck.header["count"] = k;
            for (int i = 0; i < k; ++i) fields[i].to_checkpoint(ck, "flow" + std::to_string(i));
            save_checkpoint(ck, fs::path(g.out) / "fields.ckpt");
            std::ofstream log(fs::path(g.out) / "finetune.csv");
            log.precision(10);
            log << "epoch,l_vae,l_r,l_phi,val_vae\n";
            for (const auto& r : res.log)
              log << r.epoch << ',' << r.l_vae << ',' << r.l_r << ',' << r.l_phi << ',' << r.val_vae << '\n';
          }};
}

Command train_surrogate(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("train-surrogate", "Fit a property surrogate on decoded prior samples");
  static CorpusArg corpus;
  static std::string vae_path, property = "plogp";
  static surrogate::TrainOptions opts;
  s->add_option("--vae", vae_path, "VAE checkpoint")->required();
  corpus.add(s);
  s->add_option("--property", property, "Property to fit")->capture_default_str();
  s->add_option("--n-train", opts.n_train, "Training samples")->capture_default_str();
  s->add_option("--n-val", opts.n_val, "Validation samples")->capture_default_str();
  s->add_option("--epochs", opts.epochs, "Epochs")->capture_default_str();
  s->add_option("--batch", opts.batch_size, "Batch size")->capture_default_str();
  s->add_option("--lr", opts.opt.lr, "SGD learning rate")->capture_default_str();
  s->add_option("--width", opts.net.width, "Hidden width")->capture_default_str();
  s->add_option("--blocks", opts.net.blocks, "Residual blocks")->capture_default_str();
  return {s, [&g] {
            const auto vae = genvae::VaeModel::load(vae_path);
            const auto stats = corpus.stats();
            const auto kind = molkit::parse_property(property);
            opts.seed = g.seed;
            const auto res = surrogate::train_surrogate(vae, surrogate::make_oracle(kind, &stats), kind, opts);
            res.model.save(fs::path(g.out) / "surrogate.ckpt", fs::path(g.out) / "surrogate.json");
            std::ofstream curve(fs::path(g.out) / "curve.csv");
            curve.precision(10);
            curve << "epoch,train_mse,val_mse\n";
            for (const auto& e : res.curve) curve << e.epoch << ',' << e.train_mse << ',' << e.val_mse << '\n';
            write_json(fs::path(g.out) / "metrics.json", {{"val_mse", res.val_mse}, {"val_r2", res.val_r2}});
            std::cout << "validation r2 " << res.val_r2 << '\n';
          }};
}

Command train_flows(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("train-flows", "Train supervised or unsupervised energy-field flows");
  static CorpusArg corpus;
  static std::string vae_path, surrogate_path, mode = "supervised", pde = "wave", property = "plogp",
                                               direction = "maximize";
  static flows::FlowTrainConfig cfg;
  static int pool = 2000;
  s->add_option("--vae", vae_path, "VAE checkpoint")->required();
  corpus.add(s);
  s->add_option("--surrogate", surrogate_path, "Surrogate manifest (supervised)");
  s->add_option("--mode", mode, "supervised|unsupervised")->capture_default_str();
  s->add_option("--k", cfg.num_flows, "Number of flows (unsupervised)")->capture_default_str();
  s->add_option("--pde", pde, "wave|hj")->capture_default_str();
  s->add_option("--property", property, "Target property (supervised)")->capture_default_str();
  s->add_option("--direction", direction, "maximize|minimize")->capture_default_str();
  s->add_option("--horizon", cfg.field.horizon, "Time horizon T")->capture_default_str();
  s->add_option("--wave-speed", cfg.field.wave_speed, "Wave speed c")->capture_default_str();
  s->add_option("--field-hidden", cfg.field.hidden, "Field widths")->delimiter(',')->capture_default_str();
  s->add_option("--embed-dim", cfg.field.embed_dim, "Time embedding width")->capture_default_str();
  s->add_option("--classifier-hidden", cfg.classifier_hidden, "Classifier widths")->delimiter(',')
      ->capture_default_str();
  s->add_option("--iterations", cfg.iterations, "Iterations")->capture_default_str();
  s->add_option("--batch", cfg.batch_size, "Batch size")->capture_default_str();
  s->add_option("--lr", cfg.opt.lr, "Learning rate")->capture_default_str();
  s->add_option("--lambda-r", cfg.lambda_r, "Residual weight")->capture_default_str();
  s->add_option("--lambda-phi", cfg.lambda_phi, "Boundary weight")->capture_default_str();
  s->add_option("--lambda-guidance", cfg.lambda_guidance, "Guidance weight (L_P or L_J)")->capture_default_str();
  s->add_option("--lambda-k", cfg.lambda_k, "Disentanglement weight")->capture_default_str();
  s->add_option("--probes", cfg.stencil.probes, "Hutchinson probes for the wave Laplacian")->capture_default_str();
  s->add_option("--pool", pool, "Corpus molecules encoded as the z0 pool")->capture_default_str();
  return {s, [&g] {
            const auto vae = genvae::VaeModel::load(vae_path);
            const auto c = corpus.corpus(vae.config().length);
            cfg.mode = mode == "unsupervised" ? flows::GuidanceMode::Unsupervised
                       : mode == "supervised" ? flows::GuidanceMode::Supervised
                                              : throw ConfigError("unknown mode " + mode);
            if (cfg.mode == flows::GuidanceMode::Supervised) cfg.num_flows = 1;
            cfg.field.pde = flows::parse_pde(pde);
            cfg.property = molkit::parse_property(property);
            cfg.direction = parse_dir(direction);
            cfg.seed = g.seed;
            std::optional<surrogate::SurrogateModel> sur;
            if (!surrogate_path.empty()) sur = surrogate::SurrogateModel::load(surrogate_path);
            const Mat z_pool = posterior_latents(vae, sequences(c, pool), g.seed);
            const auto res = flows::train_flows(cfg, vae, z_pool, sur ? &*sur : nullptr);
            res.flows.save(g.out);
            flows::write_log_csv(res.log, cfg.mode, fs::path(g.out) / "log.csv");
            json m = {{"mean_velocity_norms", flows::mean_velocity_norms(res.flows, prior_latents(vae.latent_dim(), 200, g.seed))}};
            if (cfg.mode == flows::GuidanceMode::Unsupervised)
              m["classifier_accuracy"] = flows::classifier_accuracy(res.flows, vae, z_pool, 1000, g.seed + 1);
            write_json(fs::path(g.out) / "metrics.json", m);
          }};
}

Command traverse(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("traverse", "Traverse latents and log decoded trajectories as JSONL");
  static SourceArgs a;
  static int steps = 10, n = 100;
  static bool from_corpus = false;
  a.add(s);
  s->add_option("--method", a.method, "Direction source")->capture_default_str();
  s->add_option("--steps", steps, "Steps T")->capture_default_str();
  s->add_option("--n", n, "Number of starting molecules")->capture_default_str();
  s->add_flag("--from-corpus", from_corpus, "Start from encoded corpus molecules instead of prior samples");
  return {s, [&g] {
            Models m(a);
            std::vector<traversal::DirectionSource> srcs;
            const std::size_t objectives = std::max<std::size_t>({1, m.surrogates.size(), m.flow_sets.size()});
            for (std::size_t i = 0; i < objectives; ++i) srcs.push_back(make_source(a.method, a, m, i, g.seed));
            const auto src = evalbench::combine_sources(srcs);
            const Mat z0 = from_corpus ? posterior_latents(m.vae, sequences(a.corpus.corpus(m.vae.config().length), n), g.seed)
                                       : prior_latents(m.vae.latent_dim(), n, g.seed);
            const auto trajs = traversal::traverse(src, m.vae, m.stats, z0, steps, g.seed);
            traversal::write_jsonl(trajs, fs::path(g.out) / "trajectories.jsonl");
          }};
}

Command optimize(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("optimize", "Unconstrained, similarity-constrained or multi-objective benchmark");
  static SourceArgs a;
  static std::string benchmark = "unconstrained";
  static std::vector<std::string> methods{"random"};
  static int steps = 10, n = 10000, hist_bins = 20, hist_every = 0;
  static std::vector<double> deltas = evalbench::kDefaultDeltas;
  static bool log_trajectories = false;
  a.add(s);
  s->add_option("--benchmark", benchmark, "unconstrained|constrained|multi")->capture_default_str();
  s->add_option("--methods", methods, "Direction sources to compare")->delimiter(',')->capture_default_str();
  s->add_option("--steps", steps, "Steps")->capture_default_str();
  s->add_option("--n", n, "Samples (unconstrained, multi) or seed molecules (constrained)")->capture_default_str();
  s->add_option("--deltas", deltas, "Similarity thresholds")->delimiter(',')->capture_default_str();
  s->add_option("--hist-every", hist_every, "Property histograms every k steps (constrained; 0: off)")
      ->capture_default_str();
  s->add_option("--hist-bins", hist_bins, "Histogram bins")->capture_default_str();
  s->add_flag("--log-trajectories", log_trajectories, "Write trajectories.jsonl (constrained)");
  return {s, [&g] {
            Models m(a);
            const auto kind = a.kind();
            if (benchmark == "multi") {
              std::vector<evalbench::Objective> objs;
              std::vector<traversal::DirectionSource> srcs;
              for (std::size_t i = 0; i < m.surrogates.size(); ++i) {
                objs.push_back({m.surrogates[i].kind, a.direction(i)});
                srcs.push_back(make_source(methods.front(), a, m, i, g.seed));
              }
              if (objs.size() < 2) throw ConfigError("multi needs one --surrogate per objective (at least two)");
              const Mat z0 = prior_latents(m.vae.latent_dim(), n, g.seed);
              const auto rep = evalbench::multiobjective_benchmark(objs, srcs, m.vae, m.stats, z0, steps, g.seed, deltas);
              evalbench::write_multiobjective_csv(rep, fs::path(g.out) / "multiobjective.csv");
              return;
            }
            if (benchmark == "unconstrained") {
              const Mat z0 = prior_latents(m.vae.latent_dim(), n, g.seed);
              std::vector<std::pair<std::string, evalbench::UnconstrainedReport>> rows;
              for (const auto& name : methods) {
                evalbench::MethodSpec spec{name, kind, a.direction(0), make_source(name, a, m, 0, g.seed)};
                rows.emplace_back(name, evalbench::unconstrained_benchmark(spec, m.vae, m.stats, z0, steps, g.seed));
              }
              evalbench::write_unconstrained_csv(rows, fs::path(g.out) / "unconstrained.csv");
              return;
            }
            if (benchmark != "constrained") throw ConfigError("unknown benchmark " + benchmark);
            const auto c = a.corpus.corpus(m.vae.config().length);
            const auto seeds = evalbench::lowest_property_seeds(c, kind, a.direction(0), n);
            const Mat z0 = m.vae.encode_mean(seeds);
            std::vector<std::pair<std::string, evalbench::ConstrainedReport>> rows;
            for (const auto& name : methods) {
              evalbench::MethodSpec spec{name, kind, a.direction(0), make_source(name, a, m, 0, g.seed)};
              std::vector<traversal::Trajectory> trajs;
              rows.emplace_back(name, evalbench::constrained_benchmark(spec, m.vae, m.stats, z0, steps, g.seed,
                                                                       deltas, &trajs));
              if (hist_every > 0) {
                std::vector<int> at;
                for (int t = 0; t <= steps; t += hist_every) at.push_back(t);
                evalbench::write_shift_histograms(trajs, kind, at, hist_bins, fs::path(g.out) / ("shift_" + name + ".csv"));
              }
              if (log_trajectories) traversal::write_jsonl(trajs, fs::path(g.out) / ("trajectories_" + name + ".jsonl"));
            }
            evalbench::write_constrained_csv(rows, fs::path(g.out) / "constrained.csv");
          }};
}

Command manipulate(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("manipulate", "Strict / relaxed manipulation success rates");
  static SourceArgs a;
  static std::vector<std::string> methods{"random", "random_1d", "chemspace"};
  static int steps = 10, n = 1000;
  a.add(s);
  s->add_option("--methods", methods, "Direction sources; learned_flow expands to one method per --flows dir")
      ->delimiter(',')
      ->capture_default_str();
  s->add_option("--steps", steps, "Steps")->capture_default_str();
  s->add_option("--n", n, "Starting molecules")->capture_default_str();
  return {s, [&g] {
            Models m(a);
            const auto c = a.corpus.corpus(m.vae.config().length);
            std::vector<evalbench::MethodSpec> specs;
            for (const auto& name : methods) {
              if (name == "learned_flow") {
                for (std::size_t i = 0; i < m.flow_sets.size(); ++i)
                  specs.push_back({fs::path(a.flows[i]).filename().string(), a.kind(), a.direction(0),
                                   make_source(name, a, m, i, g.seed)});
              } else {
                specs.push_back({name, a.kind(), a.direction(0), make_source(name, a, m, 0, g.seed)});
              }
            }
            const Mat z0 = prior_latents(m.vae.latent_dim(), n, g.seed);
            const auto rep = evalbench::manipulation_benchmark(specs, m.vae, c, z0, steps, g.seed);
            evalbench::write_manipulation_csv(rep, fs::path(g.out) / "manipulation.csv");
          }};
}

Command wgf_sim(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("wgf-sim", "Particle simulation of heat / Fokker-Planck / porous-medium flows");
  static std::string field = "heat", density = "analytic";
  static int n = 10000, d = 2, cells = 120;
  static double sigma0 = 1.0, t_end = 0.5, h = 1e-3, m_exp = 2.0, bandwidth = 0.0;
  s->add_option("--field", field, "heat|fp|porous")->capture_default_str();
  s->add_option("--density", density, "analytic|kde")->capture_default_str();
  s->add_option("--n", n, "Particles")->capture_default_str();
  s->add_option("--d", d, "Dimension")->capture_default_str();
  s->add_option("--sigma0", sigma0, "Initial scale")->capture_default_str();
  s->add_option("--t-end", t_end, "End time")->capture_default_str();
  s->add_option("--dt", h, "Euler step")->capture_default_str();
  s->add_option("--m", m_exp, "Porous exponent")->capture_default_str();
  s->add_option("--bandwidth", bandwidth, "KDE bandwidth (0: Silverman)")->capture_default_str();
  s->add_option("--cells", cells, "Grid cells for the 1-D oracle comparison")->capture_default_str();
  return {s, [&g] {
            const auto kind = wgflab::parse_field(field);
            wgflab::VelocityField f;
            f.kind = kind;
            f.m = m_exp;
            if (kind == wgflab::FieldKind::FokkerPlanck) f.grad_a = wgflab::quadratic_drift();
            if (density == "kde") {
              f.density = wgflab::kde_density(bandwidth);
            } else if (density == "analytic") {
              if (kind == wgflab::FieldKind::Heat) f.density = wgflab::heat_gaussian(sigma0);
              else if (kind == wgflab::FieldKind::FokkerPlanck) f.density = wgflab::fp_quadratic_gaussian(sigma0);
              else if (d == 1) f.density = wgflab::parabolic_profile();
              else throw ConfigError("analytic porous density is the 1-D parabolic profile; use --d 1 or --density kde");
            } else {
              throw ConfigError("unknown density model " + density);
            }
            Rng rng = make_rng(g.seed, 2500);
            const Mat z0 = sigma0 * standard_normal(rng, d, n);
            const auto res = wgflab::simulate(f, z0, 0.0, t_end, h);
            wgflab::write_moments_csv(res.moments, fs::path(g.out) / "moments.csv");
            json m = {{"final_var", std::vector<double>(res.moments.back().var.data(),
                                                        res.moments.back().var.data() + d)}};
            if (d == 1 && kind != wgflab::FieldKind::Porous) {
              const double s2 = sigma0 * sigma0;
              const double half = 8.0 * std::max(1.0, sigma0);
              auto g0 = wgflab::make_grid(-half, half, cells, [](double) { return 0.0; });
              // Exact cell averages of N(0, s0^2).
              for (std::size_t i = 0; i < g0.rho.size(); ++i) {
                const double a = g0.lo + i * g0.dz, b = a + g0.dz, s = std::sqrt(2.0 * s2);
                g0.rho[i] = 0.5 * (std::erf(b / s) - std::erf(a / s)) / g0.dz;
              }
              wgflab::GridOptions go;
              if (kind == wgflab::FieldKind::FokkerPlanck) go.drift_a = [](double z) { return -z; };
              const auto grid = wgflab::grid_oracle_1d(kind, g0, t_end, go);
              const auto hist = wgflab::histogram(res.particles, grid);
              wgflab::write_grid_csv(grid, {grid.rho, hist}, {"oracle", "particles"}, fs::path(g.out) / "grid.csv");
              m["l1_vs_oracle"] = wgflab::l1_distance(hist, grid.rho, grid.dz);
            }
            write_json(fs::path(g.out) / "metrics.json", m);
          }};
}

Command analyze_latent(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("analyze-latent", "Latent norm histogram, norm-property correlations, traversals");
  static CorpusArg corpus;
  static std::string vae_path;
  static int n = 2000, traj = 20, steps = 20;
  static double alpha = 0.5;
  s->add_option("--vae", vae_path, "VAE checkpoint")->required();
  corpus.add(s);
  s->add_option("--n", n, "Corpus molecules to encode")->capture_default_str();
  s->add_option("--traj", traj, "Random-direction traversals")->capture_default_str();
  s->add_option("--steps", steps, "Traversal steps")->capture_default_str();
  s->add_option("--alpha", alpha, "Traversal step size")->capture_default_str();
  return {s, [&g] {
            const auto vae = genvae::VaeModel::load(vae_path);
            const auto c = corpus.corpus(vae.config().length);
            const auto seqs = sequences(c, n);
            std::vector<molkit::PropertyValues> props;
            for (std::size_t i = 0; i < seqs.size(); ++i) props.push_back(c.records[i].props);
            const Mat z = posterior_latents(vae, seqs, g.seed);
            auto an = evalbench::latent_analysis(z, props);
            evalbench::add_random_traversals(an, vae, c.stats, traj, steps, alpha, g.seed);
            evalbench::write_latent_analysis(an, g.out);
            const int d = vae.latent_dim();
            const Vec prior = prior_latents(d, static_cast<int>(z.cols()), g.seed).colwise().norm().transpose();
            write_json(fs::path(g.out) / "metrics.json",
                       {{"posterior_within_15pct", evalbench::norm_band_fraction(an.norms, d, 0.85, 1.15)},
                        {"posterior_within_20pct", evalbench::norm_band_fraction(an.norms, d, 0.8, 1.2)},
                        {"prior_within_15pct", evalbench::norm_band_fraction(prior, d, 0.85, 1.15)},
                        {"prior_within_20pct", evalbench::norm_band_fraction(prior, d, 0.8, 1.2)}});
          }};
}

Command pearson_select(CLI::App& root, Global& g) {
  auto* s = root.add_subcommand("pearson-select", "Pick the unsupervised flow best correlated with a property");
  static CorpusArg corpus;
  static std::string vae_path, flows_dir, property = "plogp", direction = "auto";
  static int n = 200, steps = 10;
  static double alpha = 1.0;
  s->add_option("--vae", vae_path, "VAE checkpoint")->required();
  corpus.add(s);
  s->add_option("--flows", flows_dir, "Unsupervised flow directory")->required();
  s->add_option("--property", property, "Property")->capture_default_str();
  s->add_option("--direction", direction, "maximize|minimize|auto (minimize for sa_lite)")->capture_default_str();
  s->add_option("--n", n, "Test molecules (taken from the end of the corpus)")->capture_default_str();
  s->add_option("--steps", steps, "Trajectory length T")->capture_default_str();
  s->add_option("--alpha", alpha, "Step size")->capture_default_str();
  return {s, [&g] {
            const auto vae = genvae::VaeModel::load(vae_path);
            const auto c = corpus.corpus(vae.config().length);
            const auto fl = flows::FlowSet::load(flows_dir);
            const auto kind = molkit::parse_property(property);
            const auto dir = direction == "auto"
                                 ? (kind == molkit::PropertyKind::SaLite ? flows::Direction::Minimize
                                                                         : flows::Direction::Maximize)
                                 : parse_dir(direction);
            std::vector<molkit::TokenSequence> test;
            for (std::size_t i = c.records.size() - std::min<std::size_t>(n, c.records.size()); i < c.records.size(); ++i)
              test.push_back(c.records[i].seq);
            std::vector<evalbench::StepFn> steps_fns;
            for (const auto& f : fl.fields) steps_fns.push_back(evalbench::flow_step(f, alpha));
            const auto res = evalbench::pearson_select(steps_fns, vae.encode_mean(test),
                                                       evalbench::decoded_property(vae, kind, c.stats), dir, steps);
            evalbench::write_pearson_csv(res, fs::path(g.out) / "pearson.csv");
            write_json(fs::path(g.out) / "metrics.json", {{"selected", res.index}});
            std::cout << "selected flow " << res.index << '\n';
          }};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space flows for molecule optimization"};
  app.set_version_flag("--version", cli_version());
  app.set_config("--config", "", "TOML config; [subcommand] sections, flags override file values");
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->required();
  app.add_option("--workers", g.workers, "Worker cap (single-threaded build; accepted for config compatibility)")
      ->capture_default_str();

  const std::vector<Command> commands{gen_corpus(app, g),     train_vae(app, g),      finetune(app, g),
                                      train_surrogate(app, g), train_flows(app, g),   traverse(app, g),
                                      optimize(app, g),        manipulate(app, g),     wgf_sim(app, g),
                                      analyze_latent(app, g),  pearson_select(app, g)};

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    fs::create_directories(g.out);
    write_text(fs::path(g.out) / "config.toml", config_snapshot(app));
    write_text(fs::path(g.out) / "VERSION", cli_version() + "\n");
    for (const auto& c : commands)
      if (c.app->parsed()) c.run();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
