#include "lowdens/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <sstream>

#include "lowdens/config.hpp"
#include "lowdens/error.hpp"
#include "lowdens/pipeline.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::string out_dir;  // overrides [output] dir

  ExperimentConfig load() const {
    auto cfg = config.empty() ? ExperimentConfig::defaults() : load_config(config);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config file (defaults when omitted)");
  cmd->add_option("--dir", c.out_dir, "artifact directory, overrides the config");
}

std::vector<double> parse_axis(const std::string& s, const char* name) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto t = trim(item);
    if (t.empty()) continue;
    try {
      out.push_back(parse_double(t, 0));
    } catch (const ParseError&) {
      throw UsageError(std::string("--") + name + ": '" + std::string(t) + "' is not a number");
    }
  }
  if (out.empty()) throw UsageError(std::string("--") + name + " must list at least one value");
  return out;
}

std::string stem_of(const fs::path& p) { return p.stem().string(); }

void check_dim(const Artifacts& art, const Mat& points, const std::string& what) {
  if (points.cols() != art.diffusion.dim()) {
    throw InputError(what + " has dimension " + std::to_string(points.cols()) + " but the checkpoints expect " +
                     std::to_string(art.diffusion.dim()));
  }
}

void check_labels(const Artifacts& art, const std::vector<int>& labels, const std::string& what) {
  for (int y : labels) {
    if (y < 0 || y >= art.diffusion.num_classes) throw InputError(what + " has a label outside the trained classes");
  }
}

// ---- gen / train ----

int cmd_init(const std::string& path) {
  save_config(ExperimentConfig::defaults(), path);
  std::cout << "wrote " << path << '\n';
  return kExitOk;
}

int cmd_gen(const Common& c) {
  const auto cfg = c.load();
  const ArtifactPaths paths(cfg.out_dir);
  const auto w = generate_world(cfg);
  save_dataset(w.train, paths.train());
  save_dataset(w.holdout, paths.holdout());
  save_config(cfg, paths.dir / "config.ini");
  std::cout << "train\t" << w.train.size() << "\t" << paths.train().string() << '\n'
            << "holdout\t" << w.holdout.size() << "\t" << paths.holdout().string() << '\n';
  return kExitOk;
}

int cmd_train(const Common& c) {
  const auto cfg = c.load();
  const ArtifactPaths paths(cfg.out_dir);
  if (!fs::exists(paths.train())) {
    throw InputError("missing training set: expected " + paths.train().string() + " (run gen first)");
  }
  const auto train = load_dataset(paths.train());
  TrainingReport report;
  const auto art = train_all(cfg, train, &report);
  save_artifacts(art, paths);
  save_training_report(report, paths);
  std::cout << "diffusion_final_loss\t" << format_double(report.diffusion_trace.back()) << '\n'
            << "embedder_final_loss\t" << format_double(report.embedder_trace.back()) << '\n'
            << "discriminator_heldout_accuracy\t" << format_double(report.discriminator_accuracy) << '\n';
  return kExitOk;
}

// ---- sample ----

struct SampleFlags {
  std::string sampler = "baseline";
  double alpha = 0.0, beta = 0.0, y_max = 1.0, threshold = 0.0, percentile = 0.0;
  int substeps = 0, n = 0, cls = -1;
  std::uint64_t seed = 0;
  std::string out;
  std::string snapshots;
  CLI::Option *o_alpha{}, *o_beta{}, *o_ymax{}, *o_sub{}, *o_thr{}, *o_pct{}, *o_n{}, *o_seed{}, *o_snap{};
};

int cmd_sample(const Common& c, const SampleFlags& f) {
  SamplerKind kind;
  try {
    kind = sampler_kind_from_string(f.sampler);
  } catch (const Error&) {
    throw UsageError("unknown sampler '" + f.sampler + "'");
  }
  if (kind == SamplerKind::GuidedQuota) throw UsageError("unknown sampler '" + f.sampler + "'");
  auto allow = [&](CLI::Option* o, const char* flag, std::initializer_list<SamplerKind> ok) {
    if (o->count() == 0) return;
    if (std::find(ok.begin(), ok.end(), kind) == ok.end()) {
      throw UsageError(std::string(flag) + " does not apply to sampler '" + f.sampler + "'");
    }
  };
  using K = SamplerKind;
  allow(f.o_alpha, "--alpha", {K::Alpha, K::Guided, K::Ddim});
  allow(f.o_beta, "--beta", {K::Guided, K::Ddim});
  allow(f.o_ymax, "--y-max", {K::Smooth});
  allow(f.o_sub, "--substeps", {K::Ddim});
  allow(f.o_thr, "--threshold", {K::Reject, K::Guided});
  allow(f.o_pct, "--percentile", {K::Reject, K::Guided});
  if (f.o_thr->count() && f.o_pct->count()) throw UsageError("give --threshold or --percentile, not both");
  const bool quota_mode = f.o_thr->count() || f.o_pct->count();
  if (kind == K::Reject && !quota_mode) throw UsageError("sampler 'reject' needs --threshold or --percentile");

  const auto cfg = c.load();
  const ArtifactPaths paths(cfg.out_dir);
  const auto art = load_artifacts(paths);

  GuidanceConfig g = cfg.guidance;
  if (kind == K::Alpha) g.beta_fid = 0.0;
  if (f.o_alpha->count()) g.alpha = f.alpha;
  if (f.o_beta->count()) g.beta_fid = f.beta;
  try {
    g.validate();
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  const int n = f.o_n->count() ? f.n : cfg.sampling.n_per_class;
  if (n < 1) throw UsageError("--n must be >= 1");
  const std::uint64_t seed = f.o_seed->count() ? f.seed : (quota_mode ? cfg.cost.seed : cfg.sampling.seed);
  const int substeps = f.o_sub->count() ? f.substeps : cfg.sampling.ddim_substeps;
  if (kind == K::Ddim && (substeps < 2 || substeps > cfg.schedule.steps)) {
    throw UsageError("--substeps must lie in [2, " + std::to_string(cfg.schedule.steps) + "]");
  }
  const double y_max = f.o_ymax->count() ? f.y_max : cfg.sampling.y_max;
  if (kind == K::Smooth && !(y_max >= 1.0 / art.diffusion.num_classes - 1e-12 && y_max <= 1.0)) {
    throw UsageError("--y-max must lie in [1/C, 1]");
  }
  const int C = art.diffusion.num_classes;
  if (f.cls >= C) throw UsageError("--class out of range");
  std::vector<int> classes;
  for (int y = 0; y < C; ++y)
    if (f.cls < 0 || f.cls == y) classes.push_back(y);

  SamplerOptions opts;
  opts.stride = cfg.schedule.stride;
  if (f.o_snap->count()) {
    for (double t : parse_axis(f.snapshots, "snapshots")) opts.snapshot_timesteps.push_back(static_cast<int>(t));
  }
  const fs::path out = f.out.empty() ? paths.dir / ("samples_" + f.sampler + ".txt") : fs::path(f.out);

  std::vector<SamplerRun> runs;
  std::optional<CostLedger> ledger;
  std::vector<double> thresholds;
  if (quota_mode) {
    if (f.o_pct->count()) {
      if (!(f.percentile >= 0.0 && f.percentile <= 100.0)) throw UsageError("--percentile must lie in [0, 100]");
      thresholds = holdout_thresholds(art, load_world(paths).holdout, f.percentile);
    } else {
      thresholds.assign(static_cast<std::size_t>(C), f.threshold);
    }
  }
  for (int y : classes) {
    switch (kind) {
      case K::Baseline: runs.push_back(baseline_sample(art.diffusion, y, n, seed, opts)); break;
      case K::Alpha: runs.push_back(sample_alpha(art.diffusion, art.view(), y, g, n, seed, opts)); break;
      case K::Ddim:
        runs.push_back(sample_ddim_guided(art.diffusion, art.view(), y, substeps, g, n, seed, opts));
        break;
      case K::Smooth: runs.push_back(sample_smoothed_embedding(art.diffusion, y, y_max, n, seed, opts)); break;
      case K::Guided:
        if (!quota_mode) {
          runs.push_back(sample_guided(art.diffusion, art.view(), y, g, n, seed, opts));
          break;
        }
        [[fallthrough]];
      case K::Reject: {
        const double thr = thresholds[static_cast<std::size_t>(y)];
        auto q = kind == K::Reject
                     ? rejection_baseline(art.diffusion, art.view(), y, thr, n, cfg.cost.max_draws, seed, opts)
                     : guided_until_quota(art.diffusion, art.view(), y, g, thr, n, cfg.cost.max_draws, seed, opts);
        ledger = ledger ? merge(*ledger, q.ledger) : q.ledger;
        runs.push_back(std::move(q.run));
        break;
      }
      default: throw UsageError("unsupported sampler");
    }
  }
  auto run = concat_runs(runs);
  if (quota_mode) {
    if (f.o_pct->count()) {
      ledger->threshold = f.percentile;
    } else {
      ledger->threshold = f.threshold;
    }
    run.meta.threshold = ledger->threshold;
  }
  save_run(run, C, out);
  std::cout << "samples\t" << run.size() << '\t' << out.string() << '\n'
            << "denoiser_evaluations\t" << run.total_evaluations() << '\n';
  if (ledger) {
    const fs::path lpath = out.string() + ".ledger.txt";
    write_text_file(lpath, format_ledger(*ledger));
    std::cout << "ledger\t" << lpath.string() << '\n' << format_ledger(*ledger);
  }
  return kExitOk;
}

// ---- grid ----

struct GridFlags {
  std::string alphas, betas, out;
  int n = 0;
  std::uint64_t seed = 0;
  bool series = false;
  CLI::Option *o_n{}, *o_seed{};
};

int cmd_grid(const Common& c, const GridFlags& f) {
  const auto alphas = parse_axis(f.alphas, "alphas");
  const auto betas = parse_axis(f.betas, "betas");
  for (double v : alphas)
    if (!(v >= 0.0)) throw UsageError("--alphas must be non-negative");
  for (double v : betas)
    if (!(v >= 0.0)) throw UsageError("--betas must be non-negative");
  const auto cfg = c.load();
  const ArtifactPaths paths(cfg.out_dir);
  const auto art = load_artifacts(paths);
  const auto world = load_world(paths);
  const int n = f.o_n->count() ? f.n : cfg.sampling.n_per_class;
  const std::uint64_t seed = f.o_seed->count() ? f.seed : cfg.sampling.seed;
  if (n < 1) throw UsageError("--n must be >= 1");
  SamplerOptions opts;
  opts.stride = cfg.schedule.stride;

  std::ostringstream table;
  table << "# alpha\tbeta_fid\tn\tmedian_hardness\tmean_hardness\tprecision\n";
  std::vector<double> xs, med, prec;
  for (double a : alphas) {
    for (double b : betas) {
      std::vector<SamplerRun> runs;
      for (int y = 0; y < art.diffusion.num_classes; ++y) {
        auto g = cfg.guidance;
        auto cells = sample_grid(art.diffusion, art.view(), y, {a}, {b}, g, n, seed, opts);
        runs.push_back(std::move(cells.front().run));
      }
      const auto run = concat_runs(runs);
      const auto h = sample_hardness(art.view(), run.samples, run.labels);
      const double m = quantile(h, 0.5);
      const double p = class_precision(run.samples, run.labels, world.train.points, world.train.labels,
                                       cfg.metrics.precision_k);
      table << format_double(a) << '\t' << format_double(b) << '\t' << run.size() << '\t' << format_double(m) << '\t'
            << format_double(summarize(h).mean) << '\t' << format_double(p) << '\n';
      xs.push_back(betas.size() == 1 ? a : b);
      med.push_back(m);
      prec.push_back(p);
    }
  }
  const fs::path out = f.out.empty() ? paths.dir / "grid.txt" : fs::path(f.out);
  write_text_file(out, table.str());
  std::cout << table.str();
  if (f.series) {
    const std::string x = betas.size() == 1 ? "alpha" : "beta_fid";
    write_series(out.string() + ".hardness.series", x, "median_hardness", xs, med);
    write_series(out.string() + ".precision.series", x, "precision", xs, prec);
  }
  return kExitOk;
}

// ---- eval ----

struct EvalFlags {
  std::vector<std::string> runs;
  std::string out;
  bool series = false;
  bool no_nll = false;
};

std::vector<double> ecdf_y(std::size_t n) {
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  return y;
}

int cmd_eval(const Common& c, const EvalFlags& f) {
  const auto cfg = c.load();
  const ArtifactPaths paths(cfg.out_dir);
  const auto art = load_artifacts(paths);
  const auto world = load_world(paths);
  const fs::path out = f.out.empty() ? paths.dir / "eval" : fs::path(f.out);
  DensityParams dp{cfg.metrics.knn_k, cfg.metrics.lof_k, cfg.metrics.space};
  const DensityContext ctx(art.embedder, art.class_grid.clean(), world.train, world.holdout, dp);
  const auto model2 = fit_class_model(art.embedder2, world.train, std::nullopt, nullptr, 0, cfg.class_model.shrinkage);
  const DensityContext ctx2(art.embedder2, model2, world.train, world.holdout, dp);

  for (const auto& file : f.runs) {
    if (!fs::exists(file)) throw InputError("run file not found: " + file);
    const auto run = load_run(file);
    check_dim(art, run.samples, file);
    check_labels(art, run.labels, file);
    const std::string name = stem_of(file);
    const auto rep = ctx.report(run.samples, run.labels);
    const auto rep2 = ctx2.report(run.samples, run.labels);
    const double prec = class_precision(run.samples, run.labels, world.train.points, world.train.labels,
                                        cfg.metrics.precision_k);
    std::ostringstream summary;
    summary << format_density_summary(rep, name) << format_density_summary(rep2, name + "@embedder2")
            << "precision\t" << name << '\t' << format_double(prec) << '\n';
    write_text_file(out / (name + ".density.txt"), format_density_report(rep, run.labels));
    write_text_file(out / (name + ".summary.txt"), summary.str());
    std::cout << summary.str();

    const auto rows = std::min<Eigen::Index>(run.size(), cfg.metrics.correlation_rows);
    if (rows >= 30) {
      std::vector<std::string> names;
      std::vector<std::vector<double>> cols;
      auto head = [&](const std::vector<double>& v) { return std::vector<double>(v.begin(), v.begin() + rows); };
      if (!f.no_nll) {
        std::vector<double> nll;
        for (Eigen::Index i = 0; i < rows; ++i) {
          nll.push_back(vlb_nll(art.diffusion, run.samples.row(i).transpose(), run.labels[static_cast<std::size_t>(i)],
                                cfg.metrics.nll_samples, cfg.metrics.nll_seed + static_cast<std::uint64_t>(i))
                            .mean);
        }
        names.push_back("vlb_nll");
        cols.push_back(std::move(nll));
      }
      names.insert(names.end(), {"hardness", "avg_knn", "lof", "neg_log_true_density"});
      cols.push_back(head(rep.hardness));
      cols.push_back(head(rep.avg_knn));
      cols.push_back(head(rep.lof));
      cols.push_back(head(neg_log_true_density(cfg.world.classes, run.samples, run.labels)));
      const auto corr = format_correlation_report(correlation_report(names, cols));
      write_text_file(out / (name + ".correlation.txt"), corr);
      std::cout << corr;
    }
    if (f.series) {
      auto cdf = [&](const std::vector<double>& v, const std::string& metric) {
        auto s = v;
        std::sort(s.begin(), s.end());
        write_series(out / (name + "." + metric + ".cdf.series"), metric, "cdf", s, ecdf_y(s.size()));
      };
      cdf(rep.hardness, "hardness");
      cdf(rep.avg_knn, "avg_knn");
      cdf(rep.lof, "lof");
    }
  }
  return kExitOk;
}

// ---- memcheck ----

struct MemFlags {
  std::string run, out, space;
  int top_p = -1;
};

int cmd_memcheck(const Common& c, const MemFlags& f) {
  MetricSpace space;
  const auto cfg = c.load();
  if (f.space.empty()) {
    space = cfg.metrics.space;
  } else if (f.space == "embedding") {
    space = MetricSpace::Embedding;
  } else if (f.space == "ambient") {
    space = MetricSpace::Ambient;
  } else {
    throw UsageError("--space must be 'embedding' or 'ambient'");
  }
  const ArtifactPaths paths(cfg.out_dir);
  const auto world = load_world(paths);
  if (!fs::exists(f.run)) throw InputError("run file not found: " + f.run);
  const auto run = load_run(f.run);
  std::optional<MicroNet> embedder;
  if (space == MetricSpace::Embedding) {
    const auto art = load_artifacts(paths);
    check_dim(art, run.samples, f.run);
    embedder = art.embedder;
  } else if (run.samples.cols() != world.train.dim()) {
    throw InputError(f.run + " does not match the training data dimension");
  }
  const int top_p = f.top_p >= 0 ? f.top_p : cfg.metrics.top_p;
  const auto rep = memorization_report(run.samples, run.labels, world.train, world.holdout,
                                       embedder ? &*embedder : nullptr, top_p, cfg.metrics.neighbor_k, space);
  const auto text = format_memorization_report(rep);
  const fs::path out = f.out.empty() ? paths.dir / (stem_of(f.run) + ".memcheck.txt") : fs::path(f.out);
  write_text_file(out, text);
  std::cout << "ratio\t" << format_double(rep.ratio) << '\n' << "report\t" << out.string() << '\n';
  if (rep.alarm) {
    std::cout << "ALARM\tmemorization\n";
    std::cerr << "alarm: memorization: mean nearest-train distance ratio " << format_double(rep.ratio) << '\n';
    return kExitAlarm;
  }
  return kExitOk;
}

// ---- cost ----

struct CostFlags {
  std::string guided, reject, out;
  bool series = false;
};

CostLedger read_ledger(const std::string& p) {
  fs::path path = p;
  if (path.string().size() < 11 || path.string().substr(path.string().size() - 11) != ".ledger.txt") {
    path = p + ".ledger.txt";
  }
  if (!fs::exists(path)) throw InputError("cost ledger not found: " + path.string());
  return parse_ledger(read_text_file(path));
}

int cmd_cost(const Common& c, const CostFlags& f) {
  const auto cfg = c.load();
  const ArtifactPaths paths(cfg.out_dir);
  std::vector<CostLedger> guided, rejection;
  if (!f.guided.empty() || !f.reject.empty()) {
    if (f.guided.empty() || f.reject.empty()) throw UsageError("--guided and --reject go together");
    guided.push_back(read_ledger(f.guided));
    rejection.push_back(read_ledger(f.reject));
    if (guided.back().quota != rejection.back().quota) throw InputError("guided and rejection quotas differ");
  } else {
    const auto art = load_artifacts(paths);
    const auto world = load_world(paths);
    for (double p : cfg.cost.percentiles) {
      const auto cmp = compare_cost(cfg, art, world.holdout, p, cfg.guidance);
      guided.push_back(cmp.guided);
      rejection.push_back(cmp.rejection);
    }
  }
  const auto rows = cost_report(guided, rejection);
  const auto text = format_cost_report(rows);
  const fs::path out = f.out.empty() ? paths.dir / "cost.txt" : fs::path(f.out);
  write_text_file(out, text);
  std::cout << text;
  if (f.series) {
    std::vector<double> x, y;
    for (const auto& r : rows) {
      x.push_back(r.threshold);
      y.push_back(r.speedup);
    }
    write_series(out.string() + ".speedup.series", "threshold", "speedup", x, y);
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"lowdens: low-density sampling experiments with small diffusion models"};
  app.require_subcommand(1);

  std::string init_path = "config.ini";
  auto* init = app.add_subcommand("init-config", "write the default experiment config");
  init->add_option("path", init_path, "output file");

  Common common;
  auto* gen = app.add_subcommand("gen", "generate the train and holdout datasets");
  add_common(gen, common);
  auto* train = app.add_subcommand("train", "train the diffusion model, discriminator and embedders");
  add_common(train, common);

  SampleFlags sf;
  auto* sample = app.add_subcommand("sample", "draw samples");
  add_common(sample, common);
  sample->add_option("--sampler", sf.sampler, "baseline|alpha|guided|ddim|smooth|reject");
  sf.o_alpha = sample->add_option("--alpha", sf.alpha, "low-density guidance scale");
  sf.o_beta = sample->add_option("--beta", sf.beta, "fidelity guidance scale");
  sf.o_ymax = sample->add_option("--y-max", sf.y_max, "smoothed class probability");
  sf.o_sub = sample->add_option("--substeps", sf.substeps, "DDIM substeps");
  sf.o_thr = sample->add_option("--threshold", sf.threshold, "hardness threshold (quota mode)");
  sf.o_pct = sample->add_option("--percentile", sf.percentile, "threshold at this holdout percentile per class");
  sf.o_n = sample->add_option("--n", sf.n, "samples (or quota) per class");
  sf.o_seed = sample->add_option("--seed", sf.seed, "sampling seed");
  sf.o_snap = sample->add_option("--snapshots", sf.snapshots, "comma-separated timesteps to record");
  sample->add_option("--class", sf.cls, "only this class");
  sample->add_option("--out", sf.out, "run file");

  GridFlags gf;
  auto* grid = app.add_subcommand("grid", "shared-seed grid over alpha and beta");
  add_common(grid, common);
  grid->add_option("--alphas", gf.alphas, "comma-separated alphas")->required();
  grid->add_option("--betas", gf.betas, "comma-separated betas")->required();
  gf.o_n = grid->add_option("--n", gf.n, "samples per class and cell");
  gf.o_seed = grid->add_option("--seed", gf.seed, "shared seed");
  grid->add_option("--out", gf.out, "report file");
  grid->add_flag("--series", gf.series, "also write plot series");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "density, fidelity and correlation reports against the holdout");
  add_common(eval, common);
  eval->add_option("runs", ef.runs, "run or dataset files")->required();
  eval->add_option("--out", ef.out, "report directory");
  eval->add_flag("--series", ef.series, "also write plot series");
  eval->add_flag("--no-nll", ef.no_nll, "skip the likelihood column of the correlation report");

  MemFlags mf;
  auto* mem = app.add_subcommand("memcheck", "nearest-neighbor memorization audit");
  add_common(mem, common);
  mem->add_option("run", mf.run, "run file")->required();
  mem->add_option("--space", mf.space, "embedding|ambient");
  mem->add_option("--top-p", mf.top_p, "closest pairs to list");
  mem->add_option("--out", mf.out, "report file");

  CostFlags cf;
  auto* cost = app.add_subcommand("cost", "sampling cost of guided vs rejection sampling");
  add_common(cost, common);
  cost->add_option("--guided", cf.guided, "guided run or ledger");
  cost->add_option("--reject", cf.reject, "rejection run or ledger");
  cost->add_option("--out", cf.out, "report file");
  cost->add_flag("--series", cf.series, "also write plot series");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (init->parsed()) return cmd_init(init_path);
    if (gen->parsed()) return cmd_gen(common);
    if (train->parsed()) return cmd_train(common);
    if (sample->parsed()) return cmd_sample(common, sf);
    if (grid->parsed()) return cmd_grid(common, gf);
    if (eval->parsed()) return cmd_eval(common, ef);
    if (mem->parsed()) return cmd_memcheck(common, mf);
    if (cost->parsed()) return cmd_cost(common, cf);
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "error: numerical: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: input: " << e.what() << '\n';
    return kExitInput;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: input: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: input: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitUsage;
}

}  // namespace lowdens
