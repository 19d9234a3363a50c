#include "lowdens/pipeline.hpp"

#include <cmath>
#include <sstream>

#include "lowdens/error.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

WorldData generate_world(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto all = generate(cfg.world.classes, cfg.world.n_per_class, cfg.world.seed);
  auto [train, holdout] = split_holdout(all, cfg.world.holdout_fraction, cfg.world.split_seed);
  return {std::move(train), std::move(holdout)};
}

LabeledDataset baseline_corpus(const DiffusionModel& model, const std::vector<int>& per_class, std::uint64_t seed,
                               int stride) {
  std::vector<SamplerRun> runs;
  SamplerOptions opts;
  opts.stride = stride;
  for (std::size_t y = 0; y < per_class.size(); ++y) {
    if (per_class[y] == 0) continue;
    runs.push_back(baseline_sample(model, static_cast<int>(y), per_class[y], seed, opts));
  }
  auto ds = concat_runs(runs).as_dataset(model.num_classes);
  ds.seed = seed;
  return ds;
}

Artifacts train_all(const ExperimentConfig& cfg, const LabeledDataset& train, TrainingReport* report) {
  cfg.validate();
  if (train.size() == 0) throw InputError("training set is empty");
  if (train.num_classes != cfg.world.num_classes()) throw InputError("training set class count disagrees with config");
  const auto sch = cfg.schedule.build();

  auto diff = train_diffusion(train, sch, cfg.diffusion, cfg.schedule.variance);

  std::vector<int> per_class(static_cast<std::size_t>(train.num_classes), 0);
  for (int y : train.labels) ++per_class[static_cast<std::size_t>(y)];
  auto corpus = baseline_corpus(diff.model, per_class, cfg.sampling.corpus_seed, cfg.schedule.stride);
  auto disc = train_discriminator(train, corpus, sch, cfg.discriminator);

  auto emb = train_embedder(train, sch, cfg.embedder);
  auto emb2 = train_embedder(train, sch, cfg.embedder2);
  auto grid = fit_class_model_grid(emb.net, train, sch, cfg.class_model.grid_stride, cfg.class_model.seed,
                                   cfg.class_model.shrinkage);

  if (report) {
    report->diffusion_trace = std::move(diff.loss_trace);
    report->embedder_trace = emb.loss_trace;
    report->embedder2_trace = emb2.loss_trace;
    report->discriminator_trace = disc.loss_trace;
    report->discriminator_accuracy = disc.heldout_accuracy;
    report->corpus = corpus;
  }
  return Artifacts{std::move(diff.model), std::move(emb.net), std::move(emb2.net), std::move(disc.net),
                   std::move(grid)};
}

std::string format_trace(const std::vector<double>& trace) {
  std::string out = "# step\tloss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out += std::to_string(i) + '\t' + format_double(trace[i]) + '\n';
  return out;
}

void save_artifacts(const Artifacts& art, const ArtifactPaths& paths) {
  save_diffusion(art.diffusion, paths.diffusion());
  save_net(art.embedder, paths.embedder());
  save_net(art.embedder2, paths.embedder2());
  save_net(art.discriminator, paths.discriminator());
  save_class_grid(art.class_grid, paths.class_grid());
}

void save_training_report(const TrainingReport& report, const ArtifactPaths& paths) {
  write_text_file(paths.trace("diffusion"), format_trace(report.diffusion_trace));
  write_text_file(paths.trace("embedder"), format_trace(report.embedder_trace));
  write_text_file(paths.trace("embedder2"), format_trace(report.embedder2_trace));
  write_text_file(paths.trace("discriminator"),
                  format_trace(report.discriminator_trace) +
                      "# heldout_accuracy\t" + format_double(report.discriminator_accuracy) + '\n');
  save_dataset(report.corpus, paths.corpus());
}

namespace {

void require(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::exists(p)) {
    throw InputError(std::string("missing ") + what + ": expected " + p.string());
  }
}

}  // namespace

Artifacts load_artifacts(const ArtifactPaths& paths) {
  require(paths.diffusion(), "diffusion checkpoint");
  require(paths.embedder(), "embedder checkpoint");
  require(paths.embedder2(), "second embedder checkpoint");
  require(paths.discriminator(), "discriminator checkpoint");
  require(paths.class_grid(), "class models");
  return Artifacts{load_diffusion(paths.diffusion()), load_net(paths.embedder()), load_net(paths.embedder2()),
                   load_net(paths.discriminator()), load_class_grid(paths.class_grid())};
}

WorldData load_world(const ArtifactPaths& paths) {
  require(paths.train(), "training set");
  require(paths.holdout(), "holdout set");
  return {load_dataset(paths.train()), load_dataset(paths.holdout())};
}

std::vector<double> holdout_thresholds(const Artifacts& art, const LabeledDataset& holdout, double percentile) {
  const auto h = sample_hardness(art.view(), holdout.points, holdout.labels);
  std::vector<double> out;
  for (int y = 0; y < holdout.num_classes; ++y) {
    std::vector<double> cls;
    for (std::size_t i = 0; i < h.size(); ++i)
      if (holdout.labels[i] == y) cls.push_back(h[i]);
    if (cls.empty()) throw InputError("holdout has no samples of class " + std::to_string(y));
    out.push_back(quantile(std::move(cls), percentile / 100.0));
  }
  return out;
}

CostComparison compare_cost(const ExperimentConfig& cfg, const Artifacts& art, const LabeledDataset& holdout,
                            double percentile, const GuidanceConfig& guidance) {
  const auto thresholds = holdout_thresholds(art, holdout, percentile);
  const int classes = static_cast<int>(thresholds.size());
  SamplerOptions opts;
  opts.stride = cfg.schedule.stride;
  CostComparison out;
  out.percentile = percentile;
  out.rejection.threshold = out.guided.threshold = percentile;
  out.rejection.quota_met = out.guided.quota_met = true;
  for (int y = 0; y < classes; ++y) {
    const int quota = cfg.cost.quota / classes + (y < cfg.cost.quota % classes ? 1 : 0);
    if (quota == 0) continue;
    const auto rej = rejection_baseline(art.diffusion, art.view(), y, thresholds[static_cast<std::size_t>(y)], quota,
                                        cfg.cost.max_draws, cfg.cost.seed, opts);
    const auto gui = guided_until_quota(art.diffusion, art.view(), y, guidance, thresholds[static_cast<std::size_t>(y)],
                                        quota, cfg.cost.max_draws, cfg.cost.seed, opts);
    out.rejection = merge(out.rejection, rej.ledger);
    out.guided = merge(out.guided, gui.ledger);
  }
  // merged ledgers carry the percentile rather than one class's threshold
  out.rejection.threshold = out.guided.threshold = percentile;
  return out;
}

std::string format_ledger(const CostLedger& l) {
  std::ostringstream out;
  out << "# lowdens cost ledger\n"
      << "threshold " << format_double(l.threshold) << '\n'
      << "quota " << l.quota << '\n'
      << "draws " << l.draws << '\n'
      << "accepted " << l.accepted << '\n'
      << "denoiser_evaluations " << l.denoiser_evaluations << '\n'
      << "guidance_evaluations " << l.guidance_evaluations << '\n'
      << "quota_met " << (l.quota_met ? 1 : 0) << '\n';
  return out.str();
}

CostLedger parse_ledger(std::string_view text) {
  CostLedger l;
  LineReader reader(text);
  int seen = 0;
  while (auto line = reader.next_content_line()) {
    const auto f = split_fields(*line);
    const auto n = reader.line_number();
    if (f.size() != 2) throw ParseError("expected 'key value'", n);
    if (f[0] == "threshold") l.threshold = parse_double(f[1], n);
    else if (f[0] == "quota") l.quota = parse_int<int>(f[1], n);
    else if (f[0] == "draws") l.draws = parse_int<long long>(f[1], n);
    else if (f[0] == "accepted") l.accepted = parse_int<long long>(f[1], n);
    else if (f[0] == "denoiser_evaluations") l.denoiser_evaluations = parse_int<long long>(f[1], n);
    else if (f[0] == "guidance_evaluations") l.guidance_evaluations = parse_int<long long>(f[1], n);
    else if (f[0] == "quota_met") l.quota_met = parse_int<int>(f[1], n) != 0;
    else throw ParseError("unknown ledger key '" + std::string(f[0]) + "'", n);
    ++seen;
  }
  if (seen != 7) throw InputError("cost ledger is incomplete");
  return l;
}

void write_series(const std::filesystem::path& path, const std::string& x_name, const std::string& y_name,
                  const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ContractError("series: x and y differ in length");
  std::string out = "# " + x_name + '\t' + y_name + '\n';
  for (std::size_t i = 0; i < x.size(); ++i) out += format_double(x[i]) + '\t' + format_double(y[i]) + '\n';
  write_text_file(path, out);
}

SamplerRun sample_all_classes(const Artifacts& art, const SampleRequest& req) {
  std::vector<SamplerRun> runs;
  SamplerOptions opts;
  opts.stride = req.stride;
  const auto view = art.view();
  for (int y = 0; y < art.diffusion.num_classes; ++y) {
    switch (req.kind) {
      case SamplerKind::Baseline:
        runs.push_back(baseline_sample(art.diffusion, y, req.n_per_class, req.seed, opts));
        break;
      case SamplerKind::Alpha:
        runs.push_back(sample_alpha(art.diffusion, view, y, req.guidance, req.n_per_class, req.seed, opts));
        break;
      case SamplerKind::Guided:
        runs.push_back(sample_guided(art.diffusion, view, y, req.guidance, req.n_per_class, req.seed, opts));
        break;
      case SamplerKind::Ddim:
        runs.push_back(
            sample_ddim_guided(art.diffusion, view, y, req.substeps, req.guidance, req.n_per_class, req.seed, opts));
        break;
      case SamplerKind::Smooth:
        runs.push_back(sample_smoothed_embedding(art.diffusion, y, req.y_max, req.n_per_class, req.seed, opts));
        break;
      default:
        throw ContractError("sample_all_classes: quota samplers are not supported here");
    }
  }
  auto run = concat_runs(runs);
  run.meta = runs.front().meta;
  return run;
}

std::vector<double> neg_log_true_density(const std::vector<MixtureSpec>& world, const Mat& points,
                                         const std::vector<int>& labels) {
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= world.size()) throw InputError("label outside the configured world");
    const double p = true_density(world[y], points.row(static_cast<Eigen::Index>(i)).transpose());
    out[i] = p > 0.0 ? -std::log(p) : std::numeric_limits<double>::infinity();
  }
  return out;
}

}  // namespace lowdens
