#include "lowdens/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "lowdens/error.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

std::string_view to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::Baseline: return "baseline";
    case SamplerKind::Alpha: return "alpha";
    case SamplerKind::Guided: return "guided";
    case SamplerKind::Ddim: return "ddim";
    case SamplerKind::Smooth: return "smooth";
    case SamplerKind::Reject: return "reject";
    case SamplerKind::GuidedQuota: return "guided-quota";
  }
  return "unknown";
}

SamplerKind sampler_kind_from_string(std::string_view s) {
  for (auto k : {SamplerKind::Baseline, SamplerKind::Alpha, SamplerKind::Guided, SamplerKind::Ddim,
                 SamplerKind::Smooth, SamplerKind::Reject, SamplerKind::GuidedQuota}) {
    if (to_string(k) == s) return k;
  }
  throw InputError("unknown sampler kind '" + std::string(s) + "'");
}

long long SamplerRun::total_evaluations() const {
  long long total = 0;
  for (auto e : evaluations) total += e;
  return total;
}

LabeledDataset SamplerRun::as_dataset(int num_classes) const {
  LabeledDataset ds;
  ds.points = samples;
  ds.labels = labels;
  ds.num_classes = num_classes;
  ds.split = SplitTag::Train;
  ds.seed = meta.seed;
  return ds;
}

SamplerRun concat_runs(const std::vector<SamplerRun>& runs) {
  SamplerRun out;
  if (runs.empty()) return out;
  out.meta = runs.front().meta;
  Eigen::Index n = 0;
  const auto d = runs.front().samples.cols();
  for (const auto& r : runs) {
    if (r.samples.cols() != d && r.samples.rows() > 0) throw ContractError("concat_runs: dimension mismatch");
    n += r.samples.rows();
  }
  out.samples.resize(n, d);
  out.initial_latents.resize(n, d);
  Eigen::Index row = 0;
  for (const auto& r : runs) {
    if (r.samples.rows() == 0) continue;
    out.samples.middleRows(row, r.samples.rows()) = r.samples;
    if (r.initial_latents.rows() == r.samples.rows()) {
      out.initial_latents.middleRows(row, r.samples.rows()) = r.initial_latents;
    } else {
      out.initial_latents.middleRows(row, r.samples.rows()).setZero();
    }
    row += r.samples.rows();
    out.labels.insert(out.labels.end(), r.labels.begin(), r.labels.end());
    out.evaluations.insert(out.evaluations.end(), r.evaluations.begin(), r.evaluations.end());
    out.guidance_evaluations += r.guidance_evaluations;
  }
  // Snapshots are concatenated when every run recorded the same timesteps.
  bool same = true;
  for (const auto& r : runs) {
    same = same && r.snapshots.size() == runs.front().snapshots.size();
    if (!same) break;
    for (std::size_t i = 0; i < r.snapshots.size(); ++i) {
      same = same && r.snapshots[i].t == runs.front().snapshots[i].t;
    }
  }
  if (same) {
    for (std::size_t i = 0; i < runs.front().snapshots.size(); ++i) {
      Snapshot s;
      s.t = runs.front().snapshots[i].t;
      s.points.resize(n, d);
      Eigen::Index r0 = 0;
      for (const auto& r : runs) {
        if (r.samples.rows() == 0) continue;
        s.points.middleRows(r0, r.samples.rows()) = r.snapshots[i].points;
        r0 += r.samples.rows();
      }
      out.snapshots.push_back(std::move(s));
    }
  }
  return out;
}

Vec normalize_grad(const Vec& g, GradNorm mode) {
  if (mode == GradNorm::None) return g;
  const double m = g.size() > 0 ? g.cwiseAbs().maxCoeff() : 0.0;
  if (m == 0.0) return Vec::Zero(g.size());
  return g / m;
}

Vec smoothed_class_vector(int y, int classes, double y_max) {
  if (classes < 1 || y < 0 || y >= classes) throw ContractError("smoothing: class out of range");
  if (!(y_max >= 1.0 / classes - 1e-12 && y_max <= 1.0)) {
    throw InputError("smoothing: y_max must lie in [1/C, 1]");
  }
  if (classes == 1) return Vec::Ones(1);
  Vec v = Vec::Constant(classes, (1.0 - y_max) / (classes - 1));
  v[y] = y_max;
  return v;
}

namespace {

enum class Update { Ancestral, Ddim };

struct Engine {
  const DiffusionModel& model;
  std::vector<ReverseStep> plan;
  Vec class_vec;
  int y = 0;
  Update update = Update::Ancestral;
  const GuidanceArtifacts* art = nullptr;
  GuidanceConfig cfg;
};

void check_artifacts(const GuidanceArtifacts& art, const GuidanceConfig& cfg, int classes) {
  cfg.validate();
  if (cfg.alpha > 0.0) {
    if (!art.embedder) throw ContractError("guidance: low-density term needs the embedder");
    if (cfg.loss_space == LossSpace::EmbeddingHardness) {
      if (!art.class_models) throw ContractError("guidance: low-density term needs class models");
      if (art.class_models->clean().num_classes() != classes) {
        throw ContractError("guidance: class models disagree with the diffusion model");
      }
    }
  }
  if (cfg.beta_fid > 0.0 && !art.discriminator) {
    throw ContractError("guidance: fidelity term needs the discriminator");
  }
}

SamplerRun run_engine(const Engine& eng, int n, std::uint64_t seed, const SamplerOptions& opts,
                      RunMeta meta) {
  if (n < 0) throw ContractError("sampler: negative sample count");
  const int d = eng.model.dim();
  const bool guided = eng.cfg.alpha > 0.0 || eng.cfg.beta_fid > 0.0;
  if (guided) check_artifacts(*eng.art, eng.cfg, eng.model.num_classes);

  std::vector<int> snap_ts(opts.snapshot_timesteps.begin(), opts.snapshot_timesteps.end());
  std::sort(snap_ts.begin(), snap_ts.end(), std::greater<>());
  snap_ts.erase(std::unique(snap_ts.begin(), snap_ts.end()), snap_ts.end());
  for (int t : snap_ts) {
    const bool visited = t == 0 || std::any_of(eng.plan.begin(), eng.plan.end(),
                                               [t](const ReverseStep& s) { return s.t == t; });
    if (!visited) throw ContractError("sampler: snapshot timestep " + std::to_string(t) + " not in plan");
  }

  SamplerRun run;
  run.meta = meta;
  run.samples.resize(n, d);
  run.initial_latents.resize(n, d);
  run.labels.assign(static_cast<std::size_t>(n), eng.y);
  run.evaluations.assign(static_cast<std::size_t>(n), static_cast<long long>(eng.plan.size()));
  for (int t : snap_ts) run.snapshots.push_back({t, Mat(n, d)});
  auto snapshot = [&](int t, Eigen::Index row, const Vec& x) {
    for (auto& s : run.snapshots) {
      if (s.t == t) s.points.row(row) = x.transpose();
    }
  };

  const Vec zero = Vec::Zero(d);
  for (int i = 0; i < n; ++i) {
    const auto chain = static_cast<std::uint32_t>(opts.chain_offset + static_cast<std::uint32_t>(i));
    Vec x(d);
    {
      CounterRng rng(seed, stream_id(StreamTag::Latent, static_cast<std::uint32_t>(eng.y), chain));
      for (int k = 0; k < d; ++k) x[k] = rng.normal();
    }
    run.initial_latents.row(i) = x.transpose();
    for (const auto& step : eng.plan) {
      snapshot(step.t, i, x);
      const bool last = step.t_prev == 0;
      Vec mean;
      if (eng.update == Update::Ancestral) {
        mean = reverse_moments(eng.model, x, step, eng.class_vec).mean;
      } else {
        const Vec eps = predict_noise(eng.model, x, step.t, eng.class_vec);
        const Vec x0 = (x - std::sqrt(1.0 - step.alpha_bar) * eps) / std::sqrt(step.alpha_bar);
        mean = std::sqrt(step.alpha_bar_prev) * x0 + std::sqrt(1.0 - step.alpha_bar_prev) * eps;
      }
      // A deterministic jump has no noise; its guidance scale is the displacement a unit score
      // offset causes through eps' = eps - sqrt(1 - ab_t) * g, so the guided ODE stays consistent
      // as the substep count grows.
      const double scale =
          eng.update == Update::Ancestral
              ? step.variance
              : (1.0 - step.alpha_bar) * std::sqrt(step.alpha_bar_prev / step.alpha_bar) -
                    std::sqrt((1.0 - step.alpha_bar_prev) * (1.0 - step.alpha_bar));
      const Vec variance = Vec::Constant(d, scale);
      Vec z = zero;
      if (eng.update == Update::Ancestral && !last) {
        CounterRng rng(seed, stream_id(StreamTag::StepNoise, static_cast<std::uint32_t>(eng.y), chain,
                                       static_cast<std::uint32_t>(step.t)));
        for (int k = 0; k < d; ++k) z[k] = rng.normal();
      }
      Vec x_next = mean + variance.cwiseSqrt().cwiseProduct(z);
      Vec u1 = zero, u2 = zero;
      const double mask = last ? 0.0 : 1.0;
      if (guided && !last) {
        const double t = step.t;
        if (eng.cfg.alpha > 0.0) {
          const Vec g = eng.cfg.loss_space == LossSpace::EmbeddingHardness
                            ? loss_g1(eng.art->class_models->nearest(step.t), *eng.art->embedder, x,
                                      t, eng.y, eng.cfg.tau).grad
                            : loss_g1_logit(*eng.art->embedder, x, t, eng.y, eng.cfg.tau).grad;
          u1 = eng.cfg.alpha * variance.cwiseProduct(normalize_grad(g, eng.cfg.grad_norm));
          ++run.guidance_evaluations;
        }
        if (eng.cfg.beta_fid > 0.0) {
          // Descending -log p(real) moves the state toward the real-data class.
          const Vec g = -loss_g2(*eng.art->discriminator, x, t, eng.cfg.tau).grad;
          u2 = eng.cfg.beta_fid * variance.cwiseProduct(normalize_grad(g, eng.cfg.grad_norm));
          ++run.guidance_evaluations;
        }
        x_next += u1 + u2;
      }
      if (!x_next.allFinite()) {
        throw NumericalError("sampler: non-finite state at t=" + std::to_string(step.t) + " in chain " +
                             std::to_string(chain));
      }
      if (opts.observer) {
        StepRecord rec;
        rec.chain = static_cast<int>(chain);
        rec.t = step.t;
        rec.t_prev = step.t_prev;
        rec.x_t = &x;
        rec.mean = &mean;
        rec.variance = &variance;
        rec.noise = &z;
        rec.u1 = &u1;
        rec.u2 = &u2;
        rec.mask = mask;
        rec.x_next = &x_next;
        opts.observer(rec);
      }
      x = std::move(x_next);
    }
    snapshot(0, i, x);
    run.samples.row(i) = x.transpose();
  }
  return run;
}

Vec class_vector(const DiffusionModel& model, int y) {
  if (y < 0 || (model.class_conditional && y >= model.num_classes)) {
    throw ContractError("sampler: class " + std::to_string(y) + " out of range");
  }
  return model.class_conditional ? one_hot(y, model.num_classes) : Vec();
}

}  // namespace

SamplerRun baseline_sample(const DiffusionModel& model, int y, int n, std::uint64_t seed,
                           const SamplerOptions& opts) {
  Engine eng{model, strided_plan(model.schedule, opts.stride, model.variance), class_vector(model, y), y, Update::Ancestral, nullptr, {}};
  RunMeta meta;
  meta.kind = SamplerKind::Baseline;
  meta.seed = seed;
  meta.stride = opts.stride;
  return run_engine(eng, n, seed, opts, meta);
}

SamplerRun sample_alpha(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                        const GuidanceConfig& cfg, int n, std::uint64_t seed,
                        const SamplerOptions& opts) {
  if (cfg.beta_fid != 0.0) throw ContractError("sample_alpha: beta_fid must be 0");
  auto run = sample_guided(model, art, y, cfg, n, seed, opts);
  run.meta.kind = SamplerKind::Alpha;
  return run;
}

SamplerRun sample_guided(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                         const GuidanceConfig& cfg, int n, std::uint64_t seed,
                         const SamplerOptions& opts) {
  cfg.validate();
  Engine eng{model, strided_plan(model.schedule, opts.stride, model.variance), class_vector(model, y), y, Update::Ancestral, nullptr, {}};
  eng.art = &art;
  eng.cfg = cfg;
  RunMeta meta;
  meta.kind = SamplerKind::Guided;
  meta.guidance = cfg;
  meta.seed = seed;
  meta.stride = opts.stride;
  return run_engine(eng, n, seed, opts, meta);
}

std::vector<GridCell> sample_grid(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                                  const std::vector<double>& alphas, const std::vector<double>& betas,
                                  const GuidanceConfig& base, int n, std::uint64_t shared_seed,
                                  const SamplerOptions& opts) {
  if (alphas.empty() || betas.empty()) throw InputError("grid: alpha and beta axes must be nonempty");
  std::vector<GridCell> cells;
  for (double a : alphas) {
    for (double b : betas) {
      GuidanceConfig cfg = base;
      cfg.alpha = a;
      cfg.beta_fid = b;
      cells.push_back({a, b, sample_guided(model, art, y, cfg, n, shared_seed, opts)});
    }
  }
  return cells;
}

SamplerRun sample_ddim_guided(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                              int substeps, const GuidanceConfig& cfg, int n, std::uint64_t seed,
                              const SamplerOptions& opts) {
  if (substeps < 2) throw InputError("ddim: need at least 2 substeps");
  if (substeps > model.schedule.steps()) throw InputError("ddim: substeps exceed T");
  cfg.validate();
  Engine eng{model, reverse_plan(model.schedule, substeps, VarianceMode::FixedPosterior),
             class_vector(model, y), y, Update::Ddim, &art, cfg};
  RunMeta meta;
  meta.kind = SamplerKind::Ddim;
  meta.guidance = cfg;
  meta.seed = seed;
  meta.substeps = substeps;
  return run_engine(eng, n, seed, opts, meta);
}

SamplerRun sample_smoothed_embedding(const DiffusionModel& model, int y, double y_max, int n,
                                     std::uint64_t seed, const SamplerOptions& opts) {
  if (!model.class_conditional) throw ContractError("smoothing: model is not class conditional");
  Engine eng{model, strided_plan(model.schedule, opts.stride, model.variance),
             smoothed_class_vector(y, model.num_classes, y_max), y, Update::Ancestral, nullptr, {}};
  RunMeta meta;
  meta.kind = SamplerKind::Smooth;
  meta.seed = seed;
  meta.stride = opts.stride;
  meta.y_max = y_max;
  return run_engine(eng, n, seed, opts, meta);
}

CostLedger merge(const CostLedger& a, const CostLedger& b) {
  CostLedger out = a;
  out.quota = a.quota + b.quota;
  out.draws = a.draws + b.draws;
  out.accepted = a.accepted + b.accepted;
  out.denoiser_evaluations = a.denoiser_evaluations + b.denoiser_evaluations;
  out.guidance_evaluations = a.guidance_evaluations + b.guidance_evaluations;
  out.quota_met = a.quota_met && b.quota_met;
  return out;
}

std::vector<double> sample_hardness(const GuidanceArtifacts& art, const Mat& samples,
                                    const std::vector<int>& labels) {
  if (!art.embedder || !art.class_models) throw ContractError("hardness: embedder and class models required");
  if (static_cast<Eigen::Index>(labels.size()) != samples.rows()) {
    throw ContractError("hardness: label count mismatch");
  }
  const auto& cm = art.class_models->clean();
  const Mat emb = embed(*art.embedder, samples, 0.0);
  std::vector<double> h(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    h[i] = hardness_score(cm, emb.row(static_cast<Eigen::Index>(i)).transpose(), labels[i]);
  }
  return h;
}

namespace {

template <class DrawBatch>
QuotaRun quota_loop(const GuidanceArtifacts& art, double threshold, int quota, long long max_draws,
                    const SamplerOptions& opts, DrawBatch&& draw_batch) {
  if (quota < 0 || max_draws < 0) throw ContractError("quota sampling: negative quota or budget");
  constexpr int kBatch = 32;
  QuotaRun out;
  out.ledger.threshold = threshold;
  out.ledger.quota = quota;
  std::vector<SamplerRun> accepted_parts;
  long long drawn = 0;
  int accepted = 0;
  while (accepted < quota && drawn < max_draws) {
    const int batch = static_cast<int>(std::min<long long>(kBatch, max_draws - drawn));
    SamplerOptions o = opts;
    o.chain_offset = opts.chain_offset + static_cast<std::uint32_t>(drawn);
    SamplerRun part = draw_batch(batch, o);
    const auto h = sample_hardness(art, part.samples, part.labels);
    std::vector<Eigen::Index> keep;
    int used = 0;
    for (int i = 0; i < batch && accepted < quota; ++i) {
      ++used;
      if (h[static_cast<std::size_t>(i)] > threshold) {
        keep.push_back(i);
        ++accepted;
      }
    }
    // Chains past the one that filled the quota were never needed.
    drawn += used;
    out.ledger.denoiser_evaluations +=
        used > 0 ? static_cast<long long>(used) * part.evaluations.front() : 0;
    out.ledger.guidance_evaluations += part.guidance_evaluations * used / batch;
    SamplerRun kept;
    kept.meta = part.meta;
    kept.samples.resize(static_cast<Eigen::Index>(keep.size()), part.samples.cols());
    kept.initial_latents.resize(static_cast<Eigen::Index>(keep.size()), part.samples.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      kept.samples.row(static_cast<Eigen::Index>(k)) = part.samples.row(keep[k]);
      kept.initial_latents.row(static_cast<Eigen::Index>(k)) = part.initial_latents.row(keep[k]);
      kept.labels.push_back(part.labels[static_cast<std::size_t>(keep[k])]);
      kept.evaluations.push_back(part.evaluations[static_cast<std::size_t>(keep[k])]);
    }
    accepted_parts.push_back(std::move(kept));
  }
  out.run = concat_runs(accepted_parts);
  out.run.meta.threshold = threshold;
  out.ledger.draws = drawn;
  out.ledger.accepted = accepted;
  out.ledger.quota_met = accepted >= quota;
  return out;
}

}  // namespace

QuotaRun rejection_baseline(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                            double hardness_threshold, int quota, long long max_draws,
                            std::uint64_t seed, const SamplerOptions& opts) {
  auto out = quota_loop(art, hardness_threshold, quota, max_draws, opts, [&](int n, const SamplerOptions& o) {
    SamplerOptions plain = o;
    plain.snapshot_timesteps.clear();
    return baseline_sample(model, y, n, seed, plain);
  });
  out.run.meta.kind = SamplerKind::Reject;
  out.run.meta.seed = seed;
  return out;
}

QuotaRun guided_until_quota(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                            const GuidanceConfig& cfg, double hardness_threshold, int quota,
                            long long max_draws, std::uint64_t seed, const SamplerOptions& opts) {
  auto out = quota_loop(art, hardness_threshold, quota, max_draws, opts, [&](int n, const SamplerOptions& o) {
    SamplerOptions plain = o;
    plain.snapshot_timesteps.clear();
    return sample_guided(model, art, y, cfg, n, seed, plain);
  });
  out.run.meta.kind = SamplerKind::GuidedQuota;
  out.run.meta.guidance = cfg;
  out.run.meta.seed = seed;
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".meta.json";
  return p;
}

namespace {

std::string_view loss_space_name(LossSpace s) {
  return s == LossSpace::EmbeddingHardness ? "embedding-hardness" : "logit-softmax";
}

std::string_view grad_norm_name(GradNorm g) { return g == GradNorm::UnitLinf ? "unit-linf" : "none"; }

}  // namespace

void save_run(const SamplerRun& run, int num_classes, const std::filesystem::path& path) {
  save_dataset(run.as_dataset(num_classes), path);
  nlohmann::json j;
  j["format"] = "lowdens-run";
  j["version"] = 1;
  j["sampler"] = to_string(run.meta.kind);
  j["alpha"] = run.meta.guidance.alpha;
  j["beta_fid"] = run.meta.guidance.beta_fid;
  j["tau"] = run.meta.guidance.tau;
  j["loss_space"] = loss_space_name(run.meta.guidance.loss_space);
  j["grad_norm"] = grad_norm_name(run.meta.guidance.grad_norm);
  j["seed"] = run.meta.seed;
  j["stride"] = run.meta.stride;
  j["substeps"] = run.meta.substeps;
  j["y_max"] = run.meta.y_max;
  j["threshold"] = std::isfinite(run.meta.threshold) ? nlohmann::json(run.meta.threshold)
                                                     : nlohmann::json(nullptr);
  j["count"] = run.size();
  j["denoiser_evaluations"] = run.evaluations;
  j["total_denoiser_evaluations"] = run.total_evaluations();
  j["guidance_evaluations"] = run.guidance_evaluations;
  if (!run.snapshots.empty()) {
    auto& snaps = j["snapshots"] = nlohmann::json::array();
    for (const auto& s : run.snapshots) {
      std::vector<double> flat;
      for (Eigen::Index r = 0; r < s.points.rows(); ++r)
        for (Eigen::Index c = 0; c < s.points.cols(); ++c) flat.push_back(s.points(r, c));
      snaps.push_back({{"t", s.t}, {"points", std::move(flat)}});
    }
  }
  write_text_file(sidecar_path(path), j.dump(1) + "\n");
}

SamplerRun load_run(const std::filesystem::path& path) {
  const auto ds = load_dataset(path);
  SamplerRun run;
  run.samples = ds.points;
  run.labels = ds.labels;
  run.meta.seed = ds.seed;
  const auto side = sidecar_path(path);
  if (!std::filesystem::exists(side)) {
    run.evaluations.assign(ds.labels.size(), 0);
    return run;
  }
  try {
    const auto j = nlohmann::json::parse(read_text_file(side));
    run.meta.kind = sampler_kind_from_string(j.at("sampler").get<std::string>());
    run.meta.guidance.alpha = j.at("alpha").get<double>();
    run.meta.guidance.beta_fid = j.at("beta_fid").get<double>();
    run.meta.guidance.tau = j.at("tau").get<double>();
    run.meta.guidance.loss_space = j.at("loss_space") == "logit-softmax" ? LossSpace::LogitSoftmax
                                                                        : LossSpace::EmbeddingHardness;
    run.meta.guidance.grad_norm = j.at("grad_norm") == "none" ? GradNorm::None : GradNorm::UnitLinf;
    run.meta.seed = j.at("seed").get<std::uint64_t>();
    run.meta.stride = j.at("stride").get<int>();
    run.meta.substeps = j.at("substeps").get<int>();
    run.meta.y_max = j.at("y_max").get<double>();
    if (!j.at("threshold").is_null()) run.meta.threshold = j.at("threshold").get<double>();
    run.evaluations = j.at("denoiser_evaluations").get<std::vector<long long>>();
    run.guidance_evaluations = j.at("guidance_evaluations").get<long long>();
    if (run.evaluations.size() != ds.labels.size()) {
      throw InputError("run sidecar: evaluation count does not match samples");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("run sidecar '" + side.string() + "': " + e.what());
  }
  return run;
}

}  // namespace lowdens
