#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "lowdens/error.hpp"
#include "lowdens/sampler.hpp"

using namespace lowdens;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Untrained but fixed networks: enough to exercise the sampler plumbing.
struct Toy {
  DiffusionModel model;
  MicroNet embedder;
  MicroNet discriminator;
  ClassModelGrid grid;
  GuidanceArtifacts art;

  Toy() {
    const auto sch = NoiseSchedule::linear(20, 1e-3, 0.4);
    model.schedule = sch;
    model.class_conditional = true;
    model.num_classes = 2;
    model.denoiser = MicroNet::make(2, {8}, 2, {4, 2, 20, 1.0}, 1);
    embedder = MicroNet::make(2, {8, 4}, 2, {4, 0, 20, 1.0}, 2, 1);
    discriminator = MicroNet::make(2, {6}, 2, {4, 0, 20, 1.0}, 3);
    std::vector<MixtureSpec> specs;
    for (int y = 0; y < 2; ++y) specs.emplace_back(y, std::vector<MixtureComponent>{{1.0, v2(2.0 * y, 0), Mat::Identity(2, 2)}});
    grid = fit_class_model_grid(embedder, generate(specs, 50, 4), sch, 5, 6);
    art = {&embedder, &grid, &discriminator};
  }
};

const Toy& toy() {
  static const Toy t;
  return t;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("l-infinity normalization") {
  CHECK(normalize_grad(v2(2, -4)) == v2(0.5, -1));
  CHECK(normalize_grad(v2(0, 0)) == v2(0, 0));
  CHECK(normalize_grad(v2(2, -4), GradNorm::None) == v2(2, -4));
  Vec g(5);
  g << 0.3, -7, 2, 1e-9, 6.9;
  CHECK(normalize_grad(g).cwiseAbs().maxCoeff() == 1.0);
}

TEST_CASE("smoothed class vector") {
  CHECK(smoothed_class_vector(1, 3, 1.0) == Vec::Unit(3, 1));
  const Vec v = smoothed_class_vector(2, 4, 0.7);
  CHECK(v[2] == 0.7);
  CHECK(v[0] == doctest::Approx(0.1));
  CHECK(v.sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(smoothed_class_vector(0, 4, 0.2), InputError);
  CHECK_THROWS_AS(smoothed_class_vector(0, 4, 1.1), InputError);
}

TEST_CASE("ledger merge is order-insensitive") {
  CostLedger a{1.5, 10, 40, 10, 800, 0, true};
  CostLedger b{1.5, 10, 25, 7, 500, 12, false};
  CostLedger c{1.5, 5, 9, 5, 180, 3, true};
  auto same = [](const CostLedger& x, const CostLedger& y) {
    return x.quota == y.quota && x.draws == y.draws && x.accepted == y.accepted &&
           x.denoiser_evaluations == y.denoiser_evaluations &&
           x.guidance_evaluations == y.guidance_evaluations && x.quota_met == y.quota_met;
  };
  CHECK(same(merge(a, b), merge(b, a)));
  CHECK(same(merge(merge(a, b), c), merge(a, merge(c, b))));
  CHECK(merge(a, b).draws == 65);
  CHECK_FALSE(merge(a, b).quota_met);
}

TEST_CASE("reduction identities") {
  const auto& t = toy();
  const auto base = baseline_sample(t.model, 1, 6, 42);
  CHECK(base.samples.allFinite());
  CHECK(base.evaluations.front() == 20);
  CHECK(base.total_evaluations() == 6 * 20);

  SUBCASE("same seed reproduces, different seed differs") {
    CHECK(baseline_sample(t.model, 1, 6, 42).samples == base.samples);
    CHECK(baseline_sample(t.model, 1, 6, 43).samples != base.samples);
  }
  SUBCASE("zero guidance equals the baseline") {
    const auto g = sample_guided(t.model, t.art, 1, GuidanceConfig{}, 6, 42);
    CHECK(g.samples == base.samples);
    CHECK(g.guidance_evaluations == 0);
    const auto cells = sample_grid(t.model, t.art, 1, {0.0, 0.5}, {0.0}, GuidanceConfig{}, 6, 42);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].run.samples == base.samples);
    CHECK(cells[1].run.initial_latents == base.initial_latents);
  }
  SUBCASE("y_max = 1 smoothing equals the baseline") {
    CHECK(sample_smoothed_embedding(t.model, 1, 1.0, 6, 42).samples == base.samples);
  }
  SUBCASE("rejection with an unreachable-free threshold keeps the first chains") {
    const auto q = rejection_baseline(t.model, t.art, 1, -std::numeric_limits<double>::infinity(), 6, 100, 42);
    CHECK(q.ledger.draws == 6);
    CHECK(q.ledger.accepted == 6);
    CHECK(q.ledger.quota_met);
    CHECK(q.run.samples == base.samples);
    const auto none = rejection_baseline(t.model, t.art, 1, std::numeric_limits<double>::infinity(), 6, 40, 42);
    CHECK(none.ledger.draws == 40);
    CHECK(none.ledger.accepted == 0);
    CHECK_FALSE(none.ledger.quota_met);
  }
}

TEST_CASE("guided step structure") {
  const auto& t = toy();
  GuidanceConfig cfg;
  cfg.alpha = 0.5;
  cfg.beta_fid = 0.25;
  int records = 0;
  SamplerOptions opts;
  opts.observer = [&](const StepRecord& r) {
    ++records;
    const Vec noise_part = r.variance->cwiseSqrt().cwiseProduct(*r.noise);
    const Vec expect = *r.mean + noise_part + r.mask * (*r.u1 + *r.u2);
    CHECK((*r.x_next - expect).norm() < 1e-12);
    if (r.t_prev == 0) {
      CHECK(r.mask == 0.0);
      CHECK(r.noise->isZero(0.0));
    } else {
      // alpha * Sigma * unit-linf direction
      CHECK(r.u1->cwiseAbs().maxCoeff() == doctest::Approx(0.5 * (*r.variance)[0]));
      CHECK(r.u2->cwiseAbs().maxCoeff() == doctest::Approx(0.25 * (*r.variance)[0]));
    }
  };
  const auto run = sample_guided(t.model, t.art, 0, cfg, 3, 9, opts);
  CHECK(records == 3 * 20);
  CHECK(run.guidance_evaluations == 2 * 3 * 19);
  CHECK(sample_guided(t.model, t.art, 0, cfg, 3, 9).samples == run.samples);
  CHECK_THROWS_AS(sample_alpha(t.model, t.art, 0, cfg, 3, 9), ContractError);
  GuidanceArtifacts missing{&t.embedder, &t.grid, nullptr};
  CHECK_THROWS_AS(sample_guided(t.model, missing, 0, cfg, 3, 9), ContractError);
}

TEST_CASE("DDIM is deterministic given the latents") {
  const auto& t = toy();
  SamplerOptions opts;
  opts.observer = [](const StepRecord& r) { CHECK(r.noise->isZero(0.0)); };
  const auto a = sample_ddim_guided(t.model, t.art, 0, 5, GuidanceConfig{}, 4, 11, opts);
  CHECK(a.evaluations.front() == 5);
  CHECK(a.initial_latents == baseline_sample(t.model, 0, 4, 11).initial_latents);
  CHECK(sample_ddim_guided(t.model, t.art, 0, 5, GuidanceConfig{}, 4, 11).samples == a.samples);
  CHECK_THROWS_AS(sample_ddim_guided(t.model, t.art, 0, 1, GuidanceConfig{}, 4, 11), InputError);
}

TEST_CASE("run files round trip") {
  const auto& t = toy();
  const auto run = baseline_sample(t.model, 1, 4, 5);
  const auto path = std::filesystem::temp_directory_path() / "lowdens_unit" / "run.txt";
  std::filesystem::create_directories(path.parent_path());
  save_run(run, 2, path);
  const auto back = load_run(path);
  CHECK(back.samples == run.samples);
  CHECK(back.labels == run.labels);
  CHECK(back.meta.seed == 5);
  CHECK(back.meta.kind == SamplerKind::Baseline);
}

}
