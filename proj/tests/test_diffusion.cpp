#include <doctest.h>

#include <cmath>

#include "lowdens/diffusion.hpp"
#include "lowdens/error.hpp"

using namespace lowdens;

namespace {

NoiseSchedule default_schedule() { return NoiseSchedule::linear(200, 5e-4, 0.1); }

// Unconditional model whose denoiser is the linear map eps_hat = gain_scale * x_t.
DiffusionModel linear_model(const NoiseSchedule& sch, double eps_per_x_t, int t) {
  DiffusionModel m;
  m.schedule = sch;
  m.class_conditional = false;
  m.data_scale = 1.5;
  // undo the input gain the sampler applies before the network
  const double w = eps_per_x_t / (1.0 / std::sqrt(sch.alpha_bar(t) * 2.25 + 1.0 - sch.alpha_bar(t)));
  m.denoiser = MicroNet(2, {}, {{w * Mat::Identity(2, 2), Vec::Zero(2), Activation::Identity}});
  return m;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_SUITE("diffusion_core") {

TEST_CASE("schedule invariants") {
  const auto sch = default_schedule();
  CHECK(sch.alpha_bar(0) == 1.0);
  for (int t = 1; t <= sch.steps(); ++t) {
    CHECK(sch.alpha_bar(t) < sch.alpha_bar(t - 1));
    CHECK(sch.alpha_bar(t) > 0.0);
    CHECK(sch.posterior_var(t) > 0.0);
    CHECK(sch.alpha(t) == doctest::Approx(1.0 - sch.sched_beta(t)));
  }
  CHECK(sch.alpha_bar(sch.steps()) < 1e-4);
  CHECK(sch.posterior_var(1) == sch.posterior_var(2));
  CHECK_THROWS_AS(sch.alpha_bar(201), ContractError);
  CHECK_THROWS_AS(NoiseSchedule::linear(0, 1e-4, 0.02), InputError);
}

TEST_CASE("forward diffusion example: alpha_bar 0.25") {
  // beta = 0.75 gives alpha_bar_1 = 0.25 exactly
  const auto sch = NoiseSchedule::linear(2, 0.75, 0.75);
  const Vec x = forward_diffuse(v2(2, 0), 1, v2(0, 2), sch);
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("t = 0 returns the clean point") {
  const auto sch = default_schedule();
  CHECK(forward_diffuse(v2(3, -1), 0, v2(5, 5), sch) == v2(3, -1));
}

TEST_CASE("zero noise prediction gives mean x_t / sqrt(alpha_t)") {
  const auto sch = default_schedule();
  for (int t : {1, 2, 50, 200}) {
    const auto m = linear_model(sch, 0.0, t);
    const auto mom = posterior_mean_var(m, v2(1.0, -2.0), t, 0);
    CHECK((mom.mean - v2(1.0, -2.0) / std::sqrt(sch.alpha(t))).norm() < 1e-12);
    CHECK(mom.variance[0] == doctest::Approx(sch.posterior_var(t)));
  }
}

TEST_CASE("oracle noise reproduces the true posterior mean") {
  // For x0 = 0 the exact noise is x_t / sqrt(1 - abar_t); the true posterior
  // mean is then sqrt(alpha_t)(1 - abar_{t-1}) / (1 - abar_t) * x_t.
  const auto sch = default_schedule();
  for (int t : {2, 10, 100, 200}) {
    const double ab = sch.alpha_bar(t);
    const auto m = linear_model(sch, 1.0 / std::sqrt(1.0 - ab), t);
    const Vec xt = v2(0.7, -1.3);
    const auto mom = posterior_mean_var(m, xt, t, 0);
    const double coef = std::sqrt(sch.alpha(t)) * (1.0 - sch.alpha_bar(t - 1)) / (1.0 - ab);
    CHECK((mom.mean - coef * xt).norm() < 1e-10);
    // x0 reconstruction is exact as well
    const Vec x0 = (xt - std::sqrt(1.0 - ab) * mom.eps) / std::sqrt(ab);
    CHECK(x0.norm() < 1e-10);
  }
}

TEST_CASE("reverse plans") {
  const auto sch = default_schedule();
  const auto full = reverse_plan(sch, 200, VarianceMode::FixedPosterior);
  REQUIRE(full.size() == 200);
  CHECK(full.front().t == 200);
  CHECK(full.back().t == 1);
  CHECK(full.back().t_prev == 0);
  for (const auto& s : full) {
    CHECK(s.t_prev == s.t - 1);
    CHECK(s.beta == doctest::Approx(sch.sched_beta(s.t)));
  }
  const auto coarse = reverse_plan(sch, 7, VarianceMode::FixedPosterior);
  REQUIRE(coarse.size() == 7);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const int k = 7 - static_cast<int>(i);
    CHECK(coarse[i].t == static_cast<int>(std::lround(k * 200.0 / 7)));
    CHECK(coarse[i].variance > 0.0);
  }
  CHECK(strided_plan(sch, 3, VarianceMode::FixedPosterior).size() == 67);
}

TEST_CASE("variational bound is finite and seed-deterministic") {
  const auto sch = NoiseSchedule::linear(20, 1e-3, 0.5);
  DiffusionModel m;
  m.schedule = sch;
  m.class_conditional = true;
  m.num_classes = 2;
  m.denoiser = MicroNet::make(2, {8}, 2, {4, 2, 20, 1.0}, 3);
  const auto a = vlb_nll(m, v2(0.3, 0.1), 1, 8, 5);
  const auto b = vlb_nll(m, v2(0.3, 0.1), 1, 8, 5);
  CHECK(std::isfinite(a.mean));
  CHECK(a.standard_error >= 0.0);
  CHECK(a.mean == b.mean);
}

}
