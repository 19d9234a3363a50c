#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lowdens/error.hpp"
#include "lowdens/metrics.hpp"
#include "oracles.hpp"

using namespace lowdens;

namespace {

Mat random_points(int n, int d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n01;
  Mat m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = scale * n01(gen);
  return m;
}

Mat lattice(int side) {
  Mat m(side * side, 2);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) m.row(i * side + j) << i, j;
  return m;
}

Mat row(double a, double b) {
  Mat m(1, 2);
  m << a, b;
  return m;
}

LabeledDataset dataset(Mat pts) {
  LabeledDataset ds;
  ds.labels.assign(static_cast<std::size_t>(pts.rows()), 0);
  ds.points = std::move(pts);
  return ds;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("average k-NN distance example") {
  Mat ref(3, 2);
  ref << 1, 0, 0, 1, 3, 3;
  NeighborIndex idx(ref);
  CHECK(avg_knn(row(0, 0), idx, 2)[0] == 1.0);
}

TEST_CASE("self mode excludes the query point") {
  Mat ref(3, 2);
  ref << 0, 0, 1, 0, 3, 0;
  NeighborIndex idx(ref);
  const auto self = avg_knn(ref, idx, 1, QueryMode::Self);
  CHECK(self[0] == 1.0);
  CHECK(self[1] == 1.0);
  CHECK(self[2] == 2.0);
  CHECK(avg_knn(ref, idx, 1)[0] == 0.0);
}

TEST_CASE("k-NN and LOF agree with brute force") {
  const Mat ref = random_points(200, 3, 1);
  const Mat q = random_points(100, 3, 2, 1.5);
  NeighborIndex idx(ref);
  for (int k : {1, 5, 20}) {
    const auto a = avg_knn(q, idx, k);
    const auto b = oracle::avg_knn(q, ref, k, false);
    const auto s = avg_knn(ref, idx, k, QueryMode::Self);
    const auto sb = oracle::avg_knn(ref, ref, k, true);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == sb[i]);
    const auto l = lof(q, idx, k).lof;
    const auto lb = oracle::lof(q, ref, k, false);
    for (std::size_t i = 0; i < l.size(); ++i) CHECK(std::abs(l[i] - lb[i]) < 1e-9);
    const auto ls = LofModel(idx, k).score(ref, QueryMode::Self).lof;
    const auto lsb = oracle::lof(ref, ref, k, true);
    for (std::size_t i = 0; i < ls.size(); ++i) CHECK(std::abs(ls[i] - lsb[i]) < 1e-9);
  }
}

TEST_CASE("LOF on a 1-D lattice and for an outlier") {
  Mat line(60, 2);
  for (int i = 0; i < 60; ++i) line.row(i) << i, 0;
  NeighborIndex idx(line);
  // interior points: far enough from both ends that every neighborhood is symmetric
  const auto self = lof(line, idx, 6, QueryMode::Self).lof;
  for (int i = 12; i < 48; ++i) {
    CHECK(self[static_cast<std::size_t>(i)] >= 0.9);
    CHECK(self[static_cast<std::size_t>(i)] <= 1.1);
  }

  Mat cluster = random_points(40, 2, 21, 0.1);
  Mat with_outlier(41, 2);
  with_outlier << cluster, row(5, 5);
  NeighborIndex c(with_outlier);
  const auto l = lof(with_outlier, c, 10, QueryMode::Self).lof;
  CHECK(l[40] > 1.5);
  double mean_cluster = 0.0;
  for (int i = 0; i < 40; ++i) mean_cluster += l[static_cast<std::size_t>(i)] / 40.0;
  CHECK(mean_cluster == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("duplicate references cap the density") {
  Mat ref = Mat::Zero(6, 2);
  ref.row(5) << 1, 1;
  NeighborIndex idx(ref);
  const auto r = lof(row(0, 0), idx, 3);
  CHECK(r.any_capped);
  CHECK(std::isfinite(r.lof[0]));
}

TEST_CASE("precision examples") {
  const Mat real = random_points(80, 2, 3);
  CHECK(precision(real, real, 3) == 1.0);
  CHECK(precision(real.array() + 100.0, real, 3) == 0.0);
  Mat half(80, 2);
  half << real.topRows(40), real.topRows(40).array() + 100.0;
  CHECK(precision(half, real, 3) == 0.5);
  const Mat synth = random_points(50, 2, 4, 1.3);
  CHECK(precision(synth, real, 3) == doctest::Approx(oracle::precision(synth, real, 3)));
}

TEST_CASE("precision does not increase as samples move away") {
  const Mat real = random_points(100, 2, 5);
  const Mat synth = random_points(100, 2, 6);
  double last = 2.0;
  for (double shift : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double p = precision(synth.array() + shift, real, 3);
    CHECK(p <= last);
    last = p;
  }
}

TEST_CASE("class precision scores each class against its own reals") {
  Mat real(4, 2), synth(2, 2);
  real << 0, 0, 0, 1, 10, 0, 10, 1;
  synth << 0, 0.5, 0, 0.5;
  CHECK(class_precision(synth, {0, 1}, real, {0, 0, 1, 1}, 1) == 0.5);
}

TEST_CASE("rank statistics") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 9, 16, 30};
  const std::vector<double> down{5, 3, 2, 1, -4};
  CHECK(*spearman(a, up) == doctest::Approx(1.0));
  CHECK(*spearman(a, down) == doctest::Approx(-1.0));
  CHECK_FALSE(spearman(a, {1, 1, 1, 1, 1}).has_value());
  CHECK(average_ranks({3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});
  std::mt19937_64 gen(8);
  std::normal_distribution<double> n01;
  std::vector<double> x(40), y(40);
  for (int i = 0; i < 40; ++i) {
    x[static_cast<std::size_t>(i)] = std::round(3 * n01(gen));
    y[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + n01(gen);
  }
  CHECK(*spearman(x, y) == doctest::Approx(*oracle::spearman(x, y)).epsilon(1e-12));
  // permuting rows jointly leaves the statistic unchanged
  std::vector<std::size_t> perm(40);
  for (std::size_t i = 0; i < 40; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), gen);
  std::vector<double> xp, yp;
  for (auto i : perm) {
    xp.push_back(x[i]);
    yp.push_back(y[i]);
  }
  CHECK(*spearman(xp, yp) == doctest::Approx(*spearman(x, y)).epsilon(1e-12));
}

TEST_CASE("correlation report") {
  std::vector<double> a(100), b(100);
  std::mt19937_64 gen(13);
  std::normal_distribution<double> n01;
  for (auto& v : a) v = n01(gen);
  for (std::size_t i = 0; i < 100; ++i) b[i] = a[i] + 0.5 * n01(gen);
  std::vector<double> neg(100);
  for (std::size_t i = 0; i < 100; ++i) neg[i] = -a[i];
  const auto r = correlation_report({"a", "b", "neg"}, {a, b, neg});
  CHECK(*r.rho[0][0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*r.rho[0][2] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(std::abs(*r.rho[0][1] - *oracle::spearman(a, b)) < 1e-12);
  CHECK(*r.rho[1][0] == *r.rho[0][1]);
}

TEST_CASE("density report of the holdout against itself") {
  const MicroNet emb = MicroNet::make(2, {8, 4}, 2, {4, 0, 20, 1.0}, 3, 1);
  LabeledDataset train, holdout;
  train.points = random_points(120, 2, 14);
  holdout.points = random_points(60, 2, 15);
  train.labels.assign(120, 0);
  holdout.labels.assign(60, 0);
  for (std::size_t i = 60; i < 120; ++i) train.labels[i] = 1;
  for (std::size_t i = 30; i < 60; ++i) holdout.labels[i] = 1;
  const auto model = fit_gaussians({embed(emb, train.points.topRows(60), 0.0), embed(emb, train.points.bottomRows(60), 0.0)}, 0, false);
  const auto r = density_report(holdout.points, holdout.labels, emb, model, train, holdout);
  CHECK(r.ks_hardness < 0.05);
  CHECK(r.ks_avg_knn < 0.05);
  CHECK(r.ks_lof < 0.05);
  const auto again = density_report(holdout.points, holdout.labels, emb, model, train, holdout);
  CHECK(again.hardness == r.hardness);
  CHECK(again.lof == r.lof);
}

TEST_CASE("KS statistic and quantiles") {
  CHECK(ks_statistic({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(ks_statistic({1, 2, 3}, {10, 11}) == 1.0);
  CHECK(ks_statistic({1, 2, 3, 4}, {3, 4, 5, 6}) == doctest::Approx(0.5));
  CHECK(quantile({1, 2, 3, 4, 5}, 0.5) == 3.0);
  CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == 2.0);
  CHECK(quantile({0, 10}, 0.9) == doctest::Approx(9.0));
}

TEST_CASE("permutation invariance of neighbor metrics") {
  const Mat ref = random_points(60, 2, 9);
  const Mat q = random_points(10, 2, 10);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(60);
  p.setIdentity();
  std::mt19937_64 gen(1);
  std::shuffle(p.indices().data(), p.indices().data() + 60, gen);
  const Mat shuffled = p * ref;
  NeighborIndex a(ref), b(shuffled);
  const auto la = lof(q, a, 7).lof, lb = lof(q, b, 7).lof;
  const auto ka = avg_knn(q, a, 5), kb = avg_knn(q, b, 5);
  for (int i = 0; i < 10; ++i) {
    CHECK(la[static_cast<std::size_t>(i)] == doctest::Approx(lb[static_cast<std::size_t>(i)]).epsilon(1e-12));
    CHECK(ka[static_cast<std::size_t>(i)] == doctest::Approx(kb[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
  CHECK(precision(q, ref, 3) == precision(q, shuffled, 3));
}

TEST_CASE("memorization check") {
  const auto train = dataset(random_points(200, 2, 11));
  const auto holdout = dataset(random_points(100, 2, 12));
  SUBCASE("planted copies raise the alarm") {
    const Mat copies = train.points.topRows(50);
    const auto r = memorization_report(copies, std::vector<int>(50, 0), train, holdout, nullptr, 5, 5,
                                       MetricSpace::Ambient);
    CHECK(r.mean_distance == 0.0);
    CHECK(r.alarm);
    REQUIRE(r.top_pairs.size() == 5);
    CHECK(r.top_pairs[0].distance == 0.0);
    CHECK(r.top_pairs[0].train == r.top_pairs[0].synthetic);
  }
  SUBCASE("the holdout itself scores about 1") {
    const auto r = memorization_report(holdout.points, holdout.labels, train, holdout, nullptr, 5, 5,
                                       MetricSpace::Ambient);
    CHECK(r.ratio == doctest::Approx(1.0));
    CHECK_FALSE(r.alarm);
    for (int m : r.mismatches) CHECK(m == 0);
  }
}

TEST_CASE("cost report speedup") {
  CostLedger g{1.0, 10, 12, 10, 1200, 400, true};
  CostLedger r{1.0, 10, 100, 10, 10000, 0, true};
  const auto rows = cost_report({g}, {r});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].speedup == doctest::Approx(10000.0 / 1200.0));
}

}
