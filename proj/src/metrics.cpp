#include "lowdens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lowdens/error.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

NeighborIndex::NeighborIndex(Mat reference) : reference_(std::move(reference)) {}

std::vector<Neighbor> NeighborIndex::query(const Vec& q, int k, std::optional<Eigen::Index> exclude) const {
  if (q.size() != dim()) throw ContractError("neighbor query: dimension mismatch");
  const Eigen::Index available = size() - (exclude ? 1 : 0);
  if (k < 1 || k > available) {
    throw InputError("neighbor query: need more than k = " + std::to_string(k) + " reference points, have " +
                     std::to_string(size()));
  }
  std::vector<std::pair<double, Eigen::Index>> d2;
  d2.reserve(static_cast<std::size_t>(size()));
  for (Eigen::Index i = 0; i < size(); ++i) {
    if (exclude && *exclude == i) continue;
    d2.emplace_back((reference_.row(i).transpose() - q).squaredNorm(), i);
  }
  auto kth = d2.begin() + (k - 1);
  std::nth_element(d2.begin(), kth, d2.end());
  std::sort(d2.begin(), kth + 1);
  std::vector<Neighbor> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    out.push_back({std::sqrt(d2[static_cast<std::size_t>(j)].first), d2[static_cast<std::size_t>(j)].second});
  }
  return out;
}

namespace {

void check_k(const NeighborIndex& index, int k, QueryMode mode, const char* what) {
  const Eigen::Index need = static_cast<Eigen::Index>(k) + (mode == QueryMode::Self ? 1 : 0);
  if (k < 1 || index.size() < need || index.size() <= k) {
    throw InputError(std::string(what) + ": reference set of " + std::to_string(index.size()) +
                     " points is too small for k = " + std::to_string(k));
  }
}

std::optional<Eigen::Index> excluded(QueryMode mode, Eigen::Index i) {
  return mode == QueryMode::Self ? std::optional<Eigen::Index>(i) : std::nullopt;
}

}  // namespace

std::vector<double> avg_knn(const Mat& queries, const NeighborIndex& index, int k, QueryMode mode) {
  check_k(index, k, mode, "avg_knn");
  if (mode == QueryMode::Self && queries.rows() != index.size()) {
    throw ContractError("avg_knn: self mode requires the reference set as queries");
  }
  std::vector<double> out(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    const auto nn = index.query(queries.row(i).transpose(), k, excluded(mode, i));
    double s = 0.0;
    for (const auto& n : nn) s += n.distance;
    out[static_cast<std::size_t>(i)] = s / k;
  }
  return out;
}

LofModel::LofModel(const NeighborIndex& index, int k) : index_(index), k_(k) {
  check_k(index, k, QueryMode::Self, "lof");
  const auto m = static_cast<std::size_t>(index.size());
  std::vector<std::vector<Neighbor>> nn(m);
  kdist_.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    nn[i] = index.query(index.reference().row(static_cast<Eigen::Index>(i)).transpose(), k,
                        static_cast<Eigen::Index>(i));
    kdist_[i] = nn[i].back().distance;
  }
  lrd_.resize(m);
  capped_.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    double reach = 0.0;
    for (const auto& n : nn[i]) reach += std::max(kdist_[static_cast<std::size_t>(n.index)], n.distance);
    reach /= k;
    capped_[i] = reach < kLrdEpsilon;
    lrd_[i] = 1.0 / std::max(reach, kLrdEpsilon);
  }
}

LofResult LofModel::score(const Mat& queries, QueryMode mode) const {
  if (mode == QueryMode::Self && queries.rows() != index_.size()) {
    throw ContractError("lof: self mode requires the reference set as queries");
  }
  LofResult out;
  out.lof.resize(static_cast<std::size_t>(queries.rows()));
  out.capped.resize(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    const auto nn = index_.query(queries.row(i).transpose(), k_, excluded(mode, i));
    double reach = 0.0, neighbor_lrd = 0.0;
    bool capped = false;
    for (const auto& n : nn) {
      const auto j = static_cast<std::size_t>(n.index);
      reach += std::max(kdist_[j], n.distance);
      neighbor_lrd += lrd_[j];
      capped = capped || capped_[j];
    }
    reach /= k_;
    neighbor_lrd /= k_;
    capped = capped || reach < kLrdEpsilon;
    const double own = 1.0 / std::max(reach, kLrdEpsilon);
    out.lof[static_cast<std::size_t>(i)] = neighbor_lrd / own;
    out.capped[static_cast<std::size_t>(i)] = capped;
    out.any_capped = out.any_capped || capped;
  }
  return out;
}

LofResult lof(const Mat& queries, const NeighborIndex& index, int k, QueryMode mode) {
  return LofModel(index, k).score(queries, mode);
}

double precision(const Mat& synthetic, const Mat& real, int k) {
  if (synthetic.rows() == 0 || real.rows() == 0) throw InputError("precision: empty input set");
  if (synthetic.cols() != real.cols()) throw ContractError("precision: dimension mismatch");
  const NeighborIndex index(real);
  check_k(index, k, QueryMode::Self, "precision");
  Vec radius2(real.rows());
  for (Eigen::Index j = 0; j < real.rows(); ++j) {
    const double r = index.query(real.row(j).transpose(), k, j).back().distance;
    radius2[j] = r * r;
  }
  Eigen::Index covered = 0;
  for (Eigen::Index i = 0; i < synthetic.rows(); ++i) {
    for (Eigen::Index j = 0; j < real.rows(); ++j) {
      if ((synthetic.row(i) - real.row(j)).squaredNorm() <= radius2[j]) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(synthetic.rows());
}

double class_precision(const Mat& synthetic, const std::vector<int>& synthetic_labels, const Mat& real,
                       const std::vector<int>& real_labels, int k) {
  if (synthetic.rows() == 0) throw InputError("precision: empty synthetic set");
  int classes = 0;
  for (int y : synthetic_labels) classes = std::max(classes, y + 1);
  double covered = 0.0;
  for (int y = 0; y < classes; ++y) {
    std::vector<Eigen::Index> s_rows, r_rows;
    for (std::size_t i = 0; i < synthetic_labels.size(); ++i)
      if (synthetic_labels[i] == y) s_rows.push_back(static_cast<Eigen::Index>(i));
    if (s_rows.empty()) continue;
    for (std::size_t i = 0; i < real_labels.size(); ++i)
      if (real_labels[i] == y) r_rows.push_back(static_cast<Eigen::Index>(i));
    if (r_rows.empty()) continue;  // nothing real to be covered by
    Mat s(static_cast<Eigen::Index>(s_rows.size()), synthetic.cols());
    Mat r(static_cast<Eigen::Index>(r_rows.size()), real.cols());
    for (std::size_t i = 0; i < s_rows.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = synthetic.row(s_rows[i]);
    for (std::size_t i = 0; i < r_rows.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = real.row(r_rows[i]);
    covered += precision(s, r, k) * static_cast<double>(s_rows.size());
  }
  return covered / static_cast<double>(synthetic.rows());
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InputError("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() || j < b.size()) {
    double x;
    if (j >= b.size() || (i < a.size() && a[i] <= b[j])) {
      x = a[i];
    } else {
      x = b[j];
    }
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
  std::vector<double> rank(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) rank[order[m]] = r;
    i = j + 1;
  }
  return rank;
}

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractError("spearman: columns have different lengths");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw InputError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (int i = 1; i <= 9; ++i) s.deciles.push_back(quantile(v, i / 10.0));
  return s;
}

std::string_view to_string(MetricSpace s) { return s == MetricSpace::Embedding ? "embedding" : "ambient"; }

DensityContext::DensityContext(const MicroNet& embedder, const GaussianClassModel& clean_model,
                               const LabeledDataset& train, const LabeledDataset& holdout,
                               DensityParams params)
    : embedder_(embedder),
      model_(clean_model),
      params_(params),
      reference_(params.space == MetricSpace::Embedding ? embed(embedder, train.points, 0.0) : train.points),
      lof_model_(reference_, params.lof_k) {
  holdout_ = columns(holdout.points, holdout.labels);
}

Mat DensityContext::to_space(const Mat& points) const {
  return params_.space == MetricSpace::Embedding ? embed(embedder_, points, 0.0) : points;
}

MetricColumns DensityContext::columns(const Mat& points, const std::vector<int>& labels) const {
  if (static_cast<Eigen::Index>(labels.size()) != points.rows()) {
    throw ContractError("density: label count mismatch");
  }
  MetricColumns c;
  const Mat emb = embed(embedder_, points, 0.0);
  c.hardness.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    c.hardness[i] = hardness_score(model_, emb.row(static_cast<Eigen::Index>(i)).transpose(), labels[i]);
  }
  const Mat q = params_.space == MetricSpace::Embedding ? emb : points;
  c.avg_knn = avg_knn(q, reference_, params_.knn_k);
  auto l = lof_model_.score(q);
  c.lof = std::move(l.lof);
  c.lof_capped = l.any_capped;
  return c;
}

DensityReport DensityContext::report(const Mat& points, const std::vector<int>& labels) const {
  auto c = columns(points, labels);
  DensityReport r;
  r.space = params_.space;
  r.hardness = std::move(c.hardness);
  r.avg_knn = std::move(c.avg_knn);
  r.lof = std::move(c.lof);
  r.lof_capped = c.lof_capped;
  r.hardness_summary = summarize(r.hardness);
  r.avg_knn_summary = summarize(r.avg_knn);
  r.lof_summary = summarize(r.lof);
  r.ks_hardness = ks_statistic(r.hardness, holdout_.hardness);
  r.ks_avg_knn = ks_statistic(r.avg_knn, holdout_.avg_knn);
  r.ks_lof = ks_statistic(r.lof, holdout_.lof);
  return r;
}

DensityReport density_report(const Mat& samples, const std::vector<int>& labels, const MicroNet& embedder,
                             const GaussianClassModel& clean_model, const LabeledDataset& train,
                             const LabeledDataset& holdout, DensityParams params) {
  return DensityContext(embedder, clean_model, train, holdout, params).report(samples, labels);
}

MemorizationReport memorization_report(const Mat& synthetic, const std::vector<int>& synthetic_labels,
                                       const LabeledDataset& train, const LabeledDataset& holdout,
                                       const MicroNet* embedder, int top_p, int neighbor_k,
                                       MetricSpace space) {
  if (synthetic.rows() == 0 || train.size() == 0 || holdout.size() == 0) {
    throw InputError("memorization: all sets must be nonempty");
  }
  if (static_cast<Eigen::Index>(synthetic_labels.size()) != synthetic.rows()) {
    throw ContractError("memorization: label count mismatch");
  }
  if (space == MetricSpace::Embedding && !embedder) {
    throw ContractError("memorization: embedding space needs an embedder");
  }
  auto to_space = [&](const Mat& p) { return space == MetricSpace::Embedding ? embed(*embedder, p, 0.0) : p; };
  const NeighborIndex index(to_space(train.points));
  const Mat syn = to_space(synthetic);
  const Mat hold = to_space(holdout.points);
  const int k = std::max(1, neighbor_k);

  MemorizationReport r;
  r.space = space;
  r.nn_distance.resize(static_cast<std::size_t>(syn.rows()));
  r.neighbor_labels.resize(static_cast<std::size_t>(syn.rows()));
  r.mismatches.resize(static_cast<std::size_t>(syn.rows()));
  std::vector<PairEntry> pairs;
  for (Eigen::Index i = 0; i < syn.rows(); ++i) {
    const auto nn = index.query(syn.row(i).transpose(), std::min<int>(k, static_cast<int>(index.size())));
    const auto si = static_cast<std::size_t>(i);
    r.nn_distance[si] = nn.front().distance;
    pairs.push_back({i, nn.front().index, nn.front().distance});
    for (const auto& n : nn) {
      const int lbl = train.labels[static_cast<std::size_t>(n.index)];
      r.neighbor_labels[si].push_back(lbl);
      if (lbl != synthetic_labels[si]) ++r.mismatches[si];
    }
  }
  r.mean_distance = std::accumulate(r.nn_distance.begin(), r.nn_distance.end(), 0.0) /
                    static_cast<double>(r.nn_distance.size());
  double hsum = 0.0;
  for (Eigen::Index i = 0; i < hold.rows(); ++i) hsum += index.query(hold.row(i).transpose(), 1).front().distance;
  r.holdout_mean_distance = hsum / static_cast<double>(hold.rows());
  r.ratio = r.holdout_mean_distance > 0.0 ? r.mean_distance / r.holdout_mean_distance : 0.0;
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const PairEntry& a, const PairEntry& b) { return a.distance < b.distance; });
  if (top_p < static_cast<int>(pairs.size())) pairs.resize(static_cast<std::size_t>(std::max(0, top_p)));
  r.top_pairs = std::move(pairs);
  r.alarm = r.ratio < kMemorizationAlarmRatio;
  return r;
}

CorrelationReport correlation_report(const std::vector<std::string>& names,
                                     const std::vector<std::vector<double>>& columns) {
  if (names.size() != columns.size()) throw ContractError("correlation: names and columns disagree");
  for (const auto& c : columns) {
    if (c.size() != columns.front().size()) throw ContractError("correlation: columns not aligned");
  }
  if (!columns.empty() && columns.front().size() < 30) {
    throw InputError("correlation: need at least 30 samples");
  }
  CorrelationReport r;
  r.names = names;
  r.rho.assign(columns.size(), std::vector<std::optional<double>>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) r.rho[i][j] = spearman(columns[i], columns[j]);
  }
  return r;
}

std::vector<CostRow> cost_report(const std::vector<CostLedger>& guided, const std::vector<CostLedger>& rejection) {
  if (guided.size() != rejection.size()) throw ContractError("cost report: ledger lists differ in length");
  std::vector<CostRow> rows;
  for (std::size_t i = 0; i < guided.size(); ++i) {
    if (guided[i].quota != rejection[i].quota) throw ContractError("cost report: quotas differ");
    CostRow row;
    row.threshold = rejection[i].threshold;
    row.rejection = rejection[i];
    row.guided = guided[i];
    row.speedup = guided[i].denoiser_evaluations > 0
                      ? static_cast<double>(rejection[i].denoiser_evaluations) /
                            static_cast<double>(guided[i].denoiser_evaluations)
                      : 0.0;
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string fmt(double v) { return format_double(v); }

std::string fmt_opt(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

void summary_line(std::ostringstream& out, const std::string& name, const std::string& metric,
                  const Summary& s, double ks) {
  out << "summary\t" << name << '\t' << metric << "\tmean=" << fmt(s.mean);
  for (std::size_t i = 0; i < s.deciles.size(); ++i) out << "\tq" << (i + 1) * 10 << '=' << fmt(s.deciles[i]);
  out << "\tks_vs_holdout=" << fmt(ks) << '\n';
}

}  // namespace

std::string format_density_report(const DensityReport& r, const std::vector<int>& labels) {
  std::ostringstream out;
  out << "# index\tlabel\thardness\tavg_knn\tlof\t(space=" << to_string(r.space) << ")\n";
  for (std::size_t i = 0; i < r.hardness.size(); ++i) {
    out << i << '\t' << (i < labels.size() ? labels[i] : -1) << '\t' << fmt(r.hardness[i]) << '\t'
        << fmt(r.avg_knn[i]) << '\t' << fmt(r.lof[i]) << '\n';
  }
  return out.str();
}

std::string format_density_summary(const DensityReport& r, const std::string& name) {
  std::ostringstream out;
  summary_line(out, name, "hardness", r.hardness_summary, r.ks_hardness);
  summary_line(out, name, "avg_knn", r.avg_knn_summary, r.ks_avg_knn);
  summary_line(out, name, "lof", r.lof_summary, r.ks_lof);
  if (r.lof_capped) out << "flag\t" << name << "\tlof_lrd_capped\n";
  return out.str();
}

std::string format_memorization_report(const MemorizationReport& r) {
  std::ostringstream out;
  out << "# index\tnn_distance\tmismatches\tneighbor_labels\t(space=" << to_string(r.space) << ")\n";
  for (std::size_t i = 0; i < r.nn_distance.size(); ++i) {
    out << i << '\t' << fmt(r.nn_distance[i]) << '\t' << r.mismatches[i] << '\t';
    for (std::size_t j = 0; j < r.neighbor_labels[i].size(); ++j) {
      out << (j ? "," : "") << r.neighbor_labels[i][j];
    }
    out << '\n';
  }
  out << "summary\tmean_nn_distance=" << fmt(r.mean_distance)
      << "\tholdout_mean_nn_distance=" << fmt(r.holdout_mean_distance) << "\tratio=" << fmt(r.ratio) << '\n';
  for (const auto& p : r.top_pairs) {
    out << "pair\tsynthetic=" << p.synthetic << "\ttrain=" << p.train << "\tdistance=" << fmt(p.distance) << '\n';
  }
  if (r.alarm) out << "ALARM\tmemorization suspected: ratio " << fmt(r.ratio) << " < " << fmt(kMemorizationAlarmRatio) << '\n';
  return out.str();
}

std::string format_correlation_report(const CorrelationReport& r) {
  std::ostringstream out;
  out << "# metric";
  for (const auto& n : r.names) out << '\t' << n;
  out << "\t(spearman)\n";
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    out << r.names[i];
    for (std::size_t j = 0; j < r.names.size(); ++j) out << '\t' << fmt_opt(r.rho[i][j]);
    out << '\n';
  }
  return out.str();
}

std::string format_cost_report(const std::vector<CostRow>& rows) {
  std::ostringstream out;
  out << "# threshold\tquota\trejection_draws\trejection_evaluations\tguided_draws\tguided_evaluations\t"
         "guided_guidance_evaluations\tspeedup\trejection_quota_met\tguided_quota_met\n";
  for (const auto& r : rows) {
    out << fmt(r.threshold) << '\t' << r.rejection.quota << '\t' << r.rejection.draws << '\t'
        << r.rejection.denoiser_evaluations << '\t' << r.guided.draws << '\t' << r.guided.denoiser_evaluations
        << '\t' << r.guided.guidance_evaluations << '\t' << fmt(r.speedup) << '\t'
        << (r.rejection.quota_met ? 1 : 0) << '\t' << (r.guided.quota_met ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace lowdens
