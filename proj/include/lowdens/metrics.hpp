#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lowdens/guidance.hpp"
#include "lowdens/sampler.hpp"

namespace lowdens {

struct Neighbor {
  double distance = 0.0;
  Eigen::Index index = 0;
};

// Exact Euclidean k-NN over a fixed reference set (one point per row).
// Ties are broken by reference index, which keeps results independent of how
// the reference rows are enumerated when distances differ.
class NeighborIndex {
 public:
  explicit NeighborIndex(Mat reference);

  Eigen::Index size() const noexcept { return reference_.rows(); }
  Eigen::Index dim() const noexcept { return reference_.cols(); }
  const Mat& reference() const noexcept { return reference_; }

  // k nearest reference rows to q, ascending; `exclude` skips one reference row.
  std::vector<Neighbor> query(const Vec& q, int k, std::optional<Eigen::Index> exclude = std::nullopt) const;

 private:
  Mat reference_;
};

// How queries relate to the reference set of an index.
enum class QueryMode {
  External,  // queries are separate points
  Self,      // query i is reference row i and is excluded from its own neighbors
};

std::vector<double> avg_knn(const Mat& queries, const NeighborIndex& index, int k = 5,
                            QueryMode mode = QueryMode::External);

struct LofResult {
  std::vector<double> lof;
  // True where a local reachability density hit the 1/epsilon cap (duplicates).
  std::vector<bool> capped;
  bool any_capped = false;
};

inline constexpr double kLrdEpsilon = 1e-12;

// Local outlier factor (Breunig et al.) of each query relative to the
// reference set, k neighbors, reachability distance max(k-dist(o), d(p, o)).
LofResult lof(const Mat& queries, const NeighborIndex& index, int k = 20,
              QueryMode mode = QueryMode::External);

// Reference-side LOF state (k-distances and local reachability densities),
// computed once and reused across query sets.
class LofModel {
 public:
  LofModel(const NeighborIndex& index, int k);
  LofResult score(const Mat& queries, QueryMode mode = QueryMode::External) const;
  const std::vector<double>& k_distance() const noexcept { return kdist_; }
  const std::vector<double>& reference_lrd() const noexcept { return lrd_; }

 private:
  const NeighborIndex& index_;
  int k_;
  std::vector<double> kdist_;
  std::vector<double> lrd_;
  std::vector<bool> capped_;
};

// Fraction of synthetic rows inside the union of k-NN balls of the real rows;
// ball radius is each real point's distance to its k-th nearest real neighbor.
double precision(const Mat& synthetic, const Mat& real, int k = 3);

// Class-aware precision: each synthetic sample is scored against the real
// points of its own class; returns the overall covered fraction.
double class_precision(const Mat& synthetic, const std::vector<int>& synthetic_labels,
                       const Mat& real, const std::vector<int>& real_labels, int k = 3);

// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);

// Average ranks (1-based), ties share the mean rank.
std::vector<double> average_ranks(const std::vector<double>& v);
// Spearman rank correlation; nullopt when either column is constant.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

struct Summary {
  double mean = 0.0;
  std::vector<double> deciles;  // 10%, 20%, ..., 90%
};
Summary summarize(const std::vector<double>& v);
// Linear-interpolated quantile q in [0, 1].
double quantile(std::vector<double> v, double q);

enum class MetricSpace { Embedding, Ambient };
std::string_view to_string(MetricSpace s);

struct DensityParams {
  int knn_k = 5;
  int lof_k = 20;
  MetricSpace space = MetricSpace::Embedding;
};

struct DensityReport {
  MetricSpace space = MetricSpace::Embedding;
  std::vector<double> hardness;
  std::vector<double> avg_knn;
  std::vector<double> lof;
  bool lof_capped = false;
  Summary hardness_summary, avg_knn_summary, lof_summary;
  // KS statistic of each column against the same column on the holdout set.
  double ks_hardness = 0.0, ks_avg_knn = 0.0, ks_lof = 0.0;
};

// Columns of hardness/AvgkNN/LOF for one set of points; AvgkNN and LOF are
// measured against the training reference.
struct MetricColumns {
  std::vector<double> hardness, avg_knn, lof;
  bool lof_capped = false;
};

// Shared precomputation for density reports against one training reference.
class DensityContext {
 public:
  DensityContext(const MicroNet& embedder, const GaussianClassModel& clean_model,
                 const LabeledDataset& train, const LabeledDataset& holdout, DensityParams params);

  MetricColumns columns(const Mat& points, const std::vector<int>& labels) const;
  DensityReport report(const Mat& points, const std::vector<int>& labels) const;
  const MetricColumns& holdout_columns() const noexcept { return holdout_; }
  const DensityParams& params() const noexcept { return params_; }

 private:
  Mat to_space(const Mat& points) const;

  const MicroNet& embedder_;
  const GaussianClassModel& model_;
  DensityParams params_;
  NeighborIndex reference_;
  LofModel lof_model_;
  MetricColumns holdout_;
};

DensityReport density_report(const Mat& samples, const std::vector<int>& labels,
                             const MicroNet& embedder, const GaussianClassModel& clean_model,
                             const LabeledDataset& train, const LabeledDataset& holdout,
                             DensityParams params = {});

struct PairEntry {
  Eigen::Index synthetic = 0;
  Eigen::Index train = 0;
  double distance = 0.0;
};

struct MemorizationReport {
  MetricSpace space = MetricSpace::Embedding;
  std::vector<double> nn_distance;  // per synthetic sample
  double mean_distance = 0.0;
  double holdout_mean_distance = 0.0;
  double ratio = 0.0;  // synthetic mean / holdout mean
  std::vector<PairEntry> top_pairs;  // ascending distance
  std::vector<std::vector<int>> neighbor_labels;  // per sample, k nearest train labels
  std::vector<int> mismatches;  // per sample count of neighbors with a different label
  bool alarm = false;
};

inline constexpr double kMemorizationAlarmRatio = 0.1;

MemorizationReport memorization_report(const Mat& synthetic, const std::vector<int>& synthetic_labels,
                                       const LabeledDataset& train, const LabeledDataset& holdout,
                                       const MicroNet* embedder, int top_p, int neighbor_k = 5,
                                       MetricSpace space = MetricSpace::Embedding);

struct CorrelationReport {
  std::vector<std::string> names;
  std::vector<std::vector<std::optional<double>>> rho;
};

CorrelationReport correlation_report(const std::vector<std::string>& names,
                                     const std::vector<std::vector<double>>& columns);

struct CostRow {
  double threshold = 0.0;
  CostLedger rejection;
  CostLedger guided;
  double speedup = 0.0;  // rejection evaluations / guided evaluations
};

std::vector<CostRow> cost_report(const std::vector<CostLedger>& guided,
                                 const std::vector<CostLedger>& rejection);

// Plain-text serializations: one schema line, then rows.
std::string format_density_report(const DensityReport& r, const std::vector<int>& labels);
std::string format_density_summary(const DensityReport& r, const std::string& name);
std::string format_memorization_report(const MemorizationReport& r);
std::string format_correlation_report(const CorrelationReport& r);
std::string format_cost_report(const std::vector<CostRow>& rows);

}  // namespace lowdens
