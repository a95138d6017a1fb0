#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "trialign/embedding_store.hpp"

namespace trialign {

using MatrixD = Eigen::MatrixXd;

struct CosineStats {
  double matched = 0.0;
  double mismatched = 0.0;
  double margin = 0.0;
};

/// Statistics of S = X Y^T for index-paired rows. ConfigError when N < 2.
CosineStats cosine_stats(const MatrixD& x, const MatrixD& y);

/// Mean angle in degrees between paired rows (cosine clamped to [-1, 1]).
double mad_degrees(const MatrixD& x, const MatrixD& y);

struct DirectionalRetrieval {
  std::map<int, double> recall;  // k -> R@k
  double mrr = 0.0;
};

struct RetrievalResult {
  DirectionalRetrieval x_to_y;
  DirectionalRetrieval y_to_x;
  DirectionalRetrieval macro;
};

/// Rank of the true match among all candidates by cosine similarity.
/// Equal scores order by ascending candidate index.
RetrievalResult retrieval(const MatrixD& x, const MatrixD& y, const std::vector<int>& ks = {1, 5, 10});

/// Normalized residual after rotating centered X onto centered Y with a
/// proper rotation (Kabsch). Normalized by ||Y~||^2, so not symmetric.
double procrustes_disparity(const MatrixD& x, const MatrixD& y);

/// gamma = 1 / (2 * median^2), median over the pooled off-diagonal pairwise
/// distances of both inputs. DataError when the median is zero.
double rbf_gamma(const MatrixD& x, const MatrixD& y);

/// RBF-kernel CKA with the pooled median bandwidth.
double cka_rbf(const MatrixD& x, const MatrixD& y);

/// Mean fraction of shared k nearest neighbours under cosine distance,
/// excluding self. ConfigError when N <= k.
double mutual_knn(const MatrixD& x, const MatrixD& y, int k = 5);

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
};

/// Pearson r and Spearman rho (average ranks on ties) of paired series.
/// ConfigError with fewer than 3 records, DegenerateError on a constant series.
Correlation correlations(const std::vector<std::pair<double, double>>& records);

struct PairMetrics {
  std::string pair;
  std::size_t n = 0;
  std::size_t subsample_n = 0;
  CosineStats cosine;
  RetrievalResult retrieval;
  double procrustes_disparity = 0.0;
  double cka = 0.0;
  double mutual_knn = 0.0;
  double mad_degrees = 0.0;
};

/// Cosine statistics, MAD and retrieval on the full sets; Procrustes, CKA and
/// mutual kNN on one subsample shared by both sides. Inputs must already be
/// L2-normalized.
PairMetrics evaluate_pair(const std::string& pair_name, const MatrixD& x, const MatrixD& y,
                          const SubsampleSpec& subsample = {});

nlohmann::json to_json(const PairMetrics& m);

/// Flat field names and values of a PairMetrics record, in CSV column order.
std::vector<std::string> pair_metric_columns();
std::vector<double> pair_metric_values(const PairMetrics& m);

}  // namespace trialign
