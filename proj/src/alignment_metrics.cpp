#include "trialign/alignment_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "trialign/errors.hpp"

namespace trialign {
namespace {

constexpr Eigen::Index kBlockRows = 1024;

void require_paired(const MatrixD& x, const MatrixD& y, const char* what) {
  if (x.rows() != y.rows()) {
    throw ShapeError(std::string(what) + ": inputs must have the same number of rows");
  }
}

void require_same_dim(const MatrixD& x, const MatrixD& y, const char* what) {
  require_paired(x, y, what);
  if (x.cols() != y.cols()) {
    throw ShapeError(std::string(what) + ": inputs must share a dimension (" +
                     std::to_string(x.cols()) + " vs " + std::to_string(y.cols()) + ")");
  }
}

MatrixD unit_rows(const MatrixD& m) {
  Eigen::VectorXd norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) throw DataError("zero row " + std::to_string(i) + " has no direction");
  }
  return norms.cwiseInverse().asDiagonal() * m;
}

// 1-based rank of candidate `target` in `scores` under (score desc, index asc).
std::size_t rank_of(const Eigen::Ref<const Eigen::RowVectorXd>& scores, Eigen::Index target) {
  const double s = scores(target);
  std::size_t rank = 1;
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    if (scores(j) > s || (scores(j) == s && j < target)) ++rank;
  }
  return rank;
}

DirectionalRetrieval rank_direction(const MatrixD& queries, const MatrixD& candidates,
                                    const std::vector<int>& ks) {
  const Eigen::Index n = queries.rows();
  std::vector<std::size_t> hits(ks.size(), 0);
  double reciprocal = 0.0;
  for (Eigen::Index start = 0; start < n; start += kBlockRows) {
    const Eigen::Index rows = std::min(kBlockRows, n - start);
    const MatrixD block = queries.middleRows(start, rows) * candidates.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const std::size_t rank = rank_of(block.row(r), start + r);
      reciprocal += 1.0 / static_cast<double>(rank);
      for (std::size_t k = 0; k < ks.size(); ++k) {
        if (rank <= static_cast<std::size_t>(ks[k])) ++hits[k];
      }
    }
  }
  DirectionalRetrieval out;
  for (std::size_t k = 0; k < ks.size(); ++k) {
    out.recall[ks[k]] = static_cast<double>(hits[k]) / static_cast<double>(n);
  }
  out.mrr = reciprocal / static_cast<double>(n);
  return out;
}

// Indices of the k most similar rows to each row (self excluded), sorted.
std::vector<std::vector<Eigen::Index>> neighbour_sets(const MatrixD& m, int k) {
  const MatrixD unit = unit_rows(m);
  const Eigen::Index n = unit.rows();
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n - 1));
  for (Eigen::Index start = 0; start < n; start += kBlockRows) {
    const Eigen::Index rows = std::min(kBlockRows, n - start);
    const MatrixD sim = unit.middleRows(start, rows) * unit.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Eigen::Index i = start + r;
      std::size_t w = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != i) order[w++] = j;
      }
      const auto row = sim.row(r);
      std::partial_sort(order.begin(), order.begin() + k, order.end(),
                        [&row](Eigen::Index a, Eigen::Index b) {
                          return row(a) > row(b) || (row(a) == row(b) && a < b);
                        });
      auto& set = out[static_cast<std::size_t>(i)];
      set.assign(order.begin(), order.begin() + k);
      std::sort(set.begin(), set.end());
    }
  }
  return out;
}

// Pairwise Euclidean distances i < j.
void pairwise_distances(const MatrixD& m, std::vector<double>& out) {
  const Eigen::VectorXd sq = m.rowwise().squaredNorm();
  const MatrixD gram = m * m.transpose();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.rows(); ++j) {
      out.push_back(std::sqrt(std::max(0.0, sq(i) + sq(j) - 2.0 * gram(i, j))));
    }
  }
}

MatrixD centered_rbf_kernel(const MatrixD& m, double gamma) {
  const Eigen::VectorXd sq = m.rowwise().squaredNorm();
  MatrixD k = m * m.transpose();
  for (Eigen::Index j = 0; j < k.cols(); ++j) {
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      const double d2 = i == j ? 0.0 : std::max(0.0, sq(i) + sq(j) - 2.0 * k(i, j));
      k(i, j) = std::exp(-gamma * d2);
    }
  }
  // H K H with H = I - 11^T/N, written as row/column mean removal.
  const Eigen::VectorXd col_mean = k.colwise().mean().transpose();
  const Eigen::VectorXd row_mean = k.rowwise().mean();
  const double grand = k.mean();
  k.colwise() -= row_mean;
  k.rowwise() -= col_mean.transpose();
  k.array() += grand;
  return k;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b, const char* label) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) {
    throw DegenerateError(std::string(label) + ": correlation undefined for a constant series");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace

CosineStats cosine_stats(const MatrixD& x, const MatrixD& y) {
  require_same_dim(x, y, "cosine_stats");
  const Eigen::Index n = x.rows();
  if (n < 2) throw ConfigError("cosine_stats needs at least 2 pairs");
  // Off-diagonal row sums via the column sums of Y, so no N x N matrix is needed.
  const Eigen::RowVectorXd y_sum = y.colwise().sum();
  double diag = 0.0, off = 0.0, margin = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sii = x.row(i).dot(y.row(i));
    const double row_off = x.row(i).dot(y_sum) - sii;
    diag += sii;
    off += row_off;
    margin += sii - row_off / static_cast<double>(n - 1);
  }
  const double nd = static_cast<double>(n);
  return {diag / nd, off / (nd * (nd - 1.0)), margin / nd};
}

double mad_degrees(const MatrixD& x, const MatrixD& y) {
  require_same_dim(x, y, "mad");
  if (x.rows() == 0) throw ConfigError("mad needs at least one pair");
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double c = std::clamp(x.row(i).dot(y.row(i)), -1.0, 1.0);
    total += std::acos(c);
  }
  return total / static_cast<double>(x.rows()) * 180.0 / std::numbers::pi;
}

RetrievalResult retrieval(const MatrixD& x, const MatrixD& y, const std::vector<int>& ks) {
  require_same_dim(x, y, "retrieval");
  if (ks.empty()) throw ConfigError("retrieval needs at least one k");
  const int max_k = *std::max_element(ks.begin(), ks.end());
  if (*std::min_element(ks.begin(), ks.end()) < 1) throw ConfigError("retrieval k must be >= 1");
  if (x.rows() < max_k) {
    throw ConfigError("retrieval needs N >= " + std::to_string(max_k) + ", got " +
                      std::to_string(x.rows()));
  }
  const MatrixD ux = unit_rows(x);
  const MatrixD uy = unit_rows(y);
  RetrievalResult out;
  out.x_to_y = rank_direction(ux, uy, ks);
  out.y_to_x = rank_direction(uy, ux, ks);
  for (int k : ks) out.macro.recall[k] = 0.5 * (out.x_to_y.recall[k] + out.y_to_x.recall[k]);
  out.macro.mrr = 0.5 * (out.x_to_y.mrr + out.y_to_x.mrr);
  return out;
}

double procrustes_disparity(const MatrixD& x, const MatrixD& y) {
  require_same_dim(x, y, "procrustes_disparity");
  if (x.rows() == 0) throw ConfigError("procrustes_disparity needs at least one pair");
  const MatrixD xc = x.rowwise() - x.colwise().mean();
  const MatrixD yc = y.rowwise() - y.colwise().mean();
  const double denom = yc.squaredNorm();
  if (!(denom > 0.0)) throw DataError("procrustes_disparity: target has zero spread");

  Eigen::BDCSVD<MatrixD> svd(xc.transpose() * yc, Eigen::ComputeFullU | Eigen::ComputeFullV);
  MatrixD v = svd.matrixV();
  const MatrixD& u = svd.matrixU();
  // Singular values are sorted descending, so the last column pairs with the
  // smallest one; flipping it yields the best proper rotation.
  if ((u * v.transpose()).determinant() < 0.0) v.col(v.cols() - 1) *= -1.0;
  const MatrixD rotation = u * v.transpose();
  return (xc * rotation - yc).squaredNorm() / denom;
}

double rbf_gamma(const MatrixD& x, const MatrixD& y) {
  require_paired(x, y, "rbf_gamma");
  std::vector<double> dists;
  const auto n = static_cast<std::size_t>(x.rows());
  dists.reserve(n * (n - 1));
  pairwise_distances(x, dists);
  pairwise_distances(y, dists);
  if (dists.empty()) throw ConfigError("rbf_gamma needs at least 2 points");
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(dists.begin(),
                                               dists.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  if (!(median > 0.0)) throw DataError("rbf_gamma: median pairwise distance is zero");
  return 1.0 / (2.0 * median * median);
}

double cka_rbf(const MatrixD& x, const MatrixD& y) {
  require_paired(x, y, "cka_rbf");
  if (x.rows() < 3) throw ConfigError("cka_rbf needs at least 3 points");
  const double gamma = rbf_gamma(x, y);
  const MatrixD k = centered_rbf_kernel(x, gamma);
  const MatrixD l = centered_rbf_kernel(y, gamma);
  const double kk = k.norm();
  const double ll = l.norm();
  if (kk == 0.0 || ll == 0.0) throw DataError("cka_rbf: centered kernel vanished");
  return std::clamp((k.array() * l.array()).sum() / (kk * ll), 0.0, 1.0);
}

double mutual_knn(const MatrixD& x, const MatrixD& y, int k) {
  require_paired(x, y, "mutual_knn");
  if (k < 1) throw ConfigError("mutual_knn k must be >= 1");
  if (x.rows() <= k) {
    throw ConfigError("mutual_knn needs N > k (N=" + std::to_string(x.rows()) +
                      ", k=" + std::to_string(k) + ")");
  }
  const auto nx = neighbour_sets(x, k);
  const auto ny = neighbour_sets(y, k);
  std::size_t shared = 0;
  std::vector<Eigen::Index> common;
  for (std::size_t i = 0; i < nx.size(); ++i) {
    common.clear();
    std::set_intersection(nx[i].begin(), nx[i].end(), ny[i].begin(), ny[i].end(),
                          std::back_inserter(common));
    shared += common.size();
  }
  return static_cast<double>(shared) / (static_cast<double>(nx.size()) * k);
}

Correlation correlations(const std::vector<std::pair<double, double>>& records) {
  if (records.size() < 3) throw ConfigError("correlations need at least 3 records");
  std::vector<double> a, b;
  for (const auto& [u, v] : records) {
    if (!std::isfinite(u) || !std::isfinite(v)) throw DataError("correlations: non-finite value");
    a.push_back(u);
    b.push_back(v);
  }
  Correlation out;
  out.pearson = pearson(a, b, "pearson");
  out.spearman = pearson(average_ranks(a), average_ranks(b), "spearman");
  return out;
}

PairMetrics evaluate_pair(const std::string& pair_name, const MatrixD& x, const MatrixD& y,
                          const SubsampleSpec& subsample) {
  require_paired(x, y, "evaluate_pair");
  PairMetrics out;
  out.pair = pair_name;
  out.n = static_cast<std::size_t>(x.rows());
  out.cosine = cosine_stats(x, y);
  out.mad_degrees = mad_degrees(x, y);
  out.retrieval = retrieval(x, y);

  const auto idx = subsample_indices(out.n, subsample);
  out.subsample_n = idx.size();
  MatrixD xs(static_cast<Eigen::Index>(idx.size()), x.cols());
  MatrixD ys(static_cast<Eigen::Index>(idx.size()), y.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
    ys.row(static_cast<Eigen::Index>(i)) = y.row(static_cast<Eigen::Index>(idx[i]));
  }
  out.procrustes_disparity = procrustes_disparity(xs, ys);
  out.cka = cka_rbf(xs, ys);
  out.mutual_knn = mutual_knn(xs, ys, 5);
  return out;
}

namespace {

nlohmann::json to_json(const DirectionalRetrieval& r) {
  nlohmann::json j;
  for (const auto& [k, v] : r.recall) j["r@" + std::to_string(k)] = v;
  j["mrr"] = r.mrr;
  return j;
}

}  // namespace

nlohmann::json to_json(const PairMetrics& m) {
  nlohmann::json j;
  j["pair"] = m.pair;
  j["n"] = m.n;
  j["subsample_n"] = m.subsample_n;
  j["cosine"] = {{"matched", m.cosine.matched},
                 {"mismatched", m.cosine.mismatched},
                 {"margin", m.cosine.margin}};
  const auto dash = m.pair.find('-');
  const std::string a = m.pair.substr(0, dash), b = m.pair.substr(dash + 1);
  j["retrieval"] = {{a + "->" + b, to_json(m.retrieval.x_to_y)},
                    {b + "->" + a, to_json(m.retrieval.y_to_x)},
                    {"macro", to_json(m.retrieval.macro)}};
  j["procrustes_disparity"] = m.procrustes_disparity;
  j["cka"] = m.cka;
  j["mutual_knn"] = m.mutual_knn;
  j["mad_degrees"] = m.mad_degrees;
  return j;
}

std::vector<std::string> pair_metric_columns() {
  return {"matched",          "mismatched",     "margin",        "mad_degrees",
          "r1_fwd",           "r5_fwd",         "r10_fwd",       "mrr_fwd",
          "r1_rev",           "r5_rev",         "r10_rev",       "mrr_rev",
          "r1_macro",         "r5_macro",       "r10_macro",     "mrr_macro",
          "procrustes",       "cka",            "mutual_knn"};
}

std::vector<double> pair_metric_values(const PairMetrics& m) {
  auto r = [](const DirectionalRetrieval& d, int k) {
    const auto it = d.recall.find(k);
    return it == d.recall.end() ? std::nan("") : it->second;
  };
  const auto& fwd = m.retrieval.x_to_y;
  const auto& rev = m.retrieval.y_to_x;
  const auto& mac = m.retrieval.macro;
  return {m.cosine.matched, m.cosine.mismatched, m.cosine.margin, m.mad_degrees,
          r(fwd, 1),        r(fwd, 5),           r(fwd, 10),      fwd.mrr,
          r(rev, 1),        r(rev, 5),           r(rev, 10),      rev.mrr,
          r(mac, 1),        r(mac, 5),           r(mac, 10),      mac.mrr,
          m.procrustes_disparity, m.cka,         m.mutual_knn};
}

}  // namespace trialign
