#include "trialign/contrastive_loss.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "trialign/errors.hpp"

namespace trialign {
namespace {

constexpr double kUnitTolerance = 1e-4;

void check_batch(const MatrixD& zx, const MatrixD& zy, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  if (zx.rows() < 1) throw ShapeError("contrastive loss needs at least one row");
  if (zx.rows() != zy.rows() || zx.cols() != zy.cols()) {
    throw ShapeError("contrastive batches disagree in shape: " + std::to_string(zx.rows()) + "x" +
                     std::to_string(zx.cols()) + " vs " + std::to_string(zy.rows()) + "x" +
                     std::to_string(zy.cols()));
  }
  for (const MatrixD* z : {&zx, &zy}) {
    for (Eigen::Index i = 0; i < z->rows(); ++i) {
      const double norm = z->row(i).norm();
      if (!std::isfinite(norm)) throw NumericsError("non-finite embedding in contrastive batch");
      if (std::abs(norm - 1.0) > kUnitTolerance) {
        throw DataError("contrastive loss expects unit rows; row " + std::to_string(i) +
                        " has norm " + std::to_string(norm));
      }
    }
  }
}

// Row-wise log-softmax of logits and the cross-entropy against the diagonal.
// Returns the loss and overwrites `logits` with dL/dlogits.
double diagonal_cross_entropy(MatrixD& logits) {
  const Eigen::Index n = logits.rows();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double peak = logits.row(i).maxCoeff();
    const double diagonal = logits(i, i) - peak;
    auto row = logits.row(i).array();
    row = (row - peak).exp();
    const double denom = row.sum();
    loss -= diagonal - std::log(denom);
    row /= denom;
    row(i) -= 1.0;
  }
  logits /= static_cast<double>(n);
  return loss / static_cast<double>(n);
}

void accumulate(std::map<Modality, MatrixD>& grads, Modality m, const MatrixD& g) {
  auto it = grads.find(m);
  if (it == grads.end()) {
    grads.emplace(m, g);
  } else {
    it->second += g;
  }
}

}  // namespace

std::string ModalityPair::name() const {
  return std::string(trialign::to_string(x)) + "-" + std::string(trialign::to_string(y));
}

ModalityPair pair_from_string(const std::string& name) {
  const auto dash = name.find('-');
  if (dash == std::string::npos) throw ConfigError("malformed modality pair '" + name + "'");
  const ModalityPair p{modality_from_string(name.substr(0, dash)),
                       modality_from_string(name.substr(dash + 1))};
  if (p != kTsImg && p != kTsTxt && p != kImgTxt && p != kTsVl) {
    throw ConfigError("unsupported modality pair '" + name + "'");
  }
  return p;
}

LossVariant LossVariant::bimodal(std::vector<ModalityPair> pairs) {
  if (pairs.empty()) throw ConfigError("bimodal loss variant needs at least one pair");
  for (const auto& p : pairs) {
    if (p != kTsImg && p != kTsTxt && p != kImgTxt) {
      throw ConfigError("bimodal pairs must be among ts-img, ts-txt, img-txt");
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return {Kind::bimodal, std::move(pairs)};
}

std::vector<ModalityPair> LossVariant::active_pairs() const {
  switch (kind) {
    case Kind::trimodal: return {kTsImg, kTsTxt, kImgTxt};
    case Kind::bimodal: return pairs;
    case Kind::vl_ts: return {kTsVl, kImgTxt};
  }
  return {};
}

std::vector<Modality> LossVariant::modalities() const {
  std::vector<Modality> out;
  for (const auto& p : active_pairs()) {
    for (Modality m : {p.x, p.y}) {
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string LossVariant::to_string() const {
  switch (kind) {
    case Kind::trimodal: return "trimodal";
    case Kind::vl_ts: return "vl_ts";
    case Kind::bimodal: {
      std::string s = "bimodal:";
      for (std::size_t i = 0; i < pairs.size(); ++i) s += (i ? "," : "") + pairs[i].name();
      return s;
    }
  }
  return "?";
}

LossVariant LossVariant::parse(const std::string& text) {
  if (text == "trimodal") return trimodal();
  if (text == "vl_ts") return vl_ts();
  const std::string prefix = "bimodal:";
  if (text.rfind(prefix, 0) == 0) {
    std::vector<ModalityPair> pairs;
    std::stringstream ss(text.substr(prefix.size()));
    std::string item;
    while (std::getline(ss, item, ',')) pairs.push_back(pair_from_string(item));
    return bimodal(std::move(pairs));
  }
  throw ConfigError("unknown loss variant '" + text +
                    "' (expected trimodal, vl_ts or bimodal:<pair>[,<pair>...])");
}

DirectionalLoss infonce_directional(const MatrixD& zx, const MatrixD& zy, double tau) {
  check_batch(zx, zy, tau);
  MatrixD dlogits = (zx * zy.transpose()) / tau;
  DirectionalLoss out;
  out.loss = diagonal_cross_entropy(dlogits);
  // logits = S / tau, S = zx zy^T
  dlogits /= tau;
  out.grad_x = dlogits * zy;
  out.grad_y = dlogits.transpose() * zx;
  return out;
}

SymmetricLoss infonce_symmetric(const MatrixD& zx, const MatrixD& zy, double tau) {
  check_batch(zx, zy, tau);
  const MatrixD sim = (zx * zy.transpose()) / tau;
  MatrixD d_fwd = sim;
  MatrixD d_rev = sim.transpose();
  SymmetricLoss out;
  out.loss.forward = diagonal_cross_entropy(d_fwd);
  out.loss.reverse = diagonal_cross_entropy(d_rev);
  out.loss.symmetric = 0.5 * (out.loss.forward + out.loss.reverse);
  // Both directions differentiate the same S; the reverse one sees S^T.
  const MatrixD d_sim = (0.5 / tau) * (d_fwd + d_rev.transpose());
  out.grad_x = d_sim * zy;
  out.grad_y = d_sim.transpose() * zx;
  return out;
}

ObjectiveResult total_loss(const std::map<Modality, MatrixD>& batches, double tau,
                           const LossVariant& variant) {
  if (variant.kind == LossVariant::Kind::vl_ts) {
    for (Modality m : {Modality::ts, Modality::vl, Modality::img, Modality::txt}) {
      if (!batches.contains(m)) {
        throw ConfigError("vl_ts objective needs a '" + std::string(to_string(m)) + "' batch");
      }
    }
    return vl_ts_loss(batches.at(Modality::ts), batches.at(Modality::vl),
                      batches.at(Modality::img), batches.at(Modality::txt), tau);
  }
  ObjectiveResult out;
  out.breakdown.tau = tau;
  for (const auto& pair : variant.active_pairs()) {
    for (Modality m : {pair.x, pair.y}) {
      if (!batches.contains(m)) {
        throw ConfigError("loss variant " + variant.to_string() + " needs a '" +
                          std::string(to_string(m)) + "' batch");
      }
    }
    auto term = infonce_symmetric(batches.at(pair.x), batches.at(pair.y), tau);
    out.breakdown.pairs[pair] = term.loss;
    out.breakdown.total += term.loss.symmetric;
    accumulate(out.grads, pair.x, term.grad_x);
    accumulate(out.grads, pair.y, term.grad_y);
  }
  return out;
}

ObjectiveResult vl_ts_loss(const MatrixD& z_ts, const MatrixD& z_vl, const MatrixD& z_v,
                           const MatrixD& z_t, double tau) {
  if (z_ts.rows() != z_v.rows() || z_ts.rows() != z_t.rows()) {
    throw ShapeError("vl_ts batches must be index-aligned");
  }
  auto joint = infonce_symmetric(z_ts, z_vl, tau);
  auto aux = infonce_symmetric(z_v, z_t, tau);
  ObjectiveResult out;
  out.breakdown.tau = tau;
  out.breakdown.pairs[kTsVl] = joint.loss;
  out.breakdown.pairs[kImgTxt] = aux.loss;
  out.breakdown.total = joint.loss.symmetric + aux.loss.symmetric;
  out.grads.emplace(Modality::ts, std::move(joint.grad_x));
  out.grads.emplace(Modality::vl, std::move(joint.grad_y));
  out.grads.emplace(Modality::img, std::move(aux.grad_x));
  out.grads.emplace(Modality::txt, std::move(aux.grad_y));
  return out;
}

RowNormalization normalize_rows(const MatrixD& v) {
  RowNormalization out;
  out.norms = v.rowwise().norm();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    if (!std::isfinite(out.norms(i))) {
      throw NumericsError("non-finite projection row " + std::to_string(i));
    }
    if (!(out.norms(i) > 0.0)) {
      throw DataError("cannot normalize zero projection row " + std::to_string(i));
    }
  }
  out.z = out.norms.cwiseInverse().asDiagonal() * v;
  return out;
}

MatrixD normalize_rows_backward(const RowNormalization& fwd, const MatrixD& dz) {
  const Eigen::VectorXd radial = (fwd.z.array() * dz.array()).rowwise().sum();
  MatrixD dv = dz - radial.asDiagonal() * fwd.z;
  return fwd.norms.cwiseInverse().asDiagonal() * dv;
}

}  // namespace trialign
