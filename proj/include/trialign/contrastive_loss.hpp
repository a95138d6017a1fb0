#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trialign/embedding_store.hpp"

namespace trialign {

using MatrixD = Eigen::MatrixXd;

struct ModalityPair {
  Modality x;
  Modality y;

  [[nodiscard]] std::string name() const;
  auto operator<=>(const ModalityPair&) const = default;
};

inline constexpr ModalityPair kTsImg{Modality::ts, Modality::img};
inline constexpr ModalityPair kTsTxt{Modality::ts, Modality::txt};
inline constexpr ModalityPair kImgTxt{Modality::img, Modality::txt};
inline constexpr ModalityPair kTsVl{Modality::ts, Modality::vl};

/// "ts-img", "ts-txt", "img-txt" or "ts-vl".
ModalityPair pair_from_string(const std::string& name);

struct LossVariant {
  enum class Kind { trimodal, bimodal, vl_ts };

  Kind kind = Kind::trimodal;
  std::vector<ModalityPair> pairs;  // bimodal only

  static LossVariant trimodal() { return {Kind::trimodal, {}}; }
  static LossVariant bimodal(std::vector<ModalityPair> pairs);
  static LossVariant vl_ts() { return {Kind::vl_ts, {}}; }

  /// Pairs summed by the objective, in a fixed order.
  [[nodiscard]] std::vector<ModalityPair> active_pairs() const;
  /// Modalities whose batches the objective reads.
  [[nodiscard]] std::vector<Modality> modalities() const;
  [[nodiscard]] std::string to_string() const;
  static LossVariant parse(const std::string& text);
};

struct PairLoss {
  double forward = 0.0;    // x -> y
  double reverse = 0.0;    // y -> x
  double symmetric = 0.0;  // mean of the two
};

struct LossBreakdown {
  std::map<ModalityPair, PairLoss> pairs;
  double total = 0.0;
  double tau = 0.0;
};

struct DirectionalLoss {
  double loss = 0.0;
  MatrixD grad_x;
  MatrixD grad_y;
};

/// -(1/N) sum_i log softmax_j(<x_i, y_j> / tau)[i] with gradients with respect
/// to the (already normalized) rows of `zx` and `zy`.
DirectionalLoss infonce_directional(const MatrixD& zx, const MatrixD& zy, double tau);

struct SymmetricLoss {
  PairLoss loss;
  MatrixD grad_x;
  MatrixD grad_y;
};

SymmetricLoss infonce_symmetric(const MatrixD& zx, const MatrixD& zy, double tau);

struct ObjectiveResult {
  LossBreakdown breakdown;
  std::map<Modality, MatrixD> grads;
};

/// Equal-weight sum of the variant's symmetric pair losses. `batches` maps a
/// modality to its normalized, index-aligned projections.
ObjectiveResult total_loss(const std::map<Modality, MatrixD>& batches, double tau,
                           const LossVariant& variant);

/// L_{ts<->vl} + L_{v<->t}: time series against the joint vision-language
/// embedding, plus the auxiliary image-text term. Gradient keys are ts, vl,
/// img (vision-only) and txt (text-only).
ObjectiveResult vl_ts_loss(const MatrixD& z_ts, const MatrixD& z_vl, const MatrixD& z_v,
                           const MatrixD& z_t, double tau);

struct RowNormalization {
  MatrixD z;
  Eigen::VectorXd norms;
};

/// z_i = v_i / ||v_i||. Throws DataError on a zero row.
RowNormalization normalize_rows(const MatrixD& v);

/// Chain rule through row normalization: dv = (dz - z (z . dz)) / ||v||.
MatrixD normalize_rows_backward(const RowNormalization& fwd, const MatrixD& dz);

}  // namespace trialign
