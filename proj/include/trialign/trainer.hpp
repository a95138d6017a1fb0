#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialign/contrastive_loss.hpp"
#include "trialign/embedding_store.hpp"
#include "trialign/optimizer.hpp"
#include "trialign/projection_head.hpp"

namespace trialign {

struct EncoderInfo {
  std::string name;
  std::uint64_t parameters = 0;
};

struct RunConfig {
  std::string run_name = "run";
  LossVariant variant = LossVariant::trimodal();
  double tau = 0.2;
  double base_lr = 1e-4;
  double weight_decay = 1e-5;
  int epochs = 50;
  std::size_t batch_size = 256;
  /// Micro-batches per optimizer step. 1 computes the loss over the whole
  /// logical batch; larger values average per-micro-batch gradients, which
  /// only approximates the large-batch contrastive gradient.
  std::size_t accumulation = 1;
  double warmup_fraction = 0.02;
  double clip_norm = 1.0;
  int patience = 5;
  std::size_t d_out = 1024;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  std::map<Modality, EncoderInfo> encoders;
  SubsampleSpec eval_subsample;

  /// Rejects unknown keys with a ConfigError naming the key.
  static RunConfig from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::json to_json() const;
  void validate() const;
  [[nodiscard]] std::uint64_t total_encoder_parameters() const;
};

using HeadSet = std::map<Modality, ProjectionHead<float>>;
using BatchSet = std::map<Modality, ProjectionHead<float>::Matrix>;

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown val;
  double lr = 0.0;  // rate used by the epoch's last step
};

enum class StopReason { completed, early_stopped };

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<double> lr_trace;  // one entry per optimizer step
  int best_epoch = 0;
  double best_val_loss = 0.0;
  StopReason stop_reason = StopReason::completed;
};

/// Patience rule on a validation loss sequence: an epoch improves only if its
/// loss is strictly below the best so far; training stops once `patience`
/// consecutive epochs fail to improve.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Records `loss` for `epoch`; returns true when training should stop.
  bool update(int epoch, double loss);
  [[nodiscard]] bool last_improved() const { return last_improved_; }
  [[nodiscard]] int best_epoch() const { return best_epoch_; }
  [[nodiscard]] double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
  int stale_ = 0;
  bool last_improved_ = false;
};

/// Heads plus optimizer for one run; owns all mutable training state.
class TrainingSession {
 public:
  TrainingSession(const RunConfig& config, const std::map<Modality, std::size_t>& input_dims);

  /// One optimizer step on an index-aligned batch at learning rate `lr`.
  /// Returns the mean loss across micro-batches before the update.
  LossBreakdown step(const BatchSet& batch, double lr);

  /// Eval-mode loss over `data`, in chunks of the configured batch size
  /// (last partial chunk kept), weighted by chunk rows.
  [[nodiscard]] LossBreakdown evaluate_loss(const JoinedSplit& data) const;

  [[nodiscard]] const HeadSet& heads() const { return heads_; }
  [[nodiscard]] const OptimState& optimizer() const { return optim_; }
  [[nodiscard]] double last_grad_norm() const { return last_grad_norm_; }

 private:
  struct MicroResult {
    LossBreakdown loss;
    std::map<Modality, HeadGradients<float>> grads;
  };
  MicroResult forward_backward(const BatchSet& batch);

  RunConfig config_;
  HeadSet heads_;
  OptimState optim_;
  Rng dropout_rng_;
  double last_grad_norm_ = 0.0;
};

struct TrainResult {
  HeadSet heads;                // parameters of the best validation epoch
  OptimState optimizer;         // optimizer state at that epoch
  TrainLog log;
};

/// Full training loop: per-epoch seeded shuffle, incomplete last batch
/// dropped, cosine/warmup schedule over all steps, global-norm clipping,
/// AdamW, validation after each epoch and early stopping.
TrainResult train(const RunConfig& config, const JoinedSplit& train_data, const JoinedSplit& val_data);
TrainResult train(const RunConfig& config, const TripletManifest& manifest);

/// Eval-mode projection followed by L2 normalization for every row.
std::map<Modality, EmbeddingSet> evaluate_checkpoint(const HeadSet& heads, const JoinedSplit& data);

/// config.json, log.csv and checkpoints/best.ckpt under `dir`.
void write_run_directory(const std::filesystem::path& dir, const RunConfig& config,
                         const TrainResult& result);
std::string format_log_csv(const RunConfig& config, const TrainLog& log);

}  // namespace trialign
