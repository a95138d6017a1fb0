#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace trialign {

/// Cosine decay with linear warmup, evaluated per optimizer step.
struct Schedule {
  double base_lr = 1e-4;
  std::int64_t total_steps = 0;
  std::int64_t warmup_steps = 0;
  double floor_lr = 0.0;

  /// warmup_steps = round(warmup_fraction * total_steps).
  static Schedule make(double base_lr, std::int64_t total_steps, double warmup_fraction = 0.02,
                       double floor_lr = 0.0);
};

/// Learning rate at `step` in [0, total_steps]; ConfigError outside that range.
double lr_at(const Schedule& schedule, std::int64_t step);

/// A parameter tensor paired with its gradient, viewed as flat storage.
struct TensorSlot {
  std::span<float> value;
  std::span<const float> grad;
  bool decay = true;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

struct OptimState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
};

/// One bias-corrected Adam step with decoupled weight decay:
///   p <- p - lr*wd*p (decay slots only), then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// Moments are allocated on the first call; later calls must present the
/// same slot shapes or ShapeError is thrown.
void adamw_step(std::span<const TensorSlot> slots, OptimState& state, double lr);

/// Scales `grads` in place so their global L2 norm is at most `max_norm` and
/// returns the norm measured before clipping. NumericsError on non-finite input.
double clip_global_norm(std::span<const std::span<float>> grads, double max_norm = 1.0);

/// Element-wise mean of equally weighted micro-batch gradients.
std::vector<float> accumulate(std::span<const std::vector<float>> micro_grads);

}  // namespace trialign
