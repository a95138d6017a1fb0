#include "trialign/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "trialign/errors.hpp"

namespace trialign {

Schedule Schedule::make(double base_lr, std::int64_t total_steps, double warmup_fraction,
                        double floor_lr) {
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("warmup fraction must lie in [0, 1]");
  }
  Schedule s;
  s.base_lr = base_lr;
  s.total_steps = total_steps;
  s.warmup_steps = std::llround(warmup_fraction * static_cast<double>(total_steps));
  s.floor_lr = floor_lr;
  return s;
}

double lr_at(const Schedule& schedule, std::int64_t step) {
  if (step < 0 || step > schedule.total_steps) {
    throw ConfigError("schedule step " + std::to_string(step) + " outside [0, " +
                      std::to_string(schedule.total_steps) + "]");
  }
  if (step < schedule.warmup_steps) {
    return schedule.base_lr * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
  }
  const std::int64_t decay_steps = schedule.total_steps - schedule.warmup_steps;
  if (decay_steps == 0) return schedule.base_lr;
  const double progress =
      static_cast<double>(step - schedule.warmup_steps) / static_cast<double>(decay_steps);
  return schedule.floor_lr + (schedule.base_lr - schedule.floor_lr) * 0.5 *
                                 (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::span<const TensorSlot> slots, OptimState& state, double lr) {
  if (state.first_moment.empty()) {
    for (const auto& slot : slots) {
      state.first_moment.emplace_back(slot.value.size(), 0.0f);
      state.second_moment.emplace_back(slot.value.size(), 0.0f);
    }
  }
  if (state.first_moment.size() != slots.size()) {
    throw ShapeError("optimizer state tracks " + std::to_string(state.first_moment.size()) +
                     " tensors, step received " + std::to_string(slots.size()));
  }
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (slots[s].value.size() != slots[s].grad.size() ||
        slots[s].value.size() != state.first_moment[s].size()) {
      throw ShapeError("parameter/gradient/moment shape mismatch in tensor " + std::to_string(s));
    }
  }
  const auto& cfg = state.config;
  state.step += 1;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    auto& m = state.first_moment[s];
    auto& v = state.second_moment[s];
    const auto& slot = slots[s];
    const double decay = slot.decay ? lr * cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      const double g = slot.grad[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double p = slot.value[i];
      p -= decay * p;
      p -= lr * (mi / bias1) / (std::sqrt(vi / bias2) + cfg.eps);
      slot.value[i] = static_cast<float>(p);
    }
  }
}

double clip_global_norm(std::span<const std::span<float>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (float v : g) {
      if (!std::isfinite(v)) throw NumericsError("non-finite gradient entry");
      sq += static_cast<double>(v) * v;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) {
      for (float& v : g) v = static_cast<float>(v * scale);
    }
  }
  return norm;
}

std::vector<float> accumulate(std::span<const std::vector<float>> micro_grads) {
  if (micro_grads.empty()) throw ConfigError("gradient accumulation needs at least one micro-batch");
  std::vector<double> sum(micro_grads.front().size(), 0.0);
  for (const auto& g : micro_grads) {
    if (g.size() != sum.size()) throw ShapeError("micro-batch gradients differ in size");
    for (std::size_t i = 0; i < g.size(); ++i) sum[i] += g[i];
  }
  std::vector<float> out(sum.size());
  const double k = static_cast<double>(micro_grads.size());
  for (std::size_t i = 0; i < sum.size(); ++i) out[i] = static_cast<float>(sum[i] / k);
  return out;
}

}  // namespace trialign
