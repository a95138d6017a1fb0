#include "trialign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "trialign/binary_io.hpp"
#include "trialign/checkpoint.hpp"
#include "trialign/errors.hpp"

namespace trialign {
namespace {

using MatrixF = ProjectionHead<float>::Matrix;

constexpr std::uint64_t kShuffleStream = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kDropoutStream = 0xD1B54A32D192ED03ULL;
constexpr Eigen::Index kEvalChunk = 1024;

std::uint64_t head_seed(std::uint64_t seed, Modality m) {
  return seed * 1000003ULL + 7919ULL * (static_cast<std::uint64_t>(m) + 1);
}

void add_scaled(LossBreakdown& acc, const LossBreakdown& term, double weight) {
  acc.tau = term.tau;
  acc.total += weight * term.total;
  for (const auto& [pair, loss] : term.pairs) {
    auto& slot = acc.pairs[pair];
    slot.forward += weight * loss.forward;
    slot.reverse += weight * loss.reverse;
    slot.symmetric += weight * loss.symmetric;
  }
}

MatrixF gather(const EmbeddingSet& set, std::span<const std::size_t> rows) {
  MatrixF out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(set.dim()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = set.data().row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

MatrixF row_range(const EmbeddingSet& set, Eigen::Index start, Eigen::Index count) {
  return set.data().middleRows(start, count);
}

std::vector<float> flatten(const std::map<Modality, HeadGradients<float>>& grads) {
  std::vector<float> out;
  for (const auto& [m, g] : grads) {
    for (const auto* t : {&g.w1, &g.w2}) out.insert(out.end(), t->data(), t->data() + t->size());
    for (const auto* t : {&g.b1, &g.ln_gain, &g.ln_bias, &g.b2}) {
      out.insert(out.end(), t->data(), t->data() + t->size());
    }
  }
  return out;
}

void unflatten(const std::vector<float>& flat, std::map<Modality, HeadGradients<float>>& grads) {
  std::size_t pos = 0;
  auto take = [&](auto& t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), t.size(), t.data());
    pos += static_cast<std::size_t>(t.size());
  };
  for (auto& [m, g] : grads) {
    take(g.w1);
    take(g.w2);
    take(g.b1);
    take(g.ln_gain);
    take(g.ln_bias);
    take(g.b2);
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- RunConfig

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kKeys = {
      "run_name", "variant",  "tau",      "base_lr", "weight_decay", "epochs",
      "batch_size", "accumulation", "warmup_fraction", "clip_norm", "patience", "d_out",
      "dropout",  "seed",     "manifest", "output_dir", "encoders",  "eval_subsample"};
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  RunConfig c;
  try {
    c.run_name = j.value("run_name", c.run_name);
    if (j.contains("variant")) c.variant = LossVariant::parse(j.at("variant").get<std::string>());
    c.tau = j.value("tau", c.tau);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.accumulation = j.value("accumulation", c.accumulation);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.patience = j.value("patience", c.patience);
    c.d_out = j.value("d_out", c.d_out);
    c.dropout = j.value("dropout", c.dropout);
    c.seed = j.value("seed", c.seed);
    if (j.contains("manifest")) c.manifest = j.at("manifest").get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("encoders")) {
      for (const auto& [name, info] : j.at("encoders").items()) {
        for (const auto& [key, _] : info.items()) {
          if (key != "name" && key != "parameters") {
            throw ConfigError("unknown config key 'encoders." + name + "." + key + "'");
          }
        }
        EncoderInfo e;
        e.name = info.value("name", std::string());
        e.parameters = info.value("parameters", std::uint64_t{0});
        c.encoders[modality_from_string(name)] = e;
      }
    }
    if (j.contains("eval_subsample")) {
      for (const auto& [key, _] : j.at("eval_subsample").items()) {
        if (key != "max_n" && key != "seed") {
          throw ConfigError("unknown config key 'eval_subsample." + key + "'");
        }
      }
      c.eval_subsample.max_n = j.at("eval_subsample").value("max_n", c.eval_subsample.max_n);
      c.eval_subsample.seed = j.at("eval_subsample").value("seed", c.eval_subsample.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j{{"run_name", run_name},
                   {"variant", variant.to_string()},
                   {"tau", tau},
                   {"base_lr", base_lr},
                   {"weight_decay", weight_decay},
                   {"epochs", epochs},
                   {"batch_size", batch_size},
                   {"accumulation", accumulation},
                   {"warmup_fraction", warmup_fraction},
                   {"clip_norm", clip_norm},
                   {"patience", patience},
                   {"d_out", d_out},
                   {"dropout", dropout},
                   {"seed", seed},
                   {"manifest", manifest.string()},
                   {"output_dir", output_dir.string()},
                   {"eval_subsample", {{"max_n", eval_subsample.max_n}, {"seed", eval_subsample.seed}}}};
  j["encoders"] = nlohmann::json::object();
  for (const auto& [m, e] : encoders) {
    j["encoders"][std::string(to_string(m))] = {{"name", e.name}, {"parameters", e.parameters}};
  }
  return j;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("config key '" + key + "' " + why);
  };
  if (!(tau > 0.0)) fail("tau", "must be positive");
  if (!(base_lr > 0.0)) fail("base_lr", "must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be non-negative");
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (batch_size < 2) fail("batch_size", "must be >= 2");
  if (accumulation < 1) fail("accumulation", "must be >= 1");
  if (batch_size % accumulation != 0) fail("accumulation", "must divide batch_size");
  if (batch_size / accumulation < 2) fail("accumulation", "leaves micro-batches of a single row");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) fail("warmup_fraction", "must lie in [0, 1]");
  if (!(clip_norm > 0.0)) fail("clip_norm", "must be positive");
  if (patience < 1) fail("patience", "must be >= 1");
  if (d_out < 1) fail("d_out", "must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must lie in [0, 1)");
  if (run_name.empty()) fail("run_name", "must not be empty");
}

std::uint64_t RunConfig::total_encoder_parameters() const {
  std::uint64_t total = 0;
  for (const auto& [m, e] : encoders) total += e.parameters;
  return total;
}

// ------------------------------------------------------------ EarlyStopping

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(int epoch, double loss) {
  last_improved_ = best_epoch_ == 0 || loss < best_loss_;
  if (last_improved_) {
    best_epoch_ = epoch;
    best_loss_ = loss;
    stale_ = 0;
    return false;
  }
  ++stale_;
  return stale_ >= patience_;
}

// ---------------------------------------------------------- TrainingSession

TrainingSession::TrainingSession(const RunConfig& config,
                                 const std::map<Modality, std::size_t>& input_dims)
    : config_(config), dropout_rng_(config.seed ^ kDropoutStream) {
  config_.validate();
  optim_.config.weight_decay = config.weight_decay;
  for (Modality m : config.variant.modalities()) {
    const auto it = input_dims.find(m);
    if (it == input_dims.end()) {
      throw ConfigError("loss variant " + config.variant.to_string() + " needs modality '" +
                        std::string(to_string(m)) + "'");
    }
    heads_.emplace(m, init_head<float>(it->second, config.d_out, config.dropout, head_seed(config.seed, m)));
  }
}

TrainingSession::MicroResult TrainingSession::forward_backward(const BatchSet& batch) {
  std::map<Modality, ForwardResult<float>> fwd;
  std::map<Modality, RowNormalization> norm;
  std::map<Modality, MatrixD> projected;
  for (auto& [m, head] : heads_) {
    auto f = forward(head, batch.at(m), Mode::train, &dropout_rng_);
    auto nr = normalize_rows(f.z.cast<double>());
    projected.emplace(m, nr.z);
    norm.emplace(m, std::move(nr));
    fwd.emplace(m, std::move(f));
  }
  auto objective = total_loss(projected, config_.tau, config_.variant);
  if (!std::isfinite(objective.breakdown.total)) throw NumericsError("non-finite contrastive loss");
  MicroResult out;
  out.loss = objective.breakdown;
  for (auto& [m, head] : heads_) {
    const MatrixD dv = normalize_rows_backward(norm.at(m), objective.grads.at(m));
    out.grads.emplace(m, backward(head, fwd.at(m).cache, MatrixF(dv.cast<float>())).grads);
  }
  return out;
}

LossBreakdown TrainingSession::step(const BatchSet& batch, double lr) {
  const Eigen::Index rows = batch.begin()->second.rows();
  for (const auto& [m, b] : batch) {
    if (b.rows() != rows) throw ShapeError("batch modalities differ in row count");
  }
  const auto micro = static_cast<Eigen::Index>(config_.accumulation);
  if (rows % micro != 0 || rows / micro < 1) {
    throw ShapeError("batch of " + std::to_string(rows) + " rows cannot be split into " +
                     std::to_string(micro) + " micro-batches");
  }
  LossBreakdown loss;
  std::map<Modality, HeadGradients<float>> grads;
  if (micro == 1) {
    auto r = forward_backward(batch);
    loss = r.loss;
    grads = std::move(r.grads);
  } else {
    const Eigen::Index size = rows / micro;
    std::vector<std::vector<float>> flats;
    for (Eigen::Index k = 0; k < micro; ++k) {
      BatchSet part;
      for (const auto& [m, b] : batch) part.emplace(m, b.middleRows(k * size, size));
      auto r = forward_backward(part);
      add_scaled(loss, r.loss, 1.0 / static_cast<double>(micro));
      flats.push_back(flatten(r.grads));
      if (grads.empty()) grads = std::move(r.grads);
    }
    unflatten(accumulate(flats), grads);
  }

  std::vector<std::span<float>> views;
  for (auto& [m, g] : grads) {
    for (auto* t : {&g.w1, &g.w2}) views.emplace_back(t->data(), static_cast<std::size_t>(t->size()));
    for (auto* t : {&g.b1, &g.ln_gain, &g.ln_bias, &g.b2}) {
      views.emplace_back(t->data(), static_cast<std::size_t>(t->size()));
    }
  }
  last_grad_norm_ = clip_global_norm(views, config_.clip_norm);

  std::vector<TensorSlot> slots;
  for (auto& [m, head] : heads_) {
    auto s = head_slots(head, grads.at(m));
    slots.insert(slots.end(), s.begin(), s.end());
  }
  adamw_step(slots, optim_, lr);
  for (auto& [m, head] : heads_) ++head.version;
  return loss;
}

LossBreakdown TrainingSession::evaluate_loss(const JoinedSplit& data) const {
  const auto n = static_cast<Eigen::Index>(data.n());
  if (n == 0) throw DataError("cannot evaluate loss on an empty split");
  const auto chunk = static_cast<Eigen::Index>(config_.batch_size);
  LossBreakdown acc;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index count = std::min(chunk, n - start);
    std::map<Modality, MatrixD> projected;
    for (const auto& [m, head] : heads_) {
      const auto f = forward(head, row_range(data.at(m), start, count), Mode::eval);
      projected.emplace(m, normalize_rows(f.z.cast<double>()).z);
    }
    const auto objective = total_loss(projected, config_.tau, config_.variant);
    add_scaled(acc, objective.breakdown, static_cast<double>(count) / static_cast<double>(n));
  }
  return acc;
}

// -------------------------------------------------------------------- train

TrainResult train(const RunConfig& config, const JoinedSplit& train_data, const JoinedSplit& val_data) {
  config.validate();
  std::map<Modality, std::size_t> dims;
  for (Modality m : config.variant.modalities()) {
    dims[m] = train_data.at(m).dim();
    if (val_data.at(m).dim() != dims[m]) {
      throw ShapeError("train and val dims differ for modality '" + std::string(to_string(m)) + "'");
    }
  }
  const std::size_t n_train = train_data.n();
  const std::size_t steps_per_epoch = n_train / config.batch_size;
  if (steps_per_epoch == 0) {
    throw ConfigError("config key 'batch_size' (" + std::to_string(config.batch_size) +
                      ") exceeds the " + std::to_string(n_train) + " training rows");
  }
  const auto total_steps = static_cast<std::int64_t>(steps_per_epoch) * config.epochs;
  const Schedule schedule = Schedule::make(config.base_lr, total_steps, config.warmup_fraction);

  TrainingSession session(config, dims);
  Rng shuffle_rng(config.seed ^ kShuffleStream);
  EarlyStopping stopper(config.patience);

  TrainResult result;
  result.heads = session.heads();
  result.optimizer = session.optimizer();
  std::vector<std::size_t> order(n_train);
  std::int64_t global_step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    EpochRecord record;
    record.epoch = epoch;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::span<const std::size_t> rows(order.data() + b * config.batch_size, config.batch_size);
      BatchSet batch;
      for (Modality m : config.variant.modalities()) batch.emplace(m, gather(train_data.at(m), rows));
      const double lr = lr_at(schedule, global_step);
      LossBreakdown loss;
      try {
        loss = session.step(batch, lr);
      } catch (const NumericsError& e) {
        throw TrainError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(global_step) + ": " + e.what());
      }
      add_scaled(record.train, loss, 1.0 / static_cast<double>(steps_per_epoch));
      result.log.lr_trace.push_back(lr);
      record.lr = lr;
      ++global_step;
    }
    try {
      record.val = session.evaluate_loss(val_data);
    } catch (const NumericsError& e) {
      throw TrainError("validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(record.val.total)) {
      throw TrainError("validation loss became non-finite at epoch " + std::to_string(epoch));
    }
    const bool stop = stopper.update(epoch, record.val.total);
    if (stopper.last_improved()) {
      result.heads = session.heads();
      result.optimizer = session.optimizer();
    }
    result.log.epochs.push_back(std::move(record));
    if (stop) {
      result.log.stop_reason = StopReason::early_stopped;
      break;
    }
  }
  result.log.best_epoch = stopper.best_epoch();
  result.log.best_val_loss = stopper.best_loss();
  return result;
}

TrainResult train(const RunConfig& config, const TripletManifest& manifest) {
  const auto modalities = config.variant.modalities();
  const auto train_data = join_triplets(manifest, Split::train, modalities);
  const auto val_data = join_triplets(manifest, Split::val, modalities);
  return train(config, train_data, val_data);
}

std::map<Modality, EmbeddingSet> evaluate_checkpoint(const HeadSet& heads, const JoinedSplit& data) {
  std::map<Modality, EmbeddingSet> out;
  for (const auto& [m, head] : heads) {
    if (!data.has(m)) continue;
    const EmbeddingSet& set = data.at(m);
    const auto n = static_cast<Eigen::Index>(set.n());
    RowMatrixF projected(n, static_cast<Eigen::Index>(head.d_out()));
    for (Eigen::Index start = 0; start < n; start += kEvalChunk) {
      const Eigen::Index count = std::min(kEvalChunk, n - start);
      const auto f = forward(head, row_range(set, start, count), Mode::eval);
      projected.middleRows(start, count) = normalize_rows(f.z.cast<double>()).z.cast<float>();
    }
    out.emplace(m, EmbeddingSet::make(m, std::move(projected), set.ids()));
  }
  return out;
}

// ------------------------------------------------------------ run directory

std::string format_log_csv(const RunConfig& config, const TrainLog& log) {
  const auto pairs = config.variant.active_pairs();
  std::string out = "epoch,split,total";
  for (const auto& p : pairs) out += "," + p.name();
  out += ",lr\n";
  for (const auto& rec : log.epochs) {
    for (const auto& [split, loss] : {std::pair<const char*, const LossBreakdown*>{"train", &rec.train},
                                      std::pair<const char*, const LossBreakdown*>{"val", &rec.val}}) {
      out += std::to_string(rec.epoch) + "," + split + "," + fmt_double(loss->total);
      for (const auto& p : pairs) {
        const auto it = loss->pairs.find(p);
        out += "," + (it == loss->pairs.end() ? std::string() : fmt_double(it->second.symmetric));
      }
      out += "," + fmt_double(rec.lr) + "\n";
    }
  }
  return out;
}

void write_run_directory(const std::filesystem::path& dir, const RunConfig& config,
                         const TrainResult& result) {
  std::filesystem::create_directories(dir / "checkpoints");
  binary::write_file_atomic((dir / "config.json").string(), config.to_json().dump(2) + "\n");
  binary::write_file_atomic((dir / "log.csv").string(), format_log_csv(config, result.log));

  Checkpoint ckpt;
  ckpt.heads = result.heads;
  ckpt.optimizer = result.optimizer;
  ckpt.metadata = {{"run_name", config.run_name},
                   {"variant", config.variant.to_string()},
                   {"tau", config.tau},
                   {"seed", config.seed},
                   {"epoch", result.log.best_epoch},
                   {"best_val_loss", result.log.best_val_loss},
                   {"stop_reason", result.log.stop_reason == StopReason::completed ? "completed"
                                                                                    : "early_stopped"}};
  save_checkpoint(dir / "checkpoints" / "best.ckpt", ckpt);
}

}  // namespace trialign
