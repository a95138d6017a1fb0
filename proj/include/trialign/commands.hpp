#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialign/alignment_metrics.hpp"
#include "trialign/contrastive_loss.hpp"
#include "trialign/information_density.hpp"
#include "trialign/synthetic.hpp"
#include "trialign/trainer.hpp"

namespace trialign {

/// Metrics for every evaluated modality pair of one split.
struct AlignmentReport {
  std::string source;  // "baseline" or "checkpoint"
  std::string split;
  std::string run_name;
  std::vector<PairMetrics> pairs;

  [[nodiscard]] nlohmann::json to_json() const;
  /// One row per pair; columns "run,pair,n,subsample_n" then pair_metric_columns().
  [[nodiscard]] std::string to_csv(bool header = true) const;
};

std::string report_csv_header();

/// Evaluates `pairs` on already-normalized sets. Pairs whose sides differ in
/// dimension are compared after zero-padding the narrower side.
AlignmentReport evaluate_sets(const std::map<Modality, EmbeddingSet>& normalized,
                              const std::vector<ModalityPair>& pairs, const SubsampleSpec& subsample);

/// report.json and report.csv under `dir`.
void write_report(const std::filesystem::path& dir, const AlignmentReport& report);

/// Uncoupled baseline: raw embeddings, L2-normalized, no heads, all three pairs.
AlignmentReport cmd_baseline(const TripletManifest& manifest, Split split,
                             const SubsampleSpec& subsample, const std::filesystem::path& out_dir);

/// Trains and writes the run directory `config.output_dir`. Returns the result.
TrainResult cmd_train(const RunConfig& config);

/// Projects `split` with a checkpoint and evaluates the variant's pairs plus
/// all three core pairs when those embeddings exist.
AlignmentReport cmd_eval(const std::filesystem::path& checkpoint, const TripletManifest& manifest,
                         Split split, const SubsampleSpec& subsample,
                         const std::filesystem::path& out_dir);

struct SweepSpec {
  std::vector<RunConfig> runs;
  std::filesystem::path output_dir;
  std::filesystem::path csv_path;  // defaults to output_dir/sweep.csv
  Split eval_split = Split::test;

  /// {"output_dir", "csv", "eval_split", "base": {...}, "runs": [{...}, ...]};
  /// each run is the base config overlaid with the run's keys.
  static SweepSpec from_json(const nlohmann::json& j);
  void validate() const;
};

struct SweepRun {
  std::string run_name;
  std::uint64_t total_parameters = 0;
  bool ok = false;
  std::string error;
  AlignmentReport report;
};

struct CorrelationRow {
  std::string pair;
  std::string metric;
  std::string against;
  std::optional<Correlation> value;
  std::string status;  // "ok", "degenerate" or "insufficient"
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::vector<CorrelationRow> correlations;
};

/// Trains and evaluates every run in order; a failing run is recorded and the
/// sweep continues. Writes the sweep CSV and correlations.csv.
SweepResult cmd_sweep(const SweepSpec& spec);

std::string sweep_csv_header();

/// Correlations of margin, Procrustes, CKA and mutual kNN with total encoder
/// parameters and with macro R@1/5/10, per pair, over successful runs.
std::vector<CorrelationRow> sweep_correlations(const std::vector<SweepRun>& runs);

struct IdScoreResult {
  std::vector<IDRecord> captions;
  DatasetID dataset;
  std::vector<std::pair<std::string, DatasetID>> variants;  // first-seen order
  std::vector<std::string> ranking;                         // by mean ID, descending
};

/// Reads a surprisal NDJSON file and writes ids.csv and summary.json to `out_dir`.
IdScoreResult cmd_id_score(const std::filesystem::path& surprisal_file,
                           const std::filesystem::path& out_dir);

}  // namespace trialign
