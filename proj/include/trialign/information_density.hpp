#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace trialign {

/// Per-token surprisals of one caption, in nats.
struct SurprisalRecord {
  std::string id;
  std::vector<double> surprisals;
  /// Caption variant label (e.g. "dense") when the input groups captions.
  std::optional<std::string> variant;
};

struct IDRecord {
  std::string id;
  double id_value = 0.0;        // total surprisal
  double mean_per_token = 0.0;  // id_value / token_count
  std::size_t token_count = 0;
};

/// Total surprisal, summed exactly and rounded once. DataError on an empty
/// list or a negative or non-finite surprisal.
IDRecord compute_id(const SurprisalRecord& record);

struct DatasetID {
  double mean_id = 0.0;
  double mean_tokens = 0.0;
  double mean_per_token = 0.0;
  std::size_t captions = 0;
};

DatasetID dataset_id(const std::vector<IDRecord>& records);

/// Variant names sorted by mean ID, highest first; ties keep input order.
std::vector<std::string> rank_variants(const std::vector<std::pair<std::string, double>>& variant_ids);

/// Reads newline-delimited JSON objects {"id": ..., "surprisals": [...]} with
/// an optional "variant" string. Blank lines are skipped. DataError names the
/// offending line; an input with no records is a DataError too.
std::vector<SurprisalRecord> load_surprisals(const std::filesystem::path& path);

/// Correctly rounded sum of doubles (Shewchuk's exact partials).
double exact_sum(const std::vector<double>& values);

}  // namespace trialign
