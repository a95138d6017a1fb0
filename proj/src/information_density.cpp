#include "trialign/information_density.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "trialign/errors.hpp"

namespace trialign {

double exact_sum(const std::vector<double>& values) {
  // Non-overlapping partials whose exact sum equals the running total.
  std::vector<double> partials;
  for (double x : values) {
    std::size_t kept = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[kept++] = lo;
      x = hi;
    }
    partials.resize(kept);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  // Fold from the top, correcting for half-way rounding as in Python's fsum.
  std::size_t i = partials.size() - 1;
  double hi = partials[i];
  double lo = 0.0;
  while (i > 0) {
    const double x = hi;
    const double y = partials[--i];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (i > 0 && ((lo < 0.0 && partials[i - 1] < 0.0) || (lo > 0.0 && partials[i - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

IDRecord compute_id(const SurprisalRecord& record) {
  if (record.surprisals.empty()) {
    throw DataError("caption '" + record.id + "' has no tokens");
  }
  for (std::size_t t = 0; t < record.surprisals.size(); ++t) {
    const double s = record.surprisals[t];
    if (!std::isfinite(s) || s < 0.0) {
      throw DataError("caption '" + record.id + "' token " + std::to_string(t) +
                      " has invalid surprisal " + std::to_string(s));
    }
  }
  IDRecord out;
  out.id = record.id;
  out.token_count = record.surprisals.size();
  out.id_value = exact_sum(record.surprisals);
  out.mean_per_token = out.id_value / static_cast<double>(out.token_count);
  return out;
}

DatasetID dataset_id(const std::vector<IDRecord>& records) {
  if (records.empty()) throw DataError("dataset information density needs at least one caption");
  double id = 0.0, tokens = 0.0, per_token = 0.0;
  for (const auto& r : records) {
    id += r.id_value;
    tokens += static_cast<double>(r.token_count);
    per_token += r.mean_per_token;
  }
  const double n = static_cast<double>(records.size());
  return {id / n, tokens / n, per_token / n, records.size()};
}

std::vector<std::string> rank_variants(const std::vector<std::pair<std::string, double>>& variant_ids) {
  auto sorted = variant_ids;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  out.reserve(sorted.size());
  for (auto& [name, _] : sorted) out.push_back(std::move(name));
  return out;
}

std::vector<SurprisalRecord> load_surprisals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<SurprisalRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto obj = nlohmann::json::parse(line);
      SurprisalRecord rec;
      rec.id = obj.at("id").is_string() ? obj.at("id").get<std::string>() : obj.at("id").dump();
      rec.surprisals = obj.at("surprisals").get<std::vector<double>>();
      if (obj.contains("variant")) rec.variant = obj.at("variant").get<std::string>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed record: " + e.what());
    }
  }
  if (out.empty()) throw DataError(path.string() + ": no surprisal records");
  return out;
}

}  // namespace trialign
