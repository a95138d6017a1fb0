#include "trialign/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "trialign/binary_io.hpp"
#include "trialign/checkpoint.hpp"
#include "trialign/errors.hpp"

namespace trialign {
namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string join(const std::vector<std::string>& items, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back(sep);
    out += items[i];
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

MatrixD padded(const EmbeddingSet& set, Eigen::Index dim) {
  MatrixD out = MatrixD::Zero(static_cast<Eigen::Index>(set.n()), dim);
  out.leftCols(static_cast<Eigen::Index>(set.dim())) = set.to_double();
  return out;
}

const std::vector<std::string>& sweep_metrics() {
  static const std::vector<std::string> kMetrics = {"margin", "procrustes", "cka", "mutual_knn"};
  return kMetrics;
}

double metric_value(const PairMetrics& m, const std::string& name) {
  const auto cols = pair_metric_columns();
  const auto vals = pair_metric_values(m);
  const auto it = std::find(cols.begin(), cols.end(), name);
  return vals[static_cast<std::size_t>(it - cols.begin())];
}

}  // namespace

// ------------------------------------------------------------------ reports

nlohmann::json AlignmentReport::to_json() const {
  nlohmann::json j{{"source", source}, {"split", split}, {"run", run_name}};
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs) j["pairs"].push_back(trialign::to_json(p));
  return j;
}

std::string report_csv_header() {
  return "run,pair,n,subsample_n," + join(pair_metric_columns());
}

std::string AlignmentReport::to_csv(bool header) const {
  std::string out = header ? report_csv_header() + "\n" : "";
  for (const auto& p : pairs) {
    std::vector<std::string> fields = {csv_field(run_name), p.pair, std::to_string(p.n),
                                       std::to_string(p.subsample_n)};
    for (double v : pair_metric_values(p)) fields.push_back(fmt(v));
    out += join(fields) + "\n";
  }
  return out;
}

AlignmentReport evaluate_sets(const std::map<Modality, EmbeddingSet>& normalized,
                              const std::vector<ModalityPair>& pairs, const SubsampleSpec& subsample) {
  AlignmentReport report;
  for (const auto& pair : pairs) {
    const auto xi = normalized.find(pair.x);
    const auto yi = normalized.find(pair.y);
    if (xi == normalized.end() || yi == normalized.end()) {
      throw JoinError("pair " + pair.name() + " needs embeddings that are not available");
    }
    const auto dim = static_cast<Eigen::Index>(std::max(xi->second.dim(), yi->second.dim()));
    report.pairs.push_back(
        evaluate_pair(pair.name(), padded(xi->second, dim), padded(yi->second, dim), subsample));
  }
  return report;
}

void write_report(const std::filesystem::path& dir, const AlignmentReport& report) {
  std::filesystem::create_directories(dir);
  binary::write_file_atomic((dir / "report.json").string(), report.to_json().dump(2) + "\n");
  binary::write_file_atomic((dir / "report.csv").string(), report.to_csv());
}

// ----------------------------------------------------------------- commands

AlignmentReport cmd_baseline(const TripletManifest& manifest, Split split,
                             const SubsampleSpec& subsample, const std::filesystem::path& out_dir) {
  const auto data = join_triplets(manifest, split);
  std::map<Modality, EmbeddingSet> normalized;
  for (Modality m : kCoreModalities) normalized.emplace(m, normalize(data.at(m)));
  auto report = evaluate_sets(normalized, {kTsImg, kTsTxt, kImgTxt}, subsample);
  report.source = "baseline";
  report.split = std::string(to_string(split));
  report.run_name = "baseline";
  if (!out_dir.empty()) write_report(out_dir, report);
  return report;
}

TrainResult cmd_train(const RunConfig& config) {
  if (config.manifest.empty()) throw ConfigError("config key 'manifest' is required");
  if (config.output_dir.empty()) throw ConfigError("config key 'output_dir' is required");
  const auto manifest = TripletManifest::load(config.manifest);
  auto result = train(config, manifest);
  write_run_directory(config.output_dir, config, result);
  return result;
}

AlignmentReport cmd_eval(const std::filesystem::path& checkpoint, const TripletManifest& manifest,
                         Split split, const SubsampleSpec& subsample,
                         const std::filesystem::path& out_dir) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto variant = LossVariant::parse(ckpt.metadata.value("variant", std::string("trimodal")));
  const auto data = join_triplets(manifest, split, variant.modalities());
  const auto projected = evaluate_checkpoint(ckpt.heads, data);

  std::vector<ModalityPair> pairs = variant.active_pairs();
  const bool all_core = std::all_of(std::begin(kCoreModalities), std::end(kCoreModalities),
                                    [&](Modality m) { return projected.contains(m); });
  if (all_core) {
    for (const auto& p : {kTsImg, kTsTxt, kImgTxt}) {
      if (std::find(pairs.begin(), pairs.end(), p) == pairs.end()) pairs.push_back(p);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  auto report = evaluate_sets(projected, pairs, subsample);
  report.source = "checkpoint";
  report.split = std::string(to_string(split));
  report.run_name = ckpt.metadata.value("run_name", std::string("run"));
  if (!out_dir.empty()) write_report(out_dir, report);
  return report;
}

// ------------------------------------------------------------------- sweeps

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items()) {
    if (key != "output_dir" && key != "csv" && key != "eval_split" && key != "base" && key != "runs") {
      throw ConfigError("unknown sweep key '" + key + "'");
    }
  }
  SweepSpec spec;
  try {
    spec.output_dir = j.at("output_dir").get<std::string>();
    spec.csv_path = j.contains("csv") ? std::filesystem::path(j.at("csv").get<std::string>())
                                      : spec.output_dir / "sweep.csv";
    if (j.contains("eval_split")) spec.eval_split = split_from_string(j.at("eval_split").get<std::string>());
    const nlohmann::json base = j.value("base", nlohmann::json::object());
    for (const auto& run : j.at("runs")) {
      nlohmann::json merged = base;
      merged.merge_patch(run);
      auto config = RunConfig::from_json(merged);
      config.output_dir = spec.output_dir / config.run_name;
      spec.runs.push_back(std::move(config));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sweep spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

void SweepSpec::validate() const {
  if (runs.empty()) throw ConfigError("sweep needs at least one run");
  std::set<std::string> names;
  for (const auto& r : runs) {
    if (!names.insert(r.run_name).second) throw ConfigError("duplicate sweep run name '" + r.run_name + "'");
  }
}

std::string sweep_csv_header() {
  return "run,status,total_params,pair,n,subsample_n," + join(pair_metric_columns());
}

std::vector<CorrelationRow> sweep_correlations(const std::vector<SweepRun>& runs) {
  std::vector<std::string> pair_names;
  for (const auto& run : runs) {
    if (!run.ok) continue;
    for (const auto& p : run.report.pairs) {
      if (std::find(pair_names.begin(), pair_names.end(), p.pair) == pair_names.end()) {
        pair_names.push_back(p.pair);
      }
    }
  }
  const std::vector<std::string> against = {"total_params", "r1_macro", "r5_macro", "r10_macro"};
  std::vector<CorrelationRow> out;
  for (const auto& pair : pair_names) {
    for (const auto& metric : sweep_metrics()) {
      for (const auto& target : against) {
        std::vector<std::pair<double, double>> records;
        for (const auto& run : runs) {
          if (!run.ok) continue;
          for (const auto& p : run.report.pairs) {
            if (p.pair != pair) continue;
            const double t = target == "total_params" ? static_cast<double>(run.total_parameters)
                                                      : metric_value(p, target);
            records.emplace_back(metric_value(p, metric), t);
          }
        }
        CorrelationRow row{pair, metric, target, std::nullopt, "ok"};
        if (records.size() < 3) {
          row.status = "insufficient";
        } else {
          try {
            row.value = correlations(records);
          } catch (const DegenerateError&) {
            row.status = "degenerate";
          }
        }
        out.push_back(std::move(row));
      }
    }
  }
  return out;
}

SweepResult cmd_sweep(const SweepSpec& spec) {
  spec.validate();
  SweepResult result;
  for (const auto& config : spec.runs) {
    SweepRun run;
    run.run_name = config.run_name;
    run.total_parameters = config.total_encoder_parameters();
    try {
      cmd_train(config);
      const auto manifest = TripletManifest::load(config.manifest);
      run.report = cmd_eval(config.output_dir / "checkpoints" / "best.ckpt", manifest,
                            spec.eval_split, config.eval_subsample, config.output_dir / "eval");
      run.ok = true;
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    result.runs.push_back(std::move(run));
  }
  result.correlations = sweep_correlations(result.runs);

  std::string csv = sweep_csv_header() + "\n";
  const std::size_t metric_count = pair_metric_columns().size();
  for (const auto& run : result.runs) {
    const std::string prefix =
        csv_field(run.run_name) + "," + (run.ok ? "ok" : "failed") + "," + std::to_string(run.total_parameters);
    if (!run.ok) {
      csv += prefix + ",,,";
      csv += std::string(metric_count, ',') + "\n";
      continue;
    }
    for (const auto& p : run.report.pairs) {
      std::vector<std::string> fields = {prefix, p.pair, std::to_string(p.n), std::to_string(p.subsample_n)};
      for (double v : pair_metric_values(p)) fields.push_back(fmt(v));
      csv += join(fields) + "\n";
    }
  }
  binary::write_file_atomic(spec.csv_path.string(), csv);

  std::string corr = "pair,metric,against,pearson,spearman,status\n";
  for (const auto& row : result.correlations) {
    corr += row.pair + "," + row.metric + "," + row.against + "," +
            (row.value ? fmt(row.value->pearson) : "") + "," +
            (row.value ? fmt(row.value->spearman) : "") + "," + row.status + "\n";
  }
  binary::write_file_atomic((spec.output_dir / "correlations.csv").string(), corr);

  nlohmann::json failures = nlohmann::json::array();
  for (const auto& run : result.runs) {
    if (!run.ok) failures.push_back({{"run", run.run_name}, {"error", run.error}});
  }
  binary::write_file_atomic((spec.output_dir / "failures.json").string(), failures.dump(2) + "\n");
  return result;
}

// ----------------------------------------------------------------- id-score

IdScoreResult cmd_id_score(const std::filesystem::path& surprisal_file,
                           const std::filesystem::path& out_dir) {
  const auto records = load_surprisals(surprisal_file);
  IdScoreResult result;
  std::vector<std::string> variant_order;
  std::map<std::string, std::vector<IDRecord>> by_variant;
  std::string csv = "id,variant,tokens,id_value,mean_per_token\n";
  for (const auto& rec : records) {
    auto id = compute_id(rec);
    if (rec.variant) {
      if (!by_variant.contains(*rec.variant)) variant_order.push_back(*rec.variant);
      by_variant[*rec.variant].push_back(id);
    }
    csv += csv_field(id.id) + "," + csv_field(rec.variant.value_or("")) + "," +
           std::to_string(id.token_count) + "," + fmt(id.id_value) + "," + fmt(id.mean_per_token) + "\n";
    result.captions.push_back(std::move(id));
  }
  result.dataset = dataset_id(result.captions);
  std::vector<std::pair<std::string, double>> means;
  for (const auto& name : variant_order) {
    const auto d = dataset_id(by_variant.at(name));
    result.variants.emplace_back(name, d);
    means.emplace_back(name, d.mean_id);
  }
  if (means.size() >= 2) result.ranking = rank_variants(means);

  auto to_json = [](const DatasetID& d) {
    return nlohmann::json{{"captions", d.captions},
                          {"mean_id", d.mean_id},
                          {"mean_tokens", d.mean_tokens},
                          {"mean_per_token", d.mean_per_token}};
  };
  nlohmann::json summary{{"dataset", to_json(result.dataset)}};
  summary["variants"] = nlohmann::json::object();
  for (const auto& [name, d] : result.variants) summary["variants"][name] = to_json(d);
  summary["ranking"] = result.ranking;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    binary::write_file_atomic((out_dir / "ids.csv").string(), csv);
    binary::write_file_atomic((out_dir / "summary.json").string(), summary.dump(2) + "\n");
  }
  return result;
}

}  // namespace trialign
