// Command-line entry point: gen-synthetic, baseline, train, eval, sweep, id-score.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "trialign/binary_io.hpp"
#include "trialign/commands.hpp"
#include "trialign/errors.hpp"

namespace {

using trialign::ConfigError;

std::filesystem::path output_root() {
  if (const char* env = std::getenv("TRIALIGN_OUTPUT_ROOT"); env != nullptr && *env != '\0') {
    return env;
  }
  return "trialign-out";
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(trialign::binary::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::filesystem::path or_default(const std::string& out, const char* leaf) {
  return out.empty() ? output_root() / leaf : std::filesystem::path(out);
}

void print_report(const trialign::AlignmentReport& report) {
  std::cout << report.to_csv();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trialign: trimodal contrastive alignment toolkit"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic trimodal dataset");
  std::string gen_spec, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec, "Synthetic spec JSON (defaults when omitted)");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--seed", gen_seed, "Override the spec seed");

  // baseline
  auto* base = app.add_subcommand("baseline", "Metrics on raw normalized embeddings");
  std::string base_manifest, base_out, base_split = "test";
  std::size_t base_max_n = 2000;
  std::uint64_t base_seed = 42;
  base->add_option("--manifest", base_manifest, "Triplet manifest")->required();
  base->add_option("--split", base_split, "train|val|test");
  base->add_option("--out", base_out, "Output directory");
  base->add_option("--max-n", base_max_n, "Subsample size for geometric metrics");
  base->add_option("--subsample-seed", base_seed, "Subsample seed");

  // train
  auto* tr = app.add_subcommand("train", "Train projection heads");
  std::string tr_config, tr_manifest, tr_out, tr_variant;
  std::optional<int> tr_epochs;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_batch, tr_dout;
  std::optional<double> tr_lr, tr_tau;
  tr->add_option("--config", tr_config, "Run config JSON");
  tr->add_option("--manifest", tr_manifest, "Override manifest path");
  tr->add_option("--out", tr_out, "Override run directory");
  tr->add_option("--variant", tr_variant, "trimodal | vl_ts | bimodal:<pair>[,<pair>]");
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--batch-size", tr_batch);
  tr->add_option("--d-out", tr_dout);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--tau", tr_tau);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_manifest, ev_out, ev_split = "test";
  std::size_t ev_max_n = 2000;
  std::uint64_t ev_seed = 42;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--manifest", ev_manifest, "Triplet manifest")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--out", ev_out, "Output directory");
  ev->add_option("--max-n", ev_max_n);
  ev->add_option("--subsample-seed", ev_seed);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Train and evaluate a list of configurations");
  std::string sw_spec;
  sw->add_option("--spec", sw_spec, "Sweep spec JSON")->required();

  // id-score
  auto* ids = app.add_subcommand("id-score", "Information density from per-token surprisals");
  std::string ids_input, ids_out;
  ids->add_option("--input", ids_input, "Surprisal NDJSON")->required();
  ids->add_option("--out", ids_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      trialign::SynthSpec spec;
      if (!gen_spec.empty()) spec = trialign::SynthSpec::from_json(read_json(gen_spec));
      if (gen_seed) spec.seed = *gen_seed;
      const auto dir = or_default(gen_out, "synthetic");
      trialign::generate(spec, dir);
      std::cout << (dir / "manifest.json").string() << "\n";
    } else if (*base) {
      const auto manifest = trialign::TripletManifest::load(base_manifest);
      const auto report = trialign::cmd_baseline(manifest, trialign::split_from_string(base_split),
                                                 {base_max_n, base_seed}, or_default(base_out, "baseline"));
      print_report(report);
    } else if (*tr) {
      nlohmann::json j = tr_config.empty() ? nlohmann::json::object() : read_json(tr_config);
      if (!tr_manifest.empty()) j["manifest"] = tr_manifest;
      if (!tr_out.empty()) j["output_dir"] = tr_out;
      if (!tr_variant.empty()) j["variant"] = tr_variant;
      if (tr_epochs) j["epochs"] = *tr_epochs;
      if (tr_seed) j["seed"] = *tr_seed;
      if (tr_batch) j["batch_size"] = *tr_batch;
      if (tr_dout) j["d_out"] = *tr_dout;
      if (tr_lr) j["base_lr"] = *tr_lr;
      if (tr_tau) j["tau"] = *tr_tau;
      auto config = trialign::RunConfig::from_json(j);
      if (config.output_dir.empty()) config.output_dir = output_root() / config.run_name;
      const auto result = trialign::cmd_train(config);
      std::cout << "best epoch " << result.log.best_epoch << ", val loss " << result.log.best_val_loss
                << ", run dir " << config.output_dir.string() << "\n";
    } else if (*ev) {
      const auto manifest = trialign::TripletManifest::load(ev_manifest);
      const auto report = trialign::cmd_eval(ev_ckpt, manifest, trialign::split_from_string(ev_split),
                                             {ev_max_n, ev_seed}, or_default(ev_out, "eval"));
      print_report(report);
    } else if (*sw) {
      const auto spec = trialign::SweepSpec::from_json(read_json(sw_spec));
      const auto result = trialign::cmd_sweep(spec);
      std::size_t failed = 0;
      for (const auto& run : result.runs) failed += run.ok ? 0 : 1;
      std::cout << result.runs.size() << " runs, " << failed << " failed; csv " << spec.csv_path.string()
                << "\n";
    } else if (*ids) {
      const auto result = trialign::cmd_id_score(ids_input, or_default(ids_out, "id-score"));
      std::cout << "captions " << result.dataset.captions << ", mean ID " << result.dataset.mean_id
                << ", mean tokens " << result.dataset.mean_tokens << "\n";
      for (const auto& name : result.ranking) std::cout << name << "\n";
    }
  } catch (const trialign::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
