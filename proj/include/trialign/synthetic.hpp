#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>

#include <json.hpp>

#include "trialign/embedding_store.hpp"

namespace trialign {

struct ModalityView {
  std::size_t ambient_dim = 64;
  double informative_fraction = 1.0;  // share of latent coordinates the view keeps
  double noise = 0.0;                 // std-dev of isotropic noise in the ambient block
  std::size_t nuisance_dim = 0;       // appended standard-normal coordinates
};

/// Trimodal data drawn from one latent process. Each view is
///   A_m * z[0 : round(rho_m * r)] + sigma_m * eps  (ambient block)
/// followed by `nuisance_dim` independent N(0, 1) coordinates, where A_m has
/// orthonormal columns. With `shared_latent = false` every modality draws its
/// own latent, so views are independent.
struct SynthSpec {
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::size_t latent_dim = 8;
  std::map<Modality, ModalityView> views{
      {Modality::ts, {}}, {Modality::img, {}}, {Modality::txt, {}}};
  bool shared_latent = true;
  std::uint64_t seed = 0;

  /// Number of latent coordinates kept by modality `m`.
  [[nodiscard]] std::size_t informative_dims(Modality m) const;
  /// ConfigError on any violated invariant.
  void validate() const;

  static SynthSpec from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::json to_json() const;
};

struct SyntheticData {
  std::map<Split, std::map<Modality, EmbeddingSet>> splits;
};

/// In-memory generation; deterministic in `spec.seed`.
SyntheticData generate_data(const SynthSpec& spec);

/// Writes `<modality>_<split>.emb` files and `manifest.json` under `out_dir`
/// and returns the manifest.
TripletManifest generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

struct ChanceFloor {
  double recall_at_1 = 0.0;
  std::optional<double> mutual_knn;  // undefined unless n > k
  double mad_degrees = 90.0;
  double cosine = 0.0;
};

/// Expected metrics for independent views of n samples. ConfigError when n == 0.
ChanceFloor chance_floor(std::size_t n, int k = 5);

}  // namespace trialign
