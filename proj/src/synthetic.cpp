#include "trialign/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "trialign/errors.hpp"
#include "trialign/random.hpp"

namespace trialign {
namespace {

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

// Q factor of a Gaussian draw, signs fixed so the factorization is unique.
Eigen::MatrixXd orthonormal_columns(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::MatrixXd g = gaussian(rng, rows, cols);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < cols; ++c) {
    if (r(c, c) < 0.0) q.col(c) *= -1.0;
  }
  return q;
}

std::string sample_id(Split split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%07zu", std::string(to_string(split)).c_str(), i);
  return buf;
}

}  // namespace

std::size_t SynthSpec::informative_dims(Modality m) const {
  const double rho = views.at(m).informative_fraction;
  return static_cast<std::size_t>(std::llround(rho * static_cast<double>(latent_dim)));
}

void SynthSpec::validate() const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (n_train == 0 || n_val == 0 || n_test == 0) throw ConfigError("split sizes must be positive");
  if (views.empty()) throw ConfigError("at least one modality view is required");
  for (const auto& [m, v] : views) {
    const std::string name(to_string(m));
    if (!(v.informative_fraction > 0.0 && v.informative_fraction <= 1.0)) {
      throw ConfigError(name + ": informative_fraction must lie in (0, 1]");
    }
    if (informative_dims(m) < 1) {
      throw ConfigError(name + ": informative_fraction keeps no latent coordinate");
    }
    if (!(v.noise >= 0.0)) throw ConfigError(name + ": noise must be non-negative");
    if (v.ambient_dim < informative_dims(m)) {
      throw ConfigError(name + ": ambient_dim smaller than the informative block");
    }
  }
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  static const char* kKeys[] = {"n_train", "n_val", "n_test", "latent_dim", "views", "shared_latent", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ConfigError("unknown synthetic spec key '" + key + "'");
    }
  }
  SynthSpec s;
  try {
    s.n_train = j.value("n_train", s.n_train);
    s.n_val = j.value("n_val", s.n_val);
    s.n_test = j.value("n_test", s.n_test);
    s.latent_dim = j.value("latent_dim", s.latent_dim);
    s.shared_latent = j.value("shared_latent", s.shared_latent);
    s.seed = j.value("seed", s.seed);
    if (j.contains("views")) {
      s.views.clear();
      for (const auto& [name, v] : j.at("views").items()) {
        for (const auto& [key, _] : v.items()) {
          if (key != "ambient_dim" && key != "informative_fraction" && key != "noise" &&
              key != "nuisance_dim") {
            throw ConfigError("unknown view key '" + key + "' for modality " + name);
          }
        }
        ModalityView view;
        view.ambient_dim = v.value("ambient_dim", view.ambient_dim);
        view.informative_fraction = v.value("informative_fraction", view.informative_fraction);
        view.noise = v.value("noise", view.noise);
        view.nuisance_dim = v.value("nuisance_dim", view.nuisance_dim);
        s.views[modality_from_string(name)] = view;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json j{{"n_train", n_train}, {"n_val", n_val},           {"n_test", n_test},
                   {"latent_dim", latent_dim}, {"shared_latent", shared_latent}, {"seed", seed}};
  for (const auto& [m, v] : views) {
    j["views"][std::string(to_string(m))] = {{"ambient_dim", v.ambient_dim},
                                             {"informative_fraction", v.informative_fraction},
                                             {"noise", v.noise},
                                             {"nuisance_dim", v.nuisance_dim}};
  }
  return j;
}

SyntheticData generate_data(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::map<Modality, Eigen::MatrixXd> mixing;
  for (const auto& [m, view] : spec.views) {
    mixing[m] = orthonormal_columns(rng, static_cast<Eigen::Index>(view.ambient_dim),
                                    static_cast<Eigen::Index>(spec.informative_dims(m)));
  }
  const auto r = static_cast<Eigen::Index>(spec.latent_dim);
  SyntheticData out;
  for (const auto& [split, count] : {std::pair{Split::train, spec.n_train},
                                     std::pair{Split::val, spec.n_val},
                                     std::pair{Split::test, spec.n_test}}) {
    const auto n = static_cast<Eigen::Index>(count);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < count; ++i) ids.push_back(sample_id(split, i));
    const Eigen::MatrixXd shared = gaussian(rng, n, r);
    for (const auto& [m, view] : spec.views) {
      const Eigen::MatrixXd latent = spec.shared_latent ? shared : gaussian(rng, n, r);
      const auto k = static_cast<Eigen::Index>(spec.informative_dims(m));
      const auto ambient = static_cast<Eigen::Index>(view.ambient_dim);
      const auto nuisance = static_cast<Eigen::Index>(view.nuisance_dim);
      Eigen::MatrixXd x(n, ambient + nuisance);
      x.leftCols(ambient) = latent.leftCols(k) * mixing[m].transpose();
      if (view.noise > 0.0) x.leftCols(ambient) += view.noise * gaussian(rng, n, ambient);
      if (nuisance > 0) x.rightCols(nuisance) = gaussian(rng, n, nuisance);
      out.splits[split].emplace(m, EmbeddingSet::make(m, x.cast<float>(), ids));
    }
  }
  return out;
}

TripletManifest generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  const auto data = generate_data(spec);
  std::filesystem::create_directories(out_dir);
  TripletManifest manifest;
  manifest.join = JoinMode::id;
  for (const auto& [split, sets] : data.splits) {
    for (const auto& [m, set] : sets) {
      const std::string file =
          std::string(to_string(m)) + "_" + std::string(to_string(split)) + ".emb";
      save_embeddings(set, out_dir / file);
      manifest.files[m][split] = file;
    }
  }
  manifest.save(out_dir / "manifest.json");
  for (auto& [m, splits] : manifest.files) {
    for (auto& [s, p] : splits) p = out_dir / p;
  }
  return manifest;
}

ChanceFloor chance_floor(std::size_t n, int k) {
  if (n == 0 || k < 1) throw ConfigError("chance_floor needs n >= 1 and k >= 1");
  ChanceFloor out;
  out.recall_at_1 = 1.0 / static_cast<double>(n);
  if (n > static_cast<std::size_t>(k)) {
    out.mutual_knn = static_cast<double>(k) / static_cast<double>(n - 1);
  }
  return out;
}

}  // namespace trialign
