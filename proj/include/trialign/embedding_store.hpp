#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace trialign {

/// `vl` is the joint vision-language embedding used only by the hierarchical
/// objective; the three core modalities are ts, img and txt.
enum class Modality : std::uint8_t { ts = 0, img = 1, txt = 2, vl = 3 };

inline constexpr Modality kCoreModalities[] = {Modality::ts, Modality::img, Modality::txt};

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view name);

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split split_from_string(std::string_view name);

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One modality's frozen-encoder outputs. Immutable once built through
/// `make`, which enforces finiteness and id uniqueness.
class EmbeddingSet {
 public:
  static EmbeddingSet make(Modality modality, RowMatrixF data, std::vector<std::string> ids);

  [[nodiscard]] Modality modality() const { return modality_; }
  [[nodiscard]] std::size_t n() const { return static_cast<std::size_t>(data_.rows()); }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(data_.cols()); }
  [[nodiscard]] const RowMatrixF& data() const { return data_; }
  [[nodiscard]] const std::vector<std::string>& ids() const { return ids_; }

  /// Rows `indices` in the given order.
  [[nodiscard]] EmbeddingSet select(const std::vector<std::size_t>& indices) const;
  [[nodiscard]] Eigen::MatrixXd to_double() const { return data_.cast<double>(); }

 private:
  EmbeddingSet(Modality modality, RowMatrixF data, std::vector<std::string> ids)
      : modality_(modality), data_(std::move(data)), ids_(std::move(ids)) {}

  Modality modality_;
  RowMatrixF data_;
  std::vector<std::string> ids_;
};

EmbeddingSet load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);

/// Divides every row by its Euclidean norm (computed in double).
/// Throws DataError naming the id of any zero row.
EmbeddingSet normalize(const EmbeddingSet& set);

enum class JoinMode { id, position };

struct TripletManifest {
  std::map<Modality, std::map<Split, std::filesystem::path>> files;
  JoinMode join = JoinMode::id;

  /// Relative paths inside the document resolve against the manifest's directory.
  static TripletManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Row-aligned sets for one split, keyed by modality.
struct JoinedSplit {
  std::map<Modality, EmbeddingSet> sets;

  [[nodiscard]] std::size_t n() const;
  [[nodiscard]] const EmbeddingSet& at(Modality m) const;
  [[nodiscard]] bool has(Modality m) const { return sets.contains(m); }
};

/// Loads and row-aligns the `required` modalities (plus any other modality
/// the manifest lists for the split). In id mode rows follow the order of the
/// first present modality in ts, img, txt, vl order; in position mode every
/// set takes that modality's ids.
JoinedSplit join_triplets(const TripletManifest& manifest, Split split,
                          const std::vector<Modality>& required = {std::begin(kCoreModalities),
                                                                   std::end(kCoreModalities)});

struct SubsampleSpec {
  std::size_t max_n = 2000;
  std::uint64_t seed = 42;
};

/// min(n, max_n) distinct indices in ascending order; the identity when n <= max_n.
std::vector<std::size_t> subsample_indices(std::size_t n, const SubsampleSpec& spec = {});

}  // namespace trialign
