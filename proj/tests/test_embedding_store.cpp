#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include <gtest/gtest.h>
#include <json.hpp>

#include "support/temp_dir.hpp"
#include "trialign/embedding_store.hpp"
#include "trialign/errors.hpp"

using namespace trialign;
using trialign::testing::slurp;
using trialign::testing::spit;
using trialign::testing::TempDir;

namespace {

EmbeddingSet make_set(Modality m, std::initializer_list<std::initializer_list<float>> rows,
                      std::vector<std::string> ids) {
  RowMatrixF data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (float v : row) data(r, c++) = v;
    ++r;
  }
  return EmbeddingSet::make(m, std::move(data), std::move(ids));
}

EmbeddingSet counting_set(Modality m, std::size_t n, std::size_t dim, std::vector<std::string> ids) {
  RowMatrixF data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = static_cast<float>(i % 7) + 0.5f;
  return EmbeddingSet::make(m, std::move(data), std::move(ids));
}

std::vector<std::string> numbered(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("s" + std::to_string(i));
  return ids;
}

}  // namespace

TEST(EmbeddingFile, RoundTripIsByteIdentical) {
  TempDir dir;
  auto set = make_set(Modality::img, {{1, 0, 0}, {0, 1, 0}}, {"a", "b"});
  save_embeddings(set, dir / "x.emb");
  auto loaded = load_embeddings(dir / "x.emb");
  EXPECT_EQ(loaded.modality(), Modality::img);
  EXPECT_EQ(loaded.n(), 2u);
  EXPECT_EQ(loaded.dim(), 3u);
  EXPECT_EQ(loaded.ids(), set.ids());
  EXPECT_TRUE(loaded.data() == set.data());
  save_embeddings(loaded, dir / "y.emb");
  EXPECT_EQ(slurp(dir / "x.emb"), slurp(dir / "y.emb"));
}

TEST(EmbeddingFile, LayoutMatchesDocumentedHeader) {
  TempDir dir;
  auto set = make_set(Modality::txt, {{1.5f, -2.0f}}, {"only"});
  save_embeddings(set, dir / "x.emb");
  const std::string bytes = slurp(dir / "x.emb");
  // 8 magic + 4 version + 1 tag + 8 n + 8 dim + 2*4 payload + 8 id length + 4 id bytes
  ASSERT_EQ(bytes.size(), 8u + 4 + 1 + 8 + 8 + 8 + 8 + 4);
  EXPECT_EQ(bytes.substr(0, 8), "TRIEMB01");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[13]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[21]), 2u);
  // 1.5f = 0x3FC00000 little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[29]), 0x00u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[31]), 0xC0u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[32]), 0x3Fu);
  EXPECT_EQ(bytes.substr(bytes.size() - 4), "only");
}

TEST(EmbeddingFile, TruncatedPayloadIsFormatError) {
  TempDir dir;
  auto set = counting_set(Modality::ts, 5, 3, numbered(5));
  save_embeddings(set, dir / "x.emb");
  std::string bytes = slurp(dir / "x.emb");
  // Keep the header (n=5) but only four rows of payload.
  spit(dir / "cut.emb", bytes.substr(0, 29 + 4 * 3 * 4));
  EXPECT_THROW(load_embeddings(dir / "cut.emb"), FormatError);
}

TEST(EmbeddingFile, BadMagicIsFormatError) {
  TempDir dir;
  auto set = counting_set(Modality::ts, 2, 2, numbered(2));
  save_embeddings(set, dir / "x.emb");
  std::string bytes = slurp(dir / "x.emb");
  bytes[0] = 'X';
  spit(dir / "bad.emb", bytes);
  EXPECT_THROW(load_embeddings(dir / "bad.emb"), FormatError);
}

TEST(EmbeddingFile, TrailingBytesAreFormatError) {
  TempDir dir;
  save_embeddings(counting_set(Modality::ts, 2, 2, numbered(2)), dir / "x.emb");
  spit(dir / "long.emb", slurp(dir / "x.emb") + "zz");
  EXPECT_THROW(load_embeddings(dir / "long.emb"), FormatError);
}

TEST(EmbeddingFile, NanPayloadIsDataError) {
  TempDir dir;
  auto set = counting_set(Modality::ts, 2, 2, numbered(2));
  save_embeddings(set, dir / "x.emb");
  std::string bytes = slurp(dir / "x.emb");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 29 + 4, &nan, 4);
  spit(dir / "nan.emb", bytes);
  try {
    load_embeddings(dir / "nan.emb");
    FAIL() << "expected DataError";
  } catch (const FormatError&) {
    FAIL() << "NaN must be a DataError, not a FormatError";
  } catch (const DataError&) {
  }
}

TEST(EmbeddingFile, MissingFileIsDataError) {
  TempDir dir;
  EXPECT_THROW(load_embeddings(dir / "absent.emb"), DataError);
}

TEST(EmbeddingSet, RejectsDuplicateIdsAndBadShapes) {
  EXPECT_THROW(make_set(Modality::ts, {{1}, {2}}, {"a", "a"}), DuplicateIdError);
  EXPECT_THROW(make_set(Modality::ts, {{1}, {2}}, {"a"}), DataError);
  EXPECT_THROW(make_set(Modality::ts, {{std::numeric_limits<float>::infinity()}}, {"a"}), DataError);
}

TEST(Normalize, ThreeFourFive) {
  auto out = normalize(make_set(Modality::ts, {{3, 4}}, {"a"}));
  EXPECT_FLOAT_EQ(out.data()(0, 0), 0.6f);
  EXPECT_FLOAT_EQ(out.data()(0, 1), 0.8f);
}

TEST(Normalize, IdempotentAndUnitNorm) {
  auto once = normalize(counting_set(Modality::img, 20, 9, numbered(20)));
  auto twice = normalize(once);
  for (Eigen::Index r = 0; r < once.data().rows(); ++r) {
    EXPECT_NEAR(once.data().row(r).cast<double>().norm(), 1.0, 1e-5);
    for (Eigen::Index c = 0; c < once.data().cols(); ++c) {
      EXPECT_NEAR(once.data()(r, c), twice.data()(r, c), 1e-7);
    }
  }
}

TEST(Normalize, ZeroRowNamesId) {
  try {
    normalize(make_set(Modality::ts, {{1, 1}, {0, 0}}, {"good", "empty-row"}));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("empty-row"), std::string::npos);
  }
}

class JoinTest : public ::testing::Test {
 protected:
  TempDir dir;

  TripletManifest write(const std::map<Modality, EmbeddingSet>& sets, JoinMode mode) {
    TripletManifest m;
    m.join = mode;
    for (const auto& [mod, set] : sets) {
      auto p = dir / (std::string(to_string(mod)) + ".emb");
      save_embeddings(set, p);
      m.files[mod][Split::train] = p;
    }
    return m;
  }
};

TEST_F(JoinTest, IdModeFollowsTimeSeriesOrder) {
  auto ts = make_set(Modality::ts, {{1}, {2}, {3}}, {"a", "b", "c"});
  auto img = make_set(Modality::img, {{10}, {20}, {30}}, {"b", "c", "a"});
  auto txt = make_set(Modality::txt, {{300}, {100}, {200}}, {"c", "a", "b"});
  auto joined = join_triplets(write({{Modality::ts, ts}, {Modality::img, img}, {Modality::txt, txt}}, JoinMode::id),
                              Split::train);
  ASSERT_EQ(joined.n(), 3u);
  for (Modality m : kCoreModalities) {
    EXPECT_EQ(joined.at(m).ids(), (std::vector<std::string>{"a", "b", "c"}));
  }
  EXPECT_FLOAT_EQ(joined.at(Modality::img).data()(0, 0), 30.0f);
  EXPECT_FLOAT_EQ(joined.at(Modality::txt).data()(0, 0), 100.0f);
  EXPECT_FLOAT_EQ(joined.at(Modality::txt).data()(2, 0), 300.0f);
}

TEST_F(JoinTest, IdModeListsMissingIds) {
  auto ts = make_set(Modality::ts, {{1}, {2}, {3}}, {"a", "b", "c"});
  auto img = make_set(Modality::img, {{1}, {2}, {3}}, {"a", "b", "c"});
  auto txt = make_set(Modality::txt, {{1}, {2}, {3}}, {"a", "b", "zz"});
  try {
    join_triplets(write({{Modality::ts, ts}, {Modality::img, img}, {Modality::txt, txt}}, JoinMode::id),
                  Split::train);
    FAIL() << "expected JoinError";
  } catch (const JoinError& e) {
    EXPECT_NE(std::string(e.what()).find('c'), std::string::npos);
  }
}

TEST_F(JoinTest, PositionModeCountMismatch) {
  auto m = write({{Modality::ts, counting_set(Modality::ts, 100, 2, numbered(100))},
                  {Modality::img, counting_set(Modality::img, 100, 2, numbered(100))},
                  {Modality::txt, counting_set(Modality::txt, 99, 2, numbered(99))}},
                 JoinMode::position);
  EXPECT_THROW(join_triplets(m, Split::train), JoinError);
}

TEST_F(JoinTest, PositionModeKeepsRowsAsStored) {
  auto m = write({{Modality::ts, make_set(Modality::ts, {{1}, {2}}, {"x", "y"})},
                  {Modality::img, make_set(Modality::img, {{3}, {4}}, {"p", "q"})},
                  {Modality::txt, make_set(Modality::txt, {{5}, {6}}, {"q", "p"})}},
                 JoinMode::position);
  auto joined = join_triplets(m, Split::train);
  EXPECT_FLOAT_EQ(joined.at(Modality::txt).data()(0, 0), 5.0f);
  EXPECT_EQ(joined.at(Modality::txt).ids(), joined.at(Modality::ts).ids());
}

TEST_F(JoinTest, DuplicateIdUnderIdJoinIsJoinError) {
  auto m = write({{Modality::ts, make_set(Modality::ts, {{1}, {2}}, {"a", "b"})},
                  {Modality::txt, make_set(Modality::txt, {{1}, {2}}, {"a", "b"})}},
                 JoinMode::id);
  // EmbeddingSet::make refuses duplicates, so write the img file by hand.
  save_embeddings(make_set(Modality::img, {{1}, {2}}, {"a", "b"}), dir / "img.emb");
  std::string bytes = slurp(dir / "img.emb");
  bytes[bytes.size() - 1] = 'a';
  spit(dir / "img.emb", bytes);
  m.files[Modality::img][Split::train] = dir / "img.emb";
  EXPECT_THROW(join_triplets(m, Split::train), JoinError);
}

TEST_F(JoinTest, MissingModalityIsJoinError) {
  auto m = write({{Modality::ts, make_set(Modality::ts, {{1}}, {"a"})},
                  {Modality::img, make_set(Modality::img, {{1}}, {"a"})}},
                 JoinMode::id);
  EXPECT_THROW(join_triplets(m, Split::train), JoinError);
  EXPECT_THROW(join_triplets(m, Split::test, {Modality::ts}), JoinError);
}

TEST_F(JoinTest, ManifestRoundTripResolvesRelativePaths) {
  save_embeddings(make_set(Modality::ts, {{1}}, {"a"}), dir / "ts.emb");
  nlohmann::json doc = {{"modalities", {{"ts", {{"train", "ts.emb"}}}}}, {"join", "position"}};
  spit(dir / "manifest.json", doc.dump());
  auto m = TripletManifest::load(dir / "manifest.json");
  EXPECT_EQ(m.join, JoinMode::position);
  EXPECT_EQ(m.files.at(Modality::ts).at(Split::train), dir / "ts.emb");
  m.save(dir / "again.json");
  auto again = TripletManifest::load(dir / "again.json");
  EXPECT_EQ(again.files, m.files);
}

TEST_F(JoinTest, ManifestRejectsUnknownKeys) {
  spit(dir / "manifest.json", R"({"modalities": {}, "joins": "id"})");
  EXPECT_THROW(TripletManifest::load(dir / "manifest.json"), ConfigError);
  spit(dir / "bad.json", R"({"modalities": {"audio": {}}})");
  EXPECT_THROW(TripletManifest::load(dir / "bad.json"), ConfigError);
}

TEST(Subsample, IdentityBelowThreshold) {
  auto idx = subsample_indices(100);
  ASSERT_EQ(idx.size(), 100u);
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], i);
}

TEST(Subsample, DeterministicForFixedInputs) {
  EXPECT_EQ(subsample_indices(5000, {2000, 42}), subsample_indices(5000, {2000, 42}));
  EXPECT_NE(subsample_indices(5000, {2000, 42}), subsample_indices(5000, {2000, 43}));
}

TEST(Subsample, DistinctInRangeBySetMembership) {
  auto idx = subsample_indices(5000, {2000, 42});
  ASSERT_EQ(idx.size(), 2000u);
  std::set<std::size_t> seen;
  for (auto i : idx) {
    EXPECT_LT(i, 5000u);
    EXPECT_TRUE(seen.insert(i).second) << "duplicate index " << i;
  }
}

TEST(Subsample, RoughlyUniformCoverage) {
  // Each index is selected with probability 0.4; count hits in four quarters.
  auto idx = subsample_indices(5000, {2000, 7});
  int quarters[4] = {0, 0, 0, 0};
  for (auto i : idx) ++quarters[i / 1250];
  for (int q : quarters) EXPECT_NEAR(q, 500, 60);
}
