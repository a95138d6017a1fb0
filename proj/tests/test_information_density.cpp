#include <cmath>
#include <cstdint>

#include <gtest/gtest.h>

#include "support/temp_dir.hpp"
#include "trialign/errors.hpp"
#include "trialign/information_density.hpp"
#include "trialign/random.hpp"

using namespace trialign;
using trialign::testing::spit;
using trialign::testing::TempDir;

TEST(ComputeId, SmallExamples) {
  auto a = compute_id({"a", {2.0, 3.0, 5.0}, {}});
  EXPECT_EQ(a.id_value, 10.0);
  EXPECT_EQ(a.mean_per_token, 10.0 / 3.0);
  EXPECT_EQ(a.token_count, 3u);
  auto b = compute_id({"b", {4.2}, {}});
  EXPECT_EQ(b.id_value, 4.2);
  EXPECT_EQ(b.mean_per_token, 4.2);
}

TEST(ComputeId, ExactWhereNaiveSummationRounds) {
  // Spacing of doubles at 1e16 is 2, so a running sum drops both ones.
  EXPECT_EQ(compute_id({"x", {1e16, 1.0, 1.0}, {}}).id_value, 1e16 + 2.0);
  EXPECT_EQ(compute_id({"y", std::vector<double>(10, 0.1), {}}).id_value, 1.0);
}

TEST(ComputeId, ExactAgainstIntegerArithmetic) {
  // Surprisals on a 2^-20 grid have an exact int64 sum.
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s;
    std::int64_t units = 0;
    const int tokens = 1 + static_cast<int>(rng.below(400));
    for (int t = 0; t < tokens; ++t) {
      const auto u = static_cast<std::int64_t>(rng.below(std::uint64_t{1} << 26));
      units += u;
      s.push_back(std::ldexp(static_cast<double>(u), -20));
    }
    EXPECT_EQ(compute_id({"r", s, {}}).id_value, std::ldexp(static_cast<double>(units), -20));
  }
}

TEST(ComputeId, LinearUnderConcatenationAndMonotone) {
  const std::vector<double> a{1.5, 0.25, 3.0}, b{2.0, 0.5};
  std::vector<double> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  EXPECT_EQ(compute_id({"ab", ab, {}}).id_value,
            compute_id({"a", a, {}}).id_value + compute_id({"b", b, {}}).id_value);
  auto longer = a;
  longer.push_back(1e-9);
  EXPECT_GT(compute_id({"l", longer, {}}).id_value, compute_id({"a", a, {}}).id_value);
}

TEST(ComputeId, RejectsInvalidInput) {
  EXPECT_THROW(compute_id({"e", {}, {}}), DataError);
  EXPECT_THROW(compute_id({"n", {1.0, -0.5}, {}}), DataError);
  EXPECT_THROW(compute_id({"i", {INFINITY}, {}}), DataError);
  EXPECT_THROW(compute_id({"q", {std::nan("")}, {}}), DataError);
}

TEST(DatasetId, Means) {
  auto d = dataset_id({compute_id({"a", {10.0}, {}}), compute_id({"b", {5.0, 15.0}, {}})});
  EXPECT_EQ(d.mean_id, 15.0);
  EXPECT_EQ(d.mean_tokens, 1.5);
  EXPECT_EQ(d.mean_per_token, 10.0);
  EXPECT_EQ(d.captions, 2u);
  auto one = dataset_id({compute_id({"a", {2.0, 3.0}, {}})});
  EXPECT_EQ(one.mean_id, 5.0);
  EXPECT_THROW(dataset_id({}), DataError);
}

TEST(RankVariants, DescendingStableAndPermutation) {
  EXPECT_EQ(rank_variants({{"a", 26.81}, {"b", 69.48}, {"c", 149.05}}), (std::vector<std::string>{"c", "b", "a"}));
  EXPECT_EQ(rank_variants({{"x", 1.0}, {"y", 1.0}, {"z", 2.0}}), (std::vector<std::string>{"z", "x", "y"}));
  EXPECT_EQ(rank_variants({{"solo", 3.0}}), (std::vector<std::string>{"solo"}));
}

TEST(LoadSurprisals, ParsesRecordsAndVariants) {
  TempDir dir;
  spit(dir / "s.ndjson",
       "{\"id\": \"c1\", \"surprisals\": [1.0, 2.5]}\n"
       "\n"
       "{\"id\": 7, \"surprisals\": [0.5], \"variant\": \"dense\"}\n");
  auto recs = load_surprisals(dir / "s.ndjson");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].id, "c1");
  EXPECT_EQ(recs[0].surprisals, (std::vector<double>{1.0, 2.5}));
  EXPECT_FALSE(recs[0].variant.has_value());
  EXPECT_EQ(recs[1].id, "7");
  EXPECT_EQ(recs[1].variant.value(), "dense");
}

TEST(LoadSurprisals, MalformedLineNamesLineNumber) {
  TempDir dir;
  spit(dir / "bad.ndjson", "{\"id\": \"a\", \"surprisals\": [1]}\n{\"id\": \"b\", \"surprisals\": [1,}\n");
  try {
    load_surprisals(dir / "bad.ndjson");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.ndjson:2"), std::string::npos) << e.what();
  }
  spit(dir / "missing.ndjson", "{\"id\": \"a\"}\n");
  EXPECT_THROW(load_surprisals(dir / "missing.ndjson"), DataError);
}

TEST(LoadSurprisals, EmptyFileIsDataError) {
  TempDir dir;
  spit(dir / "empty.ndjson", "");
  EXPECT_THROW(load_surprisals(dir / "empty.ndjson"), DataError);
  spit(dir / "blank.ndjson", "\n  \n");
  EXPECT_THROW(load_surprisals(dir / "blank.ndjson"), DataError);
  EXPECT_THROW(load_surprisals(dir / "absent.ndjson"), DataError);
}
