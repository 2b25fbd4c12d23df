#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "segqc/csv.hpp"
#include "segqc/report.hpp"

using namespace segqc;

namespace {
ScoreRecord scored(const std::string& vol, ClassId cls, std::optional<double> d) {
  ScoreRecord r;
  r.volume_id = vol;
  r.class_id = cls;
  r.predicted_dsc = d;
  return r;
}
}  // namespace

TEST(Report, PerClassAndOverallStatistics) {
  const std::vector<ScoreRecord> recs{scored("a", 1, 0.9), scored("b", 1, 0.7), scored("a", 2, 0.8),
                                      scored("b", 2, 0.5), scored("c", 2, std::nullopt)};
  const auto r = build_report("demo", recs, fixture::organ_classes());
  ASSERT_EQ(r.classes.size(), 2u);
  EXPECT_EQ(r.classes[0].name, "liver");
  EXPECT_NEAR(r.classes[0].mean, 0.8, 1e-15);
  EXPECT_EQ(r.classes[0].below, 1u);
  EXPECT_EQ(r.classes[1].below, 1u);  // 0.8 itself is not below
  EXPECT_EQ(r.count, 4u);
  EXPECT_DOUBLE_EQ(r.fraction_below, 0.5);
  EXPECT_NEAR(r.overall_mean, 0.725, 1e-15);
}

TEST(Report, ThresholdIsStrict) {
  const std::vector<ScoreRecord> recs{scored("a", 1, 0.8), scored("b", 1, 0.7999999)};
  EXPECT_EQ(build_report("t", recs).below, 1u);
  EXPECT_EQ(build_report("t", recs, {}, 0.9).below, 2u);
}

TEST(Report, NothingScoredIsAnError) {
  const std::vector<ScoreRecord> recs{scored("a", 1, std::nullopt)};
  EXPECT_THROW(build_report("t", recs), DataError);
}

TEST(Report, CsvAndTableFormatting) {
  std::vector<ScoreRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(scored("v" + std::to_string(i), 3, i == 0 ? 0.5 : 0.95));
  const auto r = build_report("set, one", recs, fixture::organ_classes());
  const auto t = parse_csv(report_csv(r));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][t.column("dataset")], "set, one");
  EXPECT_EQ(t.rows[0][t.column("class")], "left kidney");
  EXPECT_EQ(t.rows[0][t.column("mean_dsc")], "0.9050");
  EXPECT_EQ(t.rows[1][t.column("pct_below")], "10.0");
  const auto table = report_table(r);
  EXPECT_NE(table.find("left kidney"), std::string::npos);
  EXPECT_NE(table.find("10.0"), std::string::npos);
}

TEST(Report, OracleScoresAreTrueOverlap) {
  auto v = fixture::phantom_volume("o", 60);
  v.candidate = v.ground_truth;
  for (const auto& r : oracle_scores(v)) EXPECT_EQ(*r.predicted_dsc, 1.0);
}

TEST(Csv, QuotingRoundTrip) {
  const std::vector<std::string> fields{"plain", "with,comma", "with \"quotes\"", ""};
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + csv_field(fields[i]);
  const auto t = parse_csv("# comment\n" + line + "\n" + line + "\r\n");
  EXPECT_EQ(t.header, fields);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0], fields);
}

TEST(Csv, RejectsRaggedRowsAndOpenQuotes) {
  EXPECT_THROW(parse_csv("a,b\n1\n"), DataError);
  EXPECT_THROW(parse_csv("a,b\n\"1,2\n"), DataError);
  EXPECT_THROW(parse_csv("a\n1\n").column("b"), DataError);
  EXPECT_EQ(format_optional(std::nullopt), "");
  EXPECT_EQ(format_number(0.25, "%.6f"), "0.250000");
}
