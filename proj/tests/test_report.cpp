#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_helpers.hpp"

using namespace moe_lens;
using namespace test_helpers;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Pixel bytes after the "255\n" maxval line.
std::string pixels(const std::string& ppm) { return ppm.substr(ppm.find("\n255\n") + 5); }

}  // namespace

TEST(FormatValue, FixedSixDecimals) {
  EXPECT_EQ(format_value(1.0), "1.000000");
  EXPECT_EQ(format_value(-0.5), "-0.500000");
  EXPECT_EQ(format_value(-0.0000001), "0.000000");
  EXPECT_EQ(format_value(kMasked), "");
  EXPECT_THROW(format_value(INFINITY), Error);
}

TEST(Csv, LabelsProvenanceAndMaskedCells) {
  SimilarityMatrix s;
  s.labels = {"E0", "E1"};
  s.kinds = {EntityKind::expert, EntityKind::expert};
  s.values = Matrix::from_rows({{1.0, kMasked}, {kMasked, 1.0}});
  Provenance p{"matrix-sim --layer 0", "abc", 7};
  const auto text = render_csv(to_table(s), &p);
  EXPECT_EQ(text,
            "# command: matrix-sim --layer 0\n# checkpoint: abc\n# seed: 7\n# moe-lens: 0.1.0\n"
            ",E0,E1\nE0,1.000000,\nE1,,1.000000\n");
}

TEST(Heatmap, OneByOneMaxIsWhite) {
  const auto ppm = render_heatmap(Matrix(1, 1, 1.0), {0.0, 1.0}, 1);
  EXPECT_EQ(ppm.substr(0, 3), "P6\n");
  EXPECT_NE(ppm.find("\n1 1\n255\n"), std::string::npos);
  EXPECT_EQ(pixels(ppm), std::string(3, '\xff'));
}

TEST(Heatmap, IdentityPattern) {
  const auto ppm = render_heatmap(Matrix::from_rows({{1, 0}, {0, 1}}), {0.0, 1.0}, 1);
  const std::string w(3, '\xff'), b(3, '\0');
  EXPECT_EQ(pixels(ppm), w + b + b + w);
}

TEST(Heatmap, MaskedCellsRedAndCellSize) {
  const auto ppm = render_heatmap(Matrix(1, 1, kMasked), {0.0, 1.0}, 2);
  EXPECT_NE(ppm.find("\n2 2\n255\n"), std::string::npos);
  std::string red;
  for (int i = 0; i < 4; ++i) red += std::string{'\xa0', '\0', '\0'};
  EXPECT_EQ(pixels(ppm), red);
}

TEST(Heatmap, Errors) {
  EXPECT_THROW(render_heatmap(Matrix(), {0.0, 1.0}), Error);
  EXPECT_THROW(render_heatmap(Matrix(1, 1, 0.0), {1.0, 1.0}), Error);
  EXPECT_THROW(render_heatmap(Matrix(1, 1, 0.0), {0.0, 1.0}, 0), Error);
}

TEST(Emit, ByteIdenticalAndSidecar) {
  TempDir dir("report");
  const Matrix m = Matrix::from_rows({{0.25, -0.5}, {kMasked, 0.75}});
  Provenance p{"test", "00", std::nullopt};
  emit_heatmap(m, dir / "a.ppm", natural_range(Metric::cosine), 4, &p);
  emit_heatmap(m, dir / "b.ppm", natural_range(Metric::cosine), 4, &p);
  emit_csv(to_table(m, {"r0", "r1"}, {"c0", "c1"}), dir / "a.csv", &p);
  emit_csv(to_table(m, {"r0", "r1"}, {"c0", "c1"}), dir / "b.csv", &p);
  EXPECT_EQ(slurp(dir / "a.ppm"), slurp(dir / "b.ppm"));
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(slurp(dir / "a.ppm.range.txt"), "min -1.000000\nmax 1.000000\n");
  EXPECT_FALSE(std::filesystem::exists(dir / "a.ppm.tmp"));
}
