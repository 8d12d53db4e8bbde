#include "deca/field.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace deca;
using field::FieldGrid;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("deca_test_" + name)).string();
}

}  // namespace

TEST(PeaksField, ExtremaMatchFineMeshOfClosedForm) {
  const auto f = field::generate_peaks_field(100, 100);
  ASSERT_EQ(f.rows(), 100);
  ASSERT_EQ(f.cols(), 100);

  // Oracle: the surface itself on a 2001^2 mesh.
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i <= 2000; ++i)
    for (int j = 0; j <= 2000; ++j) {
      const double z = field::peaks(-3.0 + 6.0 * j / 2000.0, -3.0 + 6.0 * i / 2000.0);
      lo = std::min(lo, z);
      hi = std::max(hi, z);
    }
  EXPECT_NEAR(lo, -6.55, 0.05);
  EXPECT_NEAR(hi, 8.11, 0.05);
  // Cell centers sample the same surface; extrema are within one cell of the mesh values.
  EXPECT_NEAR(f.values().minCoeff(), lo, 0.1);
  EXPECT_NEAR(f.values().maxCoeff(), hi, 0.1);
  EXPECT_GE(f.values().minCoeff(), lo - 1e-12);
  EXPECT_LE(f.values().maxCoeff(), hi + 1e-12);
}

TEST(PeaksField, CellValueIsSurfaceAtCellCenter) {
  const auto f = field::generate_peaks_field(10, 20);
  EXPECT_DOUBLE_EQ(f(0, 0), field::peaks(-3.0 + 6.0 * 0.5 / 20, -3.0 + 6.0 * 0.5 / 10));
  EXPECT_DOUBLE_EQ(f(7, 13), field::peaks(-3.0 + 6.0 * 13.5 / 20, -3.0 + 6.0 * 7.5 / 10));
}

TEST(PeaksField, SmallestGridAndDeterminism) {
  const auto f = field::generate_peaks_field(2, 2);
  EXPECT_TRUE(f.values().allFinite());
  EXPECT_EQ(f.values().size(), 4);
  EXPECT_EQ(field::generate_peaks_field(100, 100).values(), field::generate_peaks_field(100, 100).values());
  EXPECT_THROW(field::generate_peaks_field(1, 5), std::invalid_argument);
  EXPECT_THROW(field::generate_peaks_field(5, 0), std::invalid_argument);
}

TEST(FieldGrid, RejectsNonFiniteAndEmpty) {
  linalg::Matrix m = linalg::Matrix::Ones(3, 3);
  m(1, 1) = std::nan("");
  EXPECT_THROW(FieldGrid{m}, std::invalid_argument);
  EXPECT_THROW(FieldGrid{linalg::Matrix(0, 0)}, std::invalid_argument);
}

TEST(SmoothRandomField, DeterministicPerSeed) {
  const auto a = field::generate_smooth_random_field(50, 50, 10.0, 7);
  const auto b = field::generate_smooth_random_field(50, 50, 10.0, 7);
  const auto c = field::generate_smooth_random_field(50, 50, 10.0, 8);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), c.values());
  EXPECT_NEAR(a.values().mean(), 0.0, 1e-12);
  EXPECT_NEAR(a.values().squaredNorm() / 2500.0, 1.0, 1e-12);
}

TEST(SmoothRandomField, LongerCorrelationGivesLowerNumericalRank) {
  auto rank = [](const linalg::Matrix& m) {
    Eigen::JacobiSVD<linalg::Matrix> svd(m);
    const auto& s = svd.singularValues();
    return (s.array() > 1e-6 * s(0)).count();
  };
  const auto smooth = field::generate_smooth_random_field(50, 50, 25.0, 7);
  const auto rough = field::generate_smooth_random_field(50, 50, 2.0, 7);
  EXPECT_LT(rank(smooth.values()), rank(rough.values()));
}

TEST(SmoothRandomField, Preconditions) {
  EXPECT_THROW(field::generate_smooth_random_field(1, 1, 5.0, 7), std::invalid_argument);
  EXPECT_THROW(field::generate_smooth_random_field(10, 10, 0.0, 7), std::invalid_argument);
  EXPECT_THROW(field::generate_smooth_random_field(10, 10, -1.0, 7), std::invalid_argument);
}

TEST(FieldCsv, RoundTripIsBitExact) {
  const auto f = field::generate_smooth_random_field(100, 100, 3.0, 11);
  const auto path = temp_path("field.csv");
  field::save_field_csv(path, f);
  const auto g = field::load_field_csv(path);
  std::filesystem::remove(path);
  ASSERT_EQ(g.rows(), 100);
  ASSERT_EQ(g.cols(), 100);
  EXPECT_EQ(f.values(), g.values());
}

TEST(FieldCsv, RaggedRowReportsLine) {
  std::istringstream in("# header\n1,2,3,4\n5,6,7\n");
  try {
    field::parse_field_csv(in);
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(FieldCsv, NonNumericCellReportsLine) {
  std::istringstream in("1,2\n3,x\n");
  try {
    field::parse_field_csv(in);
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream nan_in("1,nan\n");
  EXPECT_THROW(field::parse_field_csv(nan_in), parse_error);
  std::istringstream empty("# only a comment\n");
  EXPECT_THROW(field::parse_field_csv(empty), parse_error);
}

TEST(ReadingsCsv, ShapeAndRoundTrip) {
  field::ReadingSeries s;
  for (int i = 0; i < 54; ++i) s.node_ids.push_back(i + 1);
  for (int r = 0; r < 10; ++r) s.rounds.push_back(r);
  s.values = linalg::Matrix::Random(10, 54) * 20.0;
  const auto path = temp_path("readings.csv");
  field::save_readings_csv(path, s);
  const auto t = field::load_readings_csv(path);
  std::filesystem::remove(path);
  EXPECT_EQ(t.values.rows(), 10);
  EXPECT_EQ(t.values.cols(), 54);
  EXPECT_EQ(t.node_ids, s.node_ids);
  EXPECT_EQ(t.rounds, s.rounds);
  EXPECT_EQ(t.values, s.values);
}

TEST(ReadingsCsv, DuplicateAndIncompleteRejected) {
  std::istringstream dup("round,node_id,value\n0,1,2.5\n0,2,3.0\n0,1,4.0\n");
  try {
    field::parse_readings_csv(dup);
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  std::istringstream incomplete("round,node_id,value\n0,1,2.5\n0,2,3.0\n1,1,4.0\n");
  EXPECT_THROW(field::parse_readings_csv(incomplete), parse_error);
  std::istringstream no_header("0,1,2.5\n");
  EXPECT_THROW(field::parse_readings_csv(no_header), parse_error);
}

TEST(SampleField, ConstantFieldAndDirectLookup) {
  const auto d = network::deploy({20, 30}, 0.2, 3);
  const FieldGrid five(linalg::Matrix::Constant(20, 30, 5.0));
  EXPECT_TRUE((field::sample_field(five, d).array() == 5.0).all());

  const auto one = network::deployment_from_cells({10, 10}, {{3, 4}, {0, 0}});
  const auto g = field::generate_peaks_field(10, 10);
  EXPECT_EQ(field::sample_field(g, one)(0), g(3, 4));
}

TEST(SampleField, MatchesPerNodeLookupAndIsRepeatable) {
  const auto f = field::generate_peaks_field(100, 100);
  const auto d = network::deploy({100, 100}, 0.18, 42);
  const auto u = field::sample_field(f, d);
  ASSERT_EQ(u.size(), 1800);
  for (std::size_t i = 0; i < d.size(); ++i)
    EXPECT_EQ(u(static_cast<Eigen::Index>(i)), f.values()(d.cells[i].row, d.cells[i].col));
  EXPECT_EQ(u, field::sample_field(f, d));
}

TEST(SampleField, OutOfGridNodeRejected) {
  const auto d = network::deployment_from_cells({10, 10}, {{9, 9}, {0, 0}});
  const auto small = field::generate_peaks_field(5, 5);
  EXPECT_THROW(field::sample_field(small, d), std::invalid_argument);
}
