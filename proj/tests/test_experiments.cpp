#include "deca/experiments.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace deca;
using experiments::ScenarioConfig;
using experiments::TrialRecord;

namespace {

ScenarioConfig small_config() {
  ScenarioConfig c;
  c.scenario_id = "small";
  c.grid = {20, 20};
  c.rho = {0.2};
  c.comm_radius = 6.0;
  c.k = {20};
  c.deployments = 2;
  c.codings = 2;
  c.completion.max_iterations = 300;
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

void expect_same_outcome(const TrialRecord& a, const TrialRecord& b) {
  EXPECT_EQ(a.scenario_id, b.scenario_id);
  EXPECT_EQ(a.deploy_seed, b.deploy_seed);
  EXPECT_EQ(a.code_seed, b.code_seed);
  EXPECT_EQ(a.k_total, b.k_total);
  EXPECT_EQ(a.nodes, b.nodes);
  EXPECT_EQ(a.eps_vec, b.eps_vec);
  EXPECT_EQ(a.eps_mat, b.eps_mat);
  EXPECT_EQ(a.energy, b.energy);
  EXPECT_EQ(a.energy_baseline, b.energy_baseline);
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.level1_residual, b.level1_residual);
  EXPECT_EQ(a.error, b.error);
}

TrialRecord record(const std::string& id, std::uint64_t deploy, std::uint64_t code, std::size_t k, double eps) {
  TrialRecord r;
  r.scenario_id = id;
  r.deploy_seed = deploy;
  r.code_seed = code;
  r.rho = 0.18;
  r.scheme = "HYBRID_CS";
  r.trees = 1;
  r.k_total = k;
  r.eps_vec = eps;
  r.eps_mat = 2 * eps;
  r.energy = 10.0;
  r.energy_baseline = 20.0;
  r.mu = 1.0;
  r.wall_ms = 5.0;
  return r;
}

}  // namespace

TEST(ScenarioConfigJson, DefaultsAndOverrides) {
  const auto c = experiments::config_from_json(nlohmann::json::parse(R"({
    "scenario_id": "x",
    "field": {"source": "smooth-random", "correlation_length": 7.5, "seed": 3, "temporal_step": 0.2},
    "grid": [30, 40], "rho": [0.14, 0.22], "comm_radius": 6, "rounds": 3,
    "aggregation": {"scheme": "HYBRID_CS", "trees": 4, "k": [40, 80], "budget_divisor": 3,
                    "recovery": "IR", "spatiotemporal": true},
    "basis": {"alpha": -2, "beta": 0.5, "operator": "LAMBDA_OVER_2", "gamma": 3, "threshold": 0.01,
              "temporal_rate": 0.25, "operator_fallback": false},
    "solver": {"sensing": "BERNOULLI", "eta": 0.05, "l1_max_iterations": 50, "delta_rule": "fixed",
               "delta": 0.5, "mc_max_iterations": 60, "direct_baseline": true},
    "trials": {"deployments": 3, "codings": 2, "base_seed": 9},
    "full_grid_reference": true
  })"));
  EXPECT_EQ(c.scenario_id, "x");
  EXPECT_EQ(c.field.source, experiments::FieldSource::SmoothRandom);
  EXPECT_EQ(c.field.correlation_length, 7.5);
  EXPECT_EQ(c.field.seed, 3u);
  EXPECT_EQ(c.grid.rows, 30);
  EXPECT_EQ(c.grid.cols, 40);
  EXPECT_EQ(c.rho, (std::vector<double>{0.14, 0.22}));
  EXPECT_EQ(c.rounds, 3u);
  EXPECT_EQ(c.trees, 4u);
  EXPECT_EQ(c.k, (std::vector<std::size_t>{40, 80}));
  EXPECT_EQ(c.budget_divisor, 3.0);
  EXPECT_EQ(c.recovery, experiments::RecoveryMode::Independent);
  EXPECT_TRUE(c.spatiotemporal);
  EXPECT_EQ(c.basis.laplacian.alpha, -2.0);
  EXPECT_EQ(c.basis.laplacian.kind, wavelets::OperatorKind::HalfLaplacian);
  EXPECT_FALSE(c.operator_fallback);
  EXPECT_EQ(c.basis.gamma, 3);
  EXPECT_EQ(c.temporal_rate, 0.25);
  EXPECT_EQ(c.sensing, cs::EntryKind::Bernoulli);
  EXPECT_EQ(c.l1.max_iterations, 50u);
  EXPECT_EQ(c.delta_rule, experiments::DeltaRule::Fixed);
  EXPECT_EQ(c.delta, 0.5);
  EXPECT_EQ(c.completion.max_iterations, 60u);
  EXPECT_TRUE(c.direct_baseline);
  EXPECT_EQ(c.deployments, 3u);
  EXPECT_EQ(c.base_seed, 9u);
  EXPECT_TRUE(c.full_grid_reference);

  const auto d = experiments::config_from_json(nlohmann::json::parse(R"({"aggregation": {"k": 10}})"));
  EXPECT_EQ(d.rho, (std::vector<double>{0.18}));
  EXPECT_EQ(d.deployments, 10u);
  EXPECT_EQ(d.codings, 10u);
  EXPECT_EQ(d.eta, 0.01);
  EXPECT_EQ(d.delta_rule, experiments::DeltaRule::Residual);
  EXPECT_EQ(d.delta_scale, 1.0);
  EXPECT_EQ(d.basis.laplacian.kind, wavelets::OperatorKind::IdentityMinusLaplacian);
}

TEST(ScenarioConfigJson, RejectsInconsistentConfigs) {
  auto bad = [](const char* text) { return experiments::config_from_json(nlohmann::json::parse(text)); };
  EXPECT_THROW(bad(R"({"aggregation": {}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"k": 10}, "rho": 1.5})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"trees": 4, "k_per_tree": [10, 10]}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"scheme": "PLAIN_CS", "trees": 2, "k": 10}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"k": 10, "spatiotemporal": true}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"k": 10, "recovery": "XR"}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"k": 10}, "field": {"source": "image"}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"k": 10}, "basis": {"alpha": 1}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"k": 10}, "trials": {"codings": 0}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"k": "ten"}})"), std::invalid_argument);
  EXPECT_THROW(bad(R"({"aggregation": {"k": 10}, "field": {"source": "csv", "path": "/nonexistent/f.csv"}})"),
               io_error);
  EXPECT_NO_THROW(bad(R"({"aggregation": {"scheme": "NON_AGG"}})"));
}

TEST(ScenarioConfigJson, LoadResolvesRelativeFieldPath) {
  const auto dir = temp_path("deca_cfg_dir");
  std::filesystem::create_directories(dir);
  field::save_field_csv((dir / "f.csv").string(), field::generate_peaks_field(6, 5));
  {
    std::ofstream out(dir / "c.json");
    out << R"({"field": {"source": "csv", "path": "f.csv"}, "aggregation": {"k": 3}})";
  }
  const auto c = experiments::load_config((dir / "c.json").string());
  EXPECT_EQ(c.field.path, (dir / "f.csv").string());
  const auto fields = experiments::scenario_fields(c);
  ASSERT_EQ(fields.size(), 1u);
  EXPECT_EQ(fields[0].rows(), 6);
  EXPECT_EQ(fields[0].cols(), 5);
  EXPECT_THROW(experiments::load_config((dir / "missing.json").string()), io_error);
  std::filesystem::remove_all(dir);
}

TEST(Fields, RotatingSeriesStartsAtFirstFieldAndDriftsSlowly) {
  const auto series = experiments::rotating_field_series(20, 25, 4.0, 7, 5, 0.1);
  ASSERT_EQ(series.size(), 5u);
  EXPECT_EQ(series[0].values(), field::generate_smooth_random_field(20, 25, 4.0, 7).values());
  for (std::size_t r = 1; r < 5; ++r) {
    EXPECT_EQ(series[r].round_index(), r);
    const double change = (series[r].values() - series[r - 1].values()).norm() / series[r - 1].values().norm();
    EXPECT_GT(change, 0.0);
    EXPECT_LT(change, 0.2);
  }
}

TEST(RunScenario, IsDeterministic) {
  auto c = small_config();
  const auto a = experiments::run_scenario(c);
  const auto b = experiments::run_scenario(c);
  ASSERT_EQ(a.size(), 4u);
  ASSERT_EQ(b.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].ok()) << a[i].error;
    expect_same_outcome(a[i], b[i]);
  }
}

TEST(RunScenario, RecordsAreConsistent) {
  auto c = small_config();
  c.codings = 3;
  std::size_t callbacks = 0;
  const auto records = experiments::run_scenario(c, [&](const TrialRecord&) { ++callbacks; });
  ASSERT_EQ(records.size(), 6u);
  EXPECT_EQ(callbacks, records.size());
  for (const auto& r : records) {
    ASSERT_TRUE(r.ok()) << r.error;
    EXPECT_EQ(r.nodes, 80u);
    EXPECT_EQ(r.k_total, 20u);
    EXPECT_GE(r.eps_vec, 0.0);
    EXPECT_GE(r.eps_mat, 0.0);
    EXPECT_GT(r.energy, 0.0);
    EXPECT_LE(r.energy, r.energy_baseline);
    EXPECT_NEAR(r.mu, 1.0, 1e-9);
    EXPECT_GE(r.wall_ms, 0.0);
    EXPECT_EQ(r.delta, r.level1_residual);
    EXPECT_LE(r.bound_ratio, 1.0);
    EXPECT_FALSE(r.operator_used.empty());
  }
  // Deployment seeds are base_seed + d, coding seeds base_seed + c.
  EXPECT_EQ(records[0].deploy_seed, 1u);
  EXPECT_EQ(records[5].deploy_seed, 2u);
  EXPECT_EQ(records[0].code_seed, 1u);
  EXPECT_EQ(records[2].code_seed, 3u);
  // Codings differ, so recoveries do too.
  EXPECT_NE(records[0].eps_vec, records[1].eps_vec);
  // Energies only depend on the deployment.
  EXPECT_EQ(records[0].energy, records[1].energy);
}

TEST(RunScenario, NonAggregationCollectsExactReadings) {
  auto c = small_config();
  c.scheme = routing::Scheme::NonAggregation;
  c.k.clear();
  c.codings = 1;
  for (const auto& r : experiments::run_scenario(c)) {
    ASSERT_TRUE(r.ok()) << r.error;
    EXPECT_EQ(r.eps_vec, 0.0);
    EXPECT_EQ(r.k_total, 0u);
    EXPECT_EQ(r.energy, r.energy_baseline);
    EXPECT_EQ(r.scheme, "NON_AGG");
  }
}

TEST(RunScenario, PlainAndHybridAgreeAtUnitBudgetOnTheSameTree) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = network::deploy({20, 20}, 0.2, seed);
    const auto g = network::build_graph(d, 6.0);
    const auto spt = routing::build_spt(g, d.sink);
    auto hybrid = routing::as_plain_cs(spt, 1);
    hybrid.scheme = routing::Scheme::HybridCs;
    const double baseline = routing::account_traffic(spt, g).total_energy;
    EXPECT_DOUBLE_EQ(routing::account_traffic(routing::as_plain_cs(spt, 1), g).total_energy / baseline,
                     routing::account_traffic(hybrid, g).total_energy / baseline);
  }
  auto c = small_config();
  c.scheme = routing::Scheme::PlainCs;
  c.k = {1};
  c.codings = 1;
  c.completion.max_iterations = 20;
  for (const auto& r : experiments::run_scenario(c)) {
    ASSERT_TRUE(r.ok()) << r.error;
    const auto d = network::deploy({20, 20}, 0.2, r.deploy_seed);
    const auto g = network::build_graph(d, 6.0);
    auto hybrid = routing::as_plain_cs(routing::build_spt(g, d.sink), 1);
    hybrid.scheme = routing::Scheme::HybridCs;
    EXPECT_DOUBLE_EQ(r.energy / r.energy_baseline, routing::account_traffic(hybrid, g).total_energy / r.energy_baseline);
  }
}

TEST(RunScenario, FirstLevelErrorDoesNotGrowWithBudget) {
  auto c = small_config();
  c.grid = {30, 30};
  c.k = {15, 30, 60, 120, 180};
  c.deployments = 2;
  c.codings = 3;
  c.completion.max_iterations = 20;
  const auto cells = experiments::summarize(experiments::run_scenario(c));
  ASSERT_EQ(cells.size(), c.k.size());
  int violations = 0;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    EXPECT_EQ(cells[i].failures, 0u);
    const double rise = cells[i].mean("eps_vec") - cells[i - 1].mean("eps_vec");
    if (rise > 0.0) {
      ++violations;
      EXPECT_LE(rise, 0.005) << "k_total " << cells[i].k_total;
    }
  }
  EXPECT_LE(violations, 1);
  EXPECT_LT(cells.back().mean("eps_vec"), cells.front().mean("eps_vec"));
}

TEST(RunScenario, MultiTreeJointAndIndependentShareMeasurements) {
  auto c = small_config();
  c.grid = {24, 24};
  c.trees = 3;
  c.k = {36};
  c.codings = 1;
  c.deployments = 1;
  c.completion.max_iterations = 20;
  const auto jr = experiments::run_scenario(c);
  c.recovery = experiments::RecoveryMode::Independent;
  const auto ir = experiments::run_scenario(c);
  ASSERT_EQ(jr.size(), 1u);
  ASSERT_EQ(ir.size(), 1u);
  ASSERT_TRUE(jr[0].ok()) << jr[0].error;
  ASSERT_TRUE(ir[0].ok()) << ir[0].error;
  EXPECT_EQ(jr[0].k_total, 36u);
  EXPECT_EQ(jr[0].energy, ir[0].energy);
  EXPECT_EQ(jr[0].mu, ir[0].mu);
  EXPECT_LE(jr[0].mu, 1.0 + 1e-9);
  EXPECT_GT(jr[0].mu, 0.0);
  EXPECT_NE(jr[0].eps_vec, ir[0].eps_vec);
}

TEST(RunScenario, SingleTreeRecoveryModesCoincide) {
  auto c = small_config();
  c.codings = 1;
  c.deployments = 1;
  const auto jr = experiments::run_scenario(c);
  c.recovery = experiments::RecoveryMode::Independent;
  const auto ir = experiments::run_scenario(c);
  expect_same_outcome(jr[0], ir[0]);
}

TEST(RunScenario, SpatioTemporalRunsOverAllRounds) {
  auto c = small_config();
  c.field.source = experiments::FieldSource::SmoothRandom;
  c.field.correlation_length = 4.0;
  c.grid = {15, 15};
  c.rho = {0.2};
  c.rounds = 3;
  c.k = {8};
  c.deployments = 1;
  c.codings = 1;
  c.completion.max_iterations = 20;
  c.spatiotemporal = true;
  const auto joint = experiments::run_scenario(c);
  c.spatiotemporal = false;
  const auto separate = experiments::run_scenario(c);
  ASSERT_TRUE(joint[0].ok()) << joint[0].error;
  ASSERT_TRUE(separate[0].ok()) << separate[0].error;
  EXPECT_EQ(joint[0].k_total, 8u);
  EXPECT_EQ(joint[0].energy, separate[0].energy);
  EXPECT_NE(joint[0].eps_vec, separate[0].eps_vec);
  EXPECT_GT(joint[0].energy, 0.0);
}

TEST(RunScenario, ModuleErrorsAreRecordedPerTrial) {
  auto c = small_config();
  c.comm_radius = 0.5;  // no links: every deployment is disconnected
  const auto records = experiments::run_scenario(c);
  ASSERT_EQ(records.size(), 4u);
  for (const auto& r : records) {
    EXPECT_FALSE(r.ok());
    EXPECT_NE(r.error.find("disconnected"), std::string::npos) << r.error;
  }
  const auto cells = experiments::summarize(records);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].failures, 4u);
  EXPECT_EQ(cells[0].trials, 0u);
  EXPECT_TRUE(std::isnan(cells[0].mean("eps_vec")));

  auto over = small_config();
  over.k = {500};  // more measurements than nodes
  for (const auto& r : experiments::run_scenario(over)) EXPECT_FALSE(r.ok());
}

TEST(RunScenario, FullGridReferenceRow) {
  auto c = small_config();
  c.scheme = routing::Scheme::NonAggregation;
  c.k.clear();
  c.deployments = 1;
  c.codings = 1;
  c.full_grid_reference = true;
  const auto records = experiments::run_scenario(c);
  ASSERT_EQ(records.size(), 2u);
  const auto& ref = records.back();
  ASSERT_TRUE(ref.ok()) << ref.error;
  EXPECT_EQ(ref.scenario_id, "small/full-grid");
  EXPECT_EQ(ref.nodes, 400u);
  EXPECT_EQ(ref.rho, 1.0);
  // Unit hops cost 1, so the energy is the summed Manhattan distance to a
  // central sink: 2 * 20 * (0 + 1 + ... + 10 + 1 + ... + 9) = 4000.
  EXPECT_DOUBLE_EQ(ref.energy, 4000.0);
  EXPECT_EQ(ref.energy, ref.energy_baseline);
}

TEST(RunScenario, BasisCacheReproducesFreshResults) {
  const auto dir = temp_path("deca_basis_cache_test");
  std::filesystem::remove_all(dir);
  auto c = small_config();
  c.deployments = 1;
  c.codings = 1;
  const auto fresh = experiments::run_scenario(c);
  c.basis_cache_dir = dir.string();
  const auto first = experiments::run_scenario(c);
  ASSERT_FALSE(std::filesystem::is_empty(dir));
  const auto cached = experiments::run_scenario(c);
  expect_same_outcome(fresh[0], first[0]);
  expect_same_outcome(fresh[0], cached[0]);
  EXPECT_EQ(fresh[0].operator_used, cached[0].operator_used);
  std::filesystem::remove_all(dir);
}

TEST(ResultsCsv, EmptyRecordSetIsHeaderOnly) {
  EXPECT_EQ(experiments::format_results_csv({}),
            "scenario_id,deploy_seed,code_seed,rho,scheme,trees,k_total,eps_vec,eps_mat,energy,energy_baseline,mu,"
            "wall_ms\n");
}

TEST(ResultsCsv, ExactRowsAndAggregates) {
  std::vector<TrialRecord> records{record("s", 2, 1, 10, 0.5), record("s", 1, 1, 10, 0.25)};
  auto failed = record("s", 3, 1, 10, 0.0);
  failed.error = "boom";
  failed.eps_vec = std::numeric_limits<double>::quiet_NaN();
  records.push_back(failed);
  EXPECT_EQ(experiments::format_results_csv(records),
            "scenario_id,deploy_seed,code_seed,rho,scheme,trees,k_total,eps_vec,eps_mat,energy,energy_baseline,mu,"
            "wall_ms\n"
            "s,1,1,0.18,HYBRID_CS,1,10,0.25,0.5,10,20,1,5\n"
            "s,2,1,0.18,HYBRID_CS,1,10,0.5,1,10,20,1,5\n"
            "s,3,1,0.18,HYBRID_CS,1,10,nan,0,10,20,1,5\n"
            "s,mean,,0.18,HYBRID_CS,1,10,0.375,0.75,10,20,1,5\n"
            "s,std,,0.18,HYBRID_CS,1,10,0.1767766953,0.3535533906,0,0,0,0\n");
}

TEST(ResultsCsv, RowCountAndOrderIndependence) {
  std::vector<TrialRecord> records;
  for (std::uint64_t d = 1; d <= 10; ++d)
    for (std::uint64_t c = 1; c <= 10; ++c) records.push_back(record("s", d, c, 10 * (1 + d % 2), 0.01 * c));
  const auto text = experiments::format_results_csv(records);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 100 + 2 * 2);
  std::mt19937_64 rng(3);
  auto shuffled = records;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_EQ(experiments::format_results_csv(shuffled), text);
}

TEST(ResultsCsv, ReEmissionIsByteIdentical) {
  std::vector<TrialRecord> records{record("a", 1, 2, 5, 0.3), record("b", 1, 1, 5, 0.1)};
  const auto p1 = temp_path("deca_results_1.csv").string();
  const auto p2 = temp_path("deca_results_2.csv").string();
  experiments::emit_results_csv(records, p1);
  experiments::emit_results_csv(records, p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
  EXPECT_EQ(read_file(p1), experiments::format_results_csv(records));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
  EXPECT_THROW(experiments::emit_results_csv(records, "/nonexistent-dir/r.csv"), io_error);
}

TEST(Summaries, MeanAndSampleDeviationPerCell) {
  std::vector<TrialRecord> records{record("s", 1, 1, 10, 0.1), record("s", 1, 2, 10, 0.3), record("s", 1, 1, 20, 0.2)};
  const auto cells = experiments::summarize(records);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].k_total, 10u);
  EXPECT_EQ(cells[0].trials, 2u);
  EXPECT_NEAR(cells[0].mean("eps_vec"), 0.2, 1e-15);
  EXPECT_NEAR(cells[0].stddev("eps_vec"), std::sqrt(0.02), 1e-15);
  EXPECT_NEAR(cells[0].mean("energy_ratio"), 0.5, 1e-15);
  EXPECT_EQ(cells[1].stddev("eps_vec"), 0.0);
}
