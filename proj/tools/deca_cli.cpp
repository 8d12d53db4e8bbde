// deca: field generation, deployments, scenario runs and direct completion.

#include "deca/deca.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

using namespace deca;

namespace {

struct FieldArgs {
  std::string kind = "peaks";
  int rows = 100;
  int cols = 100;
  double correlation_length = 10.0;
  std::uint64_t seed = 1;
  std::string out;
};

struct DeployArgs {
  int rows = 100;
  int cols = 100;
  double rho = 0.18;
  std::uint64_t seed = 1;
  double radius = network::kDefaultCommRadius;
  std::string out;
};

struct RunArgs {
  std::string config;
  std::string out = "results.csv";
  bool quiet = false;
};

struct CompleteArgs {
  std::string field;
  std::string deployment;
  double delta = -1.0;
  double relative_delta = 1e-6;
  std::size_t max_iterations = 5000;
  std::string out;
  std::string sigma;
};

int generate_field(const FieldArgs& a) {
  const auto f = a.kind == "peaks" ? field::generate_peaks_field(a.rows, a.cols)
                                   : field::generate_smooth_random_field(a.rows, a.cols, a.correlation_length, a.seed);
  field::save_field_csv(a.out, f);
  std::printf("wrote %s (%dx%d %s field)\n", a.out.c_str(), a.rows, a.cols, a.kind.c_str());
  return 0;
}

int deploy(const DeployArgs& a) {
  const auto d = network::deploy({a.rows, a.cols}, a.rho, a.seed);
  const auto g = network::build_graph(d, a.radius);
  network::save_deployment(a.out, d);
  std::printf("wrote %s: %zu nodes, sink %zu, %zu links, %zu component(s)\n", a.out.c_str(), d.size(), d.sink,
              g.edges().size(), g.component_count());
  return 0;
}

int run(const RunArgs& a) {
  const auto config = experiments::load_config(a.config);
  const auto records = experiments::run_scenario(config, [&](const experiments::TrialRecord& r) {
    if (a.quiet) return;
    if (r.ok())
      std::fprintf(stderr, "%s deploy %llu code %llu k %zu: eps_vec %.4f eps_mat %.4f energy ratio %.4f (%.0f ms)\n",
                   r.scenario_id.c_str(), static_cast<unsigned long long>(r.deploy_seed),
                   static_cast<unsigned long long>(r.code_seed), r.k_total, r.eps_vec, r.eps_mat,
                   r.energy / r.energy_baseline, r.wall_ms);
    else
      std::fprintf(stderr, "%s deploy %llu code %llu: failed: %s\n", r.scenario_id.c_str(),
                   static_cast<unsigned long long>(r.deploy_seed), static_cast<unsigned long long>(r.code_seed),
                   r.error.c_str());
  });
  experiments::emit_results_csv(records, a.out);
  for (const auto& s : experiments::summarize(records))
    std::printf("%s rho %.3g %s trees %zu k_total %zu: %zu ok, %zu failed, eps_vec %.4f, eps_mat %.4f, "
                "energy ratio %.4f\n",
                s.scenario_id.c_str(), s.rho, s.scheme.c_str(), s.trees, s.k_total, s.trials, s.failures,
                s.mean("eps_vec"), s.mean("eps_mat"), s.mean("energy_ratio"));
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

int complete(const CompleteArgs& a) {
  const auto f = field::load_field_csv(a.field);
  const auto d = network::load_deployment(a.deployment);
  if (d.grid.rows != f.rows() || d.grid.cols != f.cols())
    throw std::invalid_argument("deployment grid does not match the field dimensions");
  const linalg::Vector u = field::sample_field(f, d);
  const double delta = a.delta >= 0.0 ? a.delta : a.relative_delta * u.norm();
  mc::CompletionOptions opts;
  opts.max_iterations = a.max_iterations;
  const auto r = mc::complete(mc::observations_from(d, u), delta, opts);
  std::printf("n %zu, delta %.6g, iterations %zu, converged %s, rank %zu, residual %.6g\n", d.size(), delta,
              r.iterations, r.converged ? "yes" : "no", r.numerical_rank, r.data_residual);
  std::printf("relative error: spectral %.6f, frobenius %.6f\n", mc::field_error(r.x_hat, f.values()),
              mc::field_error_frobenius(r.x_hat, f.values()));
  if (!a.out.empty()) field::save_field_csv(a.out, field::FieldGrid(r.x_hat));
  if (!a.sigma.empty()) mc::save_singular_values_csv(a.sigma, r.singular_values);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor-field aggregation and recovery experiments"};
  app.require_subcommand(1);

  FieldArgs field_args;
  auto* gen = app.add_subcommand("generate-field", "Write a synthetic field as CSV");
  gen->add_option("--kind", field_args.kind, "peaks or smooth")->check(CLI::IsMember({"peaks", "smooth"}));
  gen->add_option("--rows", field_args.rows)->check(CLI::PositiveNumber);
  gen->add_option("--cols", field_args.cols)->check(CLI::PositiveNumber);
  gen->add_option("--correlation-length", field_args.correlation_length, "smooth fields only");
  gen->add_option("--seed", field_args.seed, "smooth fields only");
  gen->add_option("--out", field_args.out)->required();

  DeployArgs deploy_args;
  auto* dep = app.add_subcommand("deploy", "Write a random deployment as JSON");
  dep->add_option("--rows", deploy_args.rows)->check(CLI::PositiveNumber);
  dep->add_option("--cols", deploy_args.cols)->check(CLI::PositiveNumber);
  dep->add_option("--rho", deploy_args.rho, "coverage ratio");
  dep->add_option("--seed", deploy_args.seed);
  dep->add_option("--radius", deploy_args.radius, "communication radius for the connectivity report");
  dep->add_option("--out", deploy_args.out)->required();

  RunArgs run_args;
  auto* runc = app.add_subcommand("run", "Run a scenario and write the results CSV");
  runc->add_option("--config", run_args.config)->required()->check(CLI::ExistingFile);
  runc->add_option("--out", run_args.out, "results CSV path");
  runc->add_flag("--quiet", run_args.quiet, "no per-trial progress");

  CompleteArgs complete_args;
  auto* comp = app.add_subcommand("complete", "Complete a field from its values at the deployed cells");
  comp->add_option("--field", complete_args.field)->required()->check(CLI::ExistingFile);
  comp->add_option("--deployment", complete_args.deployment)->required()->check(CLI::ExistingFile);
  comp->add_option("--delta", complete_args.delta, "absolute data-constraint radius");
  comp->add_option("--relative-delta", complete_args.relative_delta, "radius relative to ||u|| when --delta is unset");
  comp->add_option("--max-iterations", complete_args.max_iterations);
  comp->add_option("--out", complete_args.out, "completed field CSV");
  comp->add_option("--sigma", complete_args.sigma, "singular values CSV");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return generate_field(field_args);
    if (*dep) return deploy(deploy_args);
    if (*runc) return run(run_args);
    if (*comp) return complete(complete_args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deca: %s\n", e.what());
    return 1;
  }
  return 0;
}
