// Compares the serial reference path against the OpenMP path on the same
// seeded workload and checks that the outputs agree byte for byte.
#include <iostream>
#include <string>

#include "covreg/parallel.hpp"
#include "covreg/serialize.hpp"

using namespace covreg;

int main(int argc, char** argv) {
  int threads = hardware_threads();
  int replicates = 8;
  if (argc > 1) threads = std::stoi(argv[1]);
  if (argc > 2) replicates = std::stoi(argv[2]);

  ScenarioSpec spec = builtin_scenario("table1_q200_small");
  spec.n = 60;
  spec.t_obs = 60;
  spec.q = 80;
  spec.replicate_count = replicates;
  spec.b_splits = 40;

  PenaltySpec penalty;
  FitConfig config;
  config.rng_seed = spec.rng_seed;
  SplitPlan plan;
  plan.n1 = 0;
  plan.b_splits = 0;

  SimOptions serial_opts;
  serial_opts.threads = 1;
  SimOptions parallel_opts;
  parallel_opts.threads = threads;

  std::cout << "workload: " << replicates << " replicates, n=" << spec.n
            << ", T=" << spec.t_obs << ", q=" << spec.q
            << ", B=" << spec.b_splits << "\n";

  double t0 = wall_time_seconds();
  SimReport serial = run_replicates(spec, plan, penalty, config, serial_opts);
  double serial_time = wall_time_seconds() - t0;

  t0 = wall_time_seconds();
  SimReport parallel = run_replicates(spec, plan, penalty, config,
                                      parallel_opts);
  double parallel_time = wall_time_seconds() - t0;

  std::string a = report_to_json(serial).dump();
  std::string b = report_to_json(parallel).dump();

  std::cout << "serial (1 thread):    " << serial_time << " s\n";
  std::cout << "openmp (" << threads << " threads):  " << parallel_time
            << " s\n";
  std::cout << "speedup: " << serial_time / parallel_time << "x\n";
  std::cout << "outputs identical: " << (a == b ? "yes" : "NO") << std::endl;
  return a == b ? 0 : 1;
}
