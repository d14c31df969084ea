#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "teshu/experiments.hpp"
#include "teshu/wire.hpp"

using namespace teshu;
namespace ex = teshu::experiments;

namespace {

const char* kFig5Workload = "uniform:n=27500,keys=100000";
const char* kDuplicateHeavy = "uniform:n=50000,keys=20000";
const char* kDuplicationFree = "uniform:n=50000,keys=1000000000";

struct Common {
  std::string topology_file;
  std::optional<double> oversub;
  std::uint64_t seed = 1;
  std::string out;
  std::string scheduler = "deterministic";

  Topology topology() const {
    Topology t = topology_file.empty() ? Topology{} : load_topology(topology_file);
    if (oversub) t.oversubscription = *oversub;
    t.validate();
    return t;
  }
  Scheduler sched() const { return scheduler == "parallel" ? Scheduler::Parallel : Scheduler::Deterministic; }
};

// Appends seed=<seed> unless the spec already names one.
std::string with_seed(const std::string& spec, std::uint64_t seed) {
  if (spec.find("seed=") != std::string::npos || spec.rfind("file:", 0) == 0) return spec;
  return spec + (spec.find(':') == std::string::npos ? ":" : ",") + "seed=" + std::to_string(seed);
}

Workload make_workload(const std::string& spec, const Topology& topo) {
  auto srcs = topo.all_workers();
  return gen_workload(parse_workload_spec(spec, srcs.size()), srcs);
}

void emit(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(c.out, std::ios::binary);
  if (!f) throw InvalidArgument("cannot write " + c.out);
  f << text;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--topology", c.topology_file, "Topology JSON file (default: 2 racks x 5 servers x 2 workers)")
      ->check(CLI::ExistingFile);
  app->add_option("--oversub", c.oversub, "Oversubscription ratio, overrides the topology file")
      ->check(CLI::Range(1.0, 1e6));
  app->add_option("--seed", c.seed, "Seed for workload generation and sampling");
  app->add_option("--out", c.out, "Write output here instead of stdout");
  app->add_option("--scheduler", c.scheduler, "deterministic | parallel")
      ->check(CLI::IsMember({"deterministic", "parallel"}));
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teshu: templated shuffle simulator and manager service"};
  app.require_subcommand(1);

  // sampling-sweep
  Common sweep_c;
  std::vector<std::string> sweep_workloads;
  std::vector<double> sweep_rates;
  std::vector<std::string> sweep_methods{"partition_aware", "random"};
  std::size_t sweep_seeds = 30;
  auto* sweep = app.add_subcommand("sampling-sweep", "Reduction-ratio estimator accuracy and sampling cost");
  sweep->footer(
      "CSV columns:\n"
      "  workload                   workload spec\n"
      "  method                     partition_aware | random\n"
      "  rate                       sampling rate\n"
      "  r_hat_median               median estimated reduction ratio over the seeds\n"
      "  true_ratio                 reduction ratio of the full population (sum combiner)\n"
      "  relative_error             |r_hat_median - true_ratio| / true_ratio\n"
      "  sampling_bytes_fraction    median share of shuffle bytes spent on sampling\n"
      "  modeled_overhead_fraction  median modeled time of network_aware with both guards\n"
      "                             pinned false, over vanilla_push, minus 1 (NA for random)");
  add_common(sweep, sweep_c);
  sweep->add_option("--workload", sweep_workloads, "Workload spec, repeatable")->default_str(kFig5Workload);
  sweep->add_option("--rate", sweep_rates, "Sampling rate, repeatable (default 0.01 0.001 0.0001)")
      ->check(CLI::Range(1e-9, 1.0));
  sweep->add_option("--method", sweep_methods, "partition_aware and/or random")
      ->check(CLI::IsMember({"partition_aware", "random"}))
      ->capture_default_str();
  sweep->add_option("--seeds", sweep_seeds, "Seeds per row")->capture_default_str()->check(CLI::PositiveNumber);

  // decision-matrix
  Common dm_c;
  std::vector<std::string> dm_workloads;
  std::vector<double> dm_oversubs;
  bool dm_json = false;
  auto* dm = app.add_subcommand("decision-matrix", "network_aware decisions and savings per oversubscription");
  dm->footer(
      "CSV columns:\n"
      "  oversub               oversubscription ratio\n"
      "  workload              workload spec\n"
      "  trace                 levels network_aware executed, e.g. \"S,R,G\"\n"
      "  best_trace            fastest of the four pinned variants\n"
      "  bytes_saved_fraction  1 - cross-rack bytes of network_aware / vanilla_push\n"
      "  modeled_speedup       vanilla_push modeled time / network_aware modeled time");
  add_common(dm, dm_c);
  dm->add_option("--workload", dm_workloads, "Workload spec, repeatable")
      ->default_str(std::string(kDuplicateHeavy) + " " + kDuplicationFree);
  dm->add_option("--oversubs", dm_oversubs, "Oversubscription ratios (default 1 4 10)")->check(CLI::Range(1.0, 1e6));
  dm->add_flag("--json", dm_json, "Emit JSON instead of CSV");

  // failures
  Common fail_c;
  std::string fail_workload = kDuplicateHeavy;
  std::uint32_t fail_k = 3;
  std::size_t fail_scenarios = 100;
  auto* fail = app.add_subcommand("failures", "Spine-link failure scenarios");
  fail->footer(
      "CSV columns:\n"
      "  seed                 scenario seed\n"
      "  healthy_fraction     healthy spine share of the worst rack\n"
      "  vanilla_time         vanilla_push modeled time, ms\n"
      "  network_aware_time   network_aware modeled time, ms\n"
      "  no_failure_time      network_aware modeled time without failures, ms\n"
      "  ratio_to_no_failure  network_aware_time / no_failure_time\n"
      "  trace                levels network_aware executed\n"
      "A summary goes to stderr.");
  add_common(fail, fail_c);
  fail->add_option("--workload", fail_workload, "Workload spec")->capture_default_str();
  fail->add_option("-k,--links", fail_k, "Failed spine links per scenario")->capture_default_str();
  fail->add_option("--scenarios", fail_scenarios, "Number of scenarios")->capture_default_str();

  // run
  Common run_c;
  std::string run_template = "network_aware";
  std::string run_workload = kDuplicateHeavy;
  std::optional<double> run_rate;
  std::uint32_t run_fail = 0;
  bool run_outputs = false;
  auto* run = app.add_subcommand("run", "Run one shuffle and print its outcome as JSON");
  add_common(run, run_c);
  run->add_option("--template", run_template, "Template id")->capture_default_str();
  run->add_option("--workload", run_workload, "Workload spec")->capture_default_str();
  run->add_option("--rate", run_rate, "Sampling rate (default 0.01)")->check(CLI::Range(1e-9, 1.0));
  run->add_option("--fail", run_fail, "Inject this many spine-link failures (seeded by --seed)");
  run->add_flag("--outputs", run_outputs, "Include every destination's key/value map");

  // serve-manager
  std::string serve_host = "127.0.0.1";
  std::uint16_t serve_port = 7070;
  std::string serve_dir = TESHU_TEMPLATE_DIR;
  auto* serve = app.add_subcommand("serve-manager", "Run the shuffle manager over TCP until interrupted");
  serve->add_option("--host", serve_host, "IPv4 address to bind")->capture_default_str();
  serve->add_option("--port", serve_port, "Port to bind, 0 picks one")->capture_default_str();
  serve->add_option("--templates", serve_dir, "Directory of .tmpl files")->capture_default_str();

  // install-template
  std::string inst_host = "127.0.0.1";
  std::uint16_t inst_port = 7070;
  std::string inst_file;
  auto* inst = app.add_subcommand("install-template", "Install a template file on a running manager");
  inst->add_option("file", inst_file, "Template file")->required()->check(CLI::ExistingFile);
  inst->add_option("--host", inst_host, "Manager address")->capture_default_str();
  inst->add_option("--port", inst_port, "Manager port")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sweep) {
      Topology topo = sweep_c.topology();
      if (sweep_workloads.empty()) sweep_workloads = {kFig5Workload};
      ex::SweepOptions opt;
      if (!sweep_rates.empty()) opt.rates = sweep_rates;
      opt.methods = sweep_methods;
      opt.seeds = sweep_seeds;
      opt.first_seed = sweep_c.seed;
      opt.scheduler = sweep_c.sched();
      std::string text = std::string(ex::kSweepHeader) + "\n";
      Simulator sim;
      for (const auto& spec : sweep_workloads) {
        auto full = with_seed(spec, sweep_c.seed);
        for (const auto& row : ex::sampling_sweep(sim, topo, CostModel{}, spec, make_workload(full, topo), opt))
          text += ex::to_csv(row) + "\n";
      }
      emit(sweep_c, text);
    } else if (*dm) {
      Topology topo = dm_c.topology();
      if (dm_workloads.empty()) dm_workloads = {kDuplicateHeavy, kDuplicationFree};
      if (dm_oversubs.empty()) dm_oversubs = {1.0, 4.0, 10.0};
      RunConfig cfg;
      cfg.scheduler = dm_c.sched();
      cfg.plan.sampling.seed = dm_c.seed;
      std::string csv = std::string(ex::kDecisionHeader) + "\n";
      nlohmann::json rows = nlohmann::json::array();
      Simulator sim;
      for (const auto& spec : dm_workloads) {
        auto w = make_workload(with_seed(spec, dm_c.seed), topo);
        for (double os : dm_oversubs) {
          auto r = ex::decide(sim, topo, CostModel{}, os, spec, w, cfg);
          csv += ex::to_csv(r) + "\n";
          rows.push_back({{"oversub", r.oversub},
                          {"workload", r.workload},
                          {"trace", r.trace},
                          {"best_trace", r.best_trace},
                          {"bytes_saved_fraction", r.bytes_saved_fraction},
                          {"modeled_speedup", r.modeled_speedup}});
        }
      }
      emit(dm_c, dm_json ? rows.dump(2) + "\n" : csv);
    } else if (*fail) {
      Topology topo = fail_c.topology();
      RunConfig cfg;
      cfg.scheduler = fail_c.sched();
      cfg.plan.sampling.seed = fail_c.seed;
      auto w = make_workload(with_seed(fail_workload, fail_c.seed), topo);
      Simulator sim;
      auto rows = ex::failure_sweep(sim, topo, CostModel{}, w, fail_k, fail_scenarios, fail_c.seed, cfg);
      std::string text = std::string(ex::kFailureHeader) + "\n";
      for (const auto& r : rows) text += ex::to_csv(r) + "\n";
      emit(fail_c, text);
      auto s = ex::summarize(rows);
      std::cerr << "scenarios " << s.scenarios << ", network_aware <= vanilla in " << s.not_slower_than_vanilla
                << ", within 25% of no-failure time in " << s.within_25pct_of_intact << ", ratio min/median/max "
                << ex::fmt(s.ratio_min, 4) << "/" << ex::fmt(s.ratio_median, 4) << "/" << ex::fmt(s.ratio_max, 4)
                << "\n";
    } else if (*run) {
      Topology topo = run_c.topology();
      if (run_fail) topo = inject_spine_failures(topo, run_fail, run_c.seed);
      RunConfig cfg;
      cfg.scheduler = run_c.sched();
      cfg.plan.sampling.seed = run_c.seed;
      if (run_rate) cfg.plan.sampling.rate = *run_rate;
      auto spec = with_seed(run_workload, run_c.seed);
      Simulator sim;
      auto o = sim.run(topo, CostModel{}, run_template, make_workload(spec, topo), cfg);
      nlohmann::json j;
      j["template"] = run_template;
      j["workload"] = spec;
      j["topology"] = topology_to_json(topo);
      j["outcome"] = ex::outcome_to_json(o, run_outputs);
      emit(run_c, j.dump(2) + "\n");
    } else if (*serve) {
      ShuffleManager mgr;
      auto templates = algorithms::load_directory(serve_dir);
      for (const auto& [_, body] : templates) mgr.install_template(body);
      wire::TcpManagerServer server(mgr);
      auto port = server.start(serve_port, serve_host);
      std::cout << "manager listening on " << serve_host << ":" << port << " with " << templates.size()
                << " templates" << std::endl;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      std::cout << "manager stopped" << std::endl;
    } else if (*inst) {
      std::ifstream in(inst_file);
      std::stringstream body;
      body << in.rdbuf();
      auto id = parse_template(body.str()).id;
      wire::TcpManagerClient client(inst_host, inst_port);
      client.install_template(body.str());
      std::cout << "installed " << id << std::endl;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
