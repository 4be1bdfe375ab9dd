#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "aimpc/general_planner.hpp"
#include "aimpc/session.hpp"
#include "aimpc/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aimpc;

namespace {

constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string default_out_root() {
  const char* env = std::getenv("AIMPC_OUT");
  return env && *env ? env : "runs";
}

bool is_builtin(const std::string& id) { return id == "sub1" || id == "sub2" || id == "sub3"; }

Scenario load_scenario(const std::string& id_or_path) {
  if (is_builtin(id_or_path)) return builtin_scenario(id_or_path);
  std::ifstream in(id_or_path);
  if (!in) throw UsageError("no such scenario: " + id_or_path);
  try {
    return read_scenario_json(in);
  } catch (const std::invalid_argument& e) {
    throw UsageError(id_or_path + ": " + e.what());
  }
}

// Fills a sibling temp directory and renames it into place.
void write_run_dir(const fs::path& dir, const std::function<void(const fs::path&)>& fill) {
  const fs::path tmp = dir.string() + ".tmp-" + std::to_string(::getpid());
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  fill(tmp);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

std::string run_name(const std::string& scenario, const std::string& planner, const std::string& nv,
                     long seed) {
  return scenario + "_" + planner + "_" + nv + "_" + std::to_string(seed);
}

void save_trace_and_metrics(const fs::path& dir, const Trace& trace, const Metrics& m) {
  write_run_dir(dir, [&](const fs::path& tmp) {
    std::ofstream t(tmp / "trace.ndjson");
    write_trace(t, trace);
    std::ofstream mf(tmp / "metrics.json");
    write_metrics_json(mf, m);
  });
}

// ------------------------------------------------------------------ run

struct RunArgs {
  std::string scenario;
  std::string planner = "aimpc";
  std::string nv = "yielder";
  std::string out = default_out_root();
  std::string plant = "ideal";
  std::string imputation = "coupled";
  bool wall_clock = false;
  long seed = 0;
  std::optional<double> duration;
};

int run_general_cmd(const RunArgs& a) {
  if (a.planner != "general") throw UsageError("scenario fig3 needs --planner general");
  GeneralScenario s = fig3_scenario();
  if (a.duration) s.duration = *a.duration;
  const GeneralRun run = run_general(s);
  const auto gap = min_same_lane_gap(run, s.lanes, s.cfg.delta);

  bool sums_ok = true;
  for (const auto& plan : run.plans)
    for (const auto& per_vehicle : plan.mu)
      for (size_t k = 0; k < per_vehicle.front().size(); ++k) {
        int sum = 0;
        for (const auto& lane : per_vehicle) sum += lane[k];
        sums_ok = sums_ok && sum == 1;
      }

  const fs::path dir = fs::path(a.out) / run_name("fig3", "general", "joint", a.seed);
  write_run_dir(dir, [&](const fs::path& tmp) {
    std::ofstream t(tmp / "trace.ndjson");
    t << json{{"scenario", "fig3"}, {"vehicles", s.initial.vehicles.size()}, {"lanes", s.lanes},
              {"dt", s.cfg.dt}}
             .dump()
      << "\n";
    for (const auto& st : run.steps) {
      json states = json::array(), controls = json::array(), mu = json::array(), sums = json::array();
      for (const auto& x : st.states) states.push_back({x.s, x.v, x.a, x.l, x.r_l});
      for (const auto& u : st.controls) controls.push_back({u.u_a, u.u_l});
      for (const auto& m : st.mu_now) {
        mu.push_back(m);
        int sum = 0;
        for (int b : m) sum += b;
        sums.push_back(sum);
      }
      t << json{{"t", st.t},           {"states", states},       {"controls", controls}, {"mu", mu},
                {"mu_sum", sums},      {"status", to_string(st.status)}, {"nodes", st.nodes}}
               .dump()
        << "\n";
    }
    std::ofstream m(tmp / "metrics.json");
    m << std::setw(2)
      << json{{"all_feasible", run.all_feasible},
              {"steps", run.steps.size()},
              {"indicator_sums_ok", sums_ok},
              {"min_same_lane_gap", gap ? json(*gap) : json(nullptr)}}
      << "\n";
  });
  std::cout << "fig3 general: feasible=" << run.all_feasible << " indicator_sums_ok=" << sums_ok
            << " min_same_lane_gap=" << (gap ? std::to_string(*gap) : "none") << "\n"
            << "wrote " << dir.string() << "\n";
  return run.all_feasible ? 0 : 1;
}

int cmd_run(const RunArgs& a) {
  if (a.scenario == "fig3") return run_general_cmd(a);
  if (a.planner == "general") throw UsageError("--planner general needs --scenario fig3");
  Scenario s = load_scenario(a.scenario);
  try {
    s.planner_kind = planner_kind_from_string(a.planner);
    s.imputation_mode = imputation_mode_from_string(a.imputation);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  s.nv_policy = a.nv;
  s.deterministic = !a.wall_clock;
  if (a.plant == "ideal") {
    s.plant = PlantMode::ideal;
  } else if (a.plant == "lagged") {
    s.plant = PlantMode::lagged;
  } else {
    throw UsageError("unknown plant mode: " + a.plant);
  }
  if (a.duration) s.duration = *a.duration;
  try {
    s.validate();
    make_policy(s.nv_policy, s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const RunResult r = run_closed_loop(s);
  const fs::path dir = fs::path(a.out) / run_name(s.id, a.planner, a.nv, a.seed);
  save_trace_and_metrics(dir, r.trace, r.metrics);
  const auto& m = r.metrics;
  std::cout << s.id << " " << a.planner << " " << a.nv << ": v_ego_avg=" << m.v_ego_avg
            << " v_nv_avg=" << m.v_nv_avg << " lane_change_completed=" << m.lane_change_completed
            << " merged_ahead=" << m.merged_ahead << " status=" << m.status << "\n"
            << "wrote " << dir.string() << "\n";
  return r.trace.status == "ok" ? 0 : 1;
}

// ------------------------------------------------------------------ compare

struct CompareArgs {
  std::vector<std::string> scenarios{"sub1", "sub2", "sub3"};
  std::vector<std::string> planners{"aimpc", "joint_fixed", "baseline_cv"};
  std::vector<std::string> nvs{"yielder"};
  std::string out = default_out_root();
  long seed = 0;
};

std::vector<std::string> non_empty(const std::vector<std::string>& v) {
  std::vector<std::string> out;
  for (const auto& s : v)
    if (!s.empty()) out.push_back(s);
  return out;
}

int cmd_compare(const CompareArgs& in) {
  const auto scenarios = non_empty(in.scenarios);
  const auto planners = non_empty(in.planners);
  const auto nvs = non_empty(in.nvs);
  if (scenarios.empty()) throw UsageError("empty scenario set");
  if (planners.empty()) throw UsageError("empty planner set");
  if (nvs.empty()) throw UsageError("empty NV policy set");
  for (const auto& p : planners) {
    try {
      planner_kind_from_string(p);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  std::vector<Scenario> loaded;
  for (const auto& id : scenarios) loaded.push_back(load_scenario(id));

  json rows = json::array();
  std::cout << "subscenario,scenario,obstacle_s,planner,nv,v_ego_avg,v_nv_avg,status\n";
  for (const auto& base : loaded) {
    const int sub = base.id.size() == 4 && base.id.rfind("sub", 0) == 0 ? base.id[3] - '0' : 0;
    for (const auto& planner : planners) {
      for (const auto& nv : nvs) {
        json row{{"subscenario", sub}, {"scenario", base.id}, {"obstacle_s", base.obstacle_s},
                 {"planner", planner}, {"nv", nv}};
        try {
          Scenario s = base;
          s.planner_kind = planner_kind_from_string(planner);
          s.nv_policy = nv;
          const RunResult r = run_closed_loop(s);
          save_trace_and_metrics(fs::path(in.out) / run_name(s.id, planner, nv, in.seed), r.trace, r.metrics);
          row["v_ego_avg"] = r.metrics.v_ego_avg;
          row["v_nv_avg"] = r.metrics.v_nv_avg;
          row["status"] = r.trace.status;
        } catch (const std::exception& e) {
          row["v_ego_avg"] = nullptr;
          row["v_nv_avg"] = nullptr;
          row["status"] = std::string("failed: ") + e.what();
        }
        auto num = [](const json& v) {
          if (v.is_null()) return std::string("NA");
          std::ostringstream os;
          os << std::fixed << std::setprecision(3) << v.get<double>();
          return os.str();
        };
        std::cout << sub << "," << base.id << "," << base.obstacle_s << "," << planner << "," << nv << ","
                  << num(row["v_ego_avg"]) << "," << num(row["v_nv_avg"]) << "," << row["status"].get<std::string>()
                  << std::endl;
        rows.push_back(std::move(row));
      }
    }
  }
  fs::create_directories(in.out);
  const fs::path table = fs::path(in.out) / "compare.json";
  const fs::path tmp = table.string() + ".tmp";
  {
    std::ofstream f(tmp);
    f << std::setw(2) << json{{"rows", rows}} << "\n";
  }
  fs::rename(tmp, table);
  return 0;
}

// ------------------------------------------------------------------ impute

struct ImputeArgs {
  std::string trace;
  std::string mode = "coupled";
  int r = 6;
  int interval = 6;
  double c = 1.0;
  std::string output;
};

int cmd_impute(const ImputeArgs& a) {
  ImputationConfig cfg;
  try {
    cfg.mode = imputation_mode_from_string(a.mode);
    cfg.r = a.r;
    cfg.interval = a.interval;
    cfg.c = a.c;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::ifstream in(a.trace);
  if (!in) throw UsageError("cannot open trace: " + a.trace);
  const Trace trace = read_trace(in);
  const auto series = reimpute_trace(trace, cfg);

  std::ofstream file;
  if (!a.output.empty()) file.open(a.output);
  std::ostream& os = a.output.empty() ? std::cout : file;
  os << "t,alpha_p,alpha_a\n";
  for (const auto& s : series) os << s.t << "," << s.alpha.alpha_p << "," << s.alpha.alpha_a << "\n";
  return 0;
}

// ------------------------------------------------------------------ serve

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8765;
  std::string scenario = "sub2";
  double speedup = 1.0;
  bool deterministic = false;
  std::optional<double> duration;
  std::string out = default_out_root();
};

int cmd_serve(const ServeArgs& a) {
  SessionConfig cfg;
  cfg.scenario = load_scenario(a.scenario);
  cfg.scenario.deterministic = a.deterministic;
  cfg.speedup = a.speedup;
  if (a.duration) cfg.scenario.duration = *a.duration;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  SessionServer server(cfg);
  try {
    server.listen(a.host, a.port);
  } catch (const std::system_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  std::cout << "listening on " << a.host << ":" << server.port() << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::atomic<bool> finished{false};
  std::thread watcher([&] {
    while (!finished) {
      if (g_interrupted) server.stop();
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  });
  Trace trace;
  try {
    trace = server.run();
  } catch (...) {
    finished = true;
    watcher.join();
    throw;
  }
  finished = true;
  watcher.join();
  if (g_interrupted) trace.status = trace.status == "ok" ? "interrupted" : trace.status;

  const fs::path dir = fs::path(a.out) / run_name(cfg.scenario.id, "aimpc", "external", 0);
  if (trace.records.empty()) {
    std::cout << "no ticks recorded\n";
    return 0;
  }
  const Metrics m = compute_metrics(trace);
  save_trace_and_metrics(dir, trace, m);
  std::cout << "session ended (" << trace.status << "), " << trace.records.size() << " ticks, "
            << server.dropped_frames() << " dropped frames\nwrote " << dir.string() << "\n";
  return trace.status == "planner_failure" ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive interactive MPC lane-change planner"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Closed-loop batch run; writes trace and metrics");
  run_cmd->add_option("--scenario", run.scenario, "sub1|sub2|sub3|fig3 or a scenario JSON file")->required();
  run_cmd->add_option("--planner", run.planner, "aimpc|joint_fixed|baseline_cv|general");
  run_cmd->add_option("--nv", run.nv, "pacer|yielder|aggressor|bait");
  run_cmd->add_option("--out", run.out, "output root (default $AIMPC_OUT or ./runs)");
  run_cmd->add_option("--plant", run.plant, "ideal|lagged");
  run_cmd->add_option("--imputation", run.imputation, "coupled|literal");
  run_cmd->add_option("--duration", run.duration, "override scenario duration, s");
  run_cmd->add_option("--seed", run.seed, "run label; the simulation itself is deterministic");
  run_cmd->add_flag("--wall-clock", run.wall_clock, "planner time limit instead of a node budget");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Cross-product of runs; velocity table");
  cmp_cmd->add_option("--scenarios", cmp.scenarios)->delimiter(',');
  cmp_cmd->add_option("--planners", cmp.planners)->delimiter(',');
  cmp_cmd->add_option("--nv", cmp.nvs)->delimiter(',');
  cmp_cmd->add_option("--out", cmp.out);
  cmp_cmd->add_option("--seed", cmp.seed);

  ImputeArgs imp;
  auto* imp_cmd = app.add_subcommand("impute", "Offline re-imputation over a trace; CSV series");
  imp_cmd->add_option("--trace", imp.trace)->required();
  imp_cmd->add_option("--mode", imp.mode, "coupled|literal");
  imp_cmd->add_option("--r", imp.r, "window length, planner steps");
  imp_cmd->add_option("--interval", imp.interval, "planner steps between updates");
  imp_cmd->add_option("--c", imp.c, "alpha_p + alpha_a");
  imp_cmd->add_option("--output", imp.output, "CSV file (default stdout)");

  ServeArgs srv;
  auto* srv_cmd = app.add_subcommand("serve", "Live session server for one human driver");
  srv_cmd->add_option("--host", srv.host);
  srv_cmd->add_option("--port", srv.port, "0 picks a free port");
  srv_cmd->add_option("--scenario", srv.scenario);
  srv_cmd->add_option("--speedup", srv.speedup, "wall-clock pacing factor");
  srv_cmd->add_option("--duration", srv.duration);
  srv_cmd->add_flag("--deterministic", srv.deterministic, "node budget instead of a time limit");
  srv_cmd->add_option("--out", srv.out);

  for (auto* sub : {run_cmd, cmp_cmd, imp_cmd, srv_cmd}) {
    for (auto* opt : sub->get_options()) opt->multi_option_policy(CLI::MultiOptionPolicy::Throw);
  }
  // List options accept repeats.
  for (auto* opt : cmp_cmd->get_options()) {
    if (opt->get_name() != "--out" && opt->get_name() != "--seed") {
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*cmp_cmd) return cmd_compare(cmp);
    if (*imp_cmd) return cmd_impute(imp);
    if (*srv_cmd) return cmd_serve(srv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
