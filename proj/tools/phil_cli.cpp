#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "phil/session.hpp"
#include "phil/shaping.hpp"
#include "phil/trainer.hpp"

using namespace phil;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }

env::ScenarioConfig scenario_config(const std::string& name, const std::string& file) {
  if (file.empty()) return env::ScenarioConfig::defaults(env::scenario_from_string(name));
  auto c = env::ScenarioConfig::load(file);
  if (c.scenario != env::scenario_from_string(name))
    throw ConfigError("scenario file " + file + " describes " + env::to_string(c.scenario) + ", not " + name);
  return c;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  if (!f) throw ConfigError("cannot write " + p.string());
  f << s;
}

// Releases the simulation at real time so a person can keep up.
struct Pacer {
  std::chrono::steady_clock::time_point next = std::chrono::steady_clock::now();
  void start() { next = std::chrono::steady_clock::now(); }
  void tick() {
    next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(env::kDt));
    std::this_thread::sleep_until(next);
  }
};

void print_summary(const std::vector<trainer::EpisodeMetrics>& hist) {
  if (hist.empty()) return;
  const std::size_t k = std::min<std::size_t>(20, hist.size());
  double r = 0, d = 0, g = 0;
  for (std::size_t i = hist.size() - k; i < hist.size(); ++i) {
    r += hist[i].reward;
    d += hist[i].distance;
    g += hist[i].goal;
  }
  std::cout << "episodes " << hist.size() << ", last " << k << ": reward " << r / k << ", distance " << d / k
            << ", goal rate " << g / k << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phil: guided TD3 for autonomous driving"};
  app.require_subcommand(1);

  trainer::RunConfig rc;
  std::string scenario = "left-turn", variant = "phil", source = "oracle", out, scenario_file;
  int port = 8765;
  auto* train = app.add_subcommand("train", "train one (variant, seed) run");
  train->add_option("--scenario", scenario)->check(CLI::IsMember({"left-turn", "congestion"}));
  train->add_option("--scenario-config", scenario_file, "key=value scenario file");
  train->add_option("--variant", variant)->check(CLI::IsMember({"phil", "ia", "hi", "rd2", "vanilla"}));
  auto* guidance_opt = train->add_option("--guidance", source, "default oracle, none for vanilla")
                           ->check(CLI::IsMember({"none", "oracle", "model", "live"}));
  train->add_option("--episodes", rc.episodes)->check(CLI::PositiveNumber);
  train->add_option("--seed", rc.seed);
  train->add_option("--qa-weight", rc.train.priority.qa_weight);
  train->add_option("--poor-guidance-frac", rc.guidance.poor_guidance_frac)->check(CLI::Range(0.0, 1.0));
  train->add_option("--out", out, "output directory");
  train->add_option("--checkpoint-every", rc.checkpoint_every);
  train->add_flag("--dump-trajectory", rc.dump_trajectory);
  train->add_option("--port", port, "cockpit port when --guidance live");

  std::string ckpt;
  int runs = 50;
  double noise = 0.05;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint greedily");
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--scenario", scenario)->check(CLI::IsMember({"left-turn", "congestion"}));
  eval->add_option("--scenario-config", scenario_file);
  eval->add_option("--runs", runs)->check(CLI::PositiveNumber);
  eval->add_option("--noise", noise)->check(CLI::Range(0.0, 1.0));
  eval->add_option("--seed", eval_seed);

  std::string plan_file;
  auto* exper = app.add_subcommand("experiment", "run a (variant x seed) comparison plan");
  exper->add_option("--plan", plan_file)->required()->check(CLI::ExistingFile);

  int instances = 100;
  std::uint64_t shaping_seed = 0;
  double r_pen = -10.0, tol = 1e-8;
  auto* verify = app.add_subcommand("verify-shaping", "check policy invariance on random tabular MDPs");
  verify->add_option("--instances", instances)->check(CLI::PositiveNumber);
  verify->add_option("--seed", shaping_seed);
  verify->add_option("--r-pen", r_pen);
  verify->add_option("--tol", tol);

  auto* serve = app.add_subcommand("serve", "train with a live cockpit at 10 Hz");
  serve->add_option("--port", port);
  serve->add_option("--scenario", scenario)->check(CLI::IsMember({"left-turn", "congestion"}));
  serve->add_option("--variant", variant)->check(CLI::IsMember({"phil", "ia", "hi", "rd2"}));
  serve->add_option("--episodes", rc.episodes)->check(CLI::PositiveNumber);
  serve->add_option("--seed", rc.seed);
  serve->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    if (*train || *serve) {
      if (*serve) source = "live";
      else if (variant == "vanilla" && guidance_opt->count() == 0) source = "none";
      rc.scenario = scenario_config(scenario, scenario_file);
      rc.train.variant = agent::variant_from_string(variant);
      rc.train.max_episodes = rc.episodes;
      rc.guidance.source = guidance::source_from_string(source);
      if (!out.empty()) rc.out_dir = out;
      trainer::Trainer t(rc);
      t.set_stop([] { return g_stop.load(); });

      std::unique_ptr<session::Server> server;
      Pacer pacer;
      if (rc.guidance.source == guidance::Source::live) {
        server = std::make_unique<session::Server>(session::ServerConfig{port, "127.0.0.1", scenario});
        server->start();
        session::attach(t, *server);
        std::cout << "cockpit: listening on 127.0.0.1:" << server->port() << std::endl;
        t.set_observer([&](const env::World& w, const trainer::EpisodeMetrics& m, bool delta, bool start) {
          if (start) {
            server->broadcast(session::make_scene(w, m.episode));
            pacer.start();
            return;
          }
          server->broadcast(session::make_frame(w, m.episode, m.steps, m.reward, m.distance, delta));
          pacer.tick();
        });
      }
      const auto hist = t.train();
      print_summary(hist);
      if (server) {
        const auto st = server->stats();
        std::cout << "frames sent " << st.sent << ", dropped " << st.dropped << ", malformed " << st.malformed
                  << '\n';
      }
      return 0;
    }
    if (*eval) {
      const auto rep = trainer::evaluate_checkpoint(ckpt, scenario_config(scenario, scenario_file), runs, noise,
                                                    eval_seed);
      std::cout << rep.to_json().dump(2) << '\n';
      return 0;
    }
    if (*exper) {
      std::ifstream f(plan_file);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(f);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(plan_file + ": " + e.what());
      }
      const auto plan = trainer::ExperimentPlan::from_json(j);
      const auto cells = trainer::run_experiment(plan);
      const auto table = trainer::summary_table(cells);
      std::cout << table;
      if (!plan.out_dir.empty()) {
        fs::create_directories(plan.out_dir);
        write_text(plan.out_dir / "curves.csv", trainer::curves_csv(cells));
        write_text(plan.out_dir / "summary.txt", table);
      }
      int failed = 0;
      for (const auto& c : cells) failed += !c.ok;
      if (failed) std::cerr << failed << " of " << cells.size() << " cells failed\n";
      return failed ? 1 : 0;
    }
    if (*verify) {
      const auto rep = shaping::check_invariance(r_pen, tol, instances, shaping_seed);
      std::cout << rep.text();
      return rep.all_pass() ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
