#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "phil/agent.hpp"
#include "phil/env.hpp"
#include "phil/errors.hpp"
#include "phil/guidance.hpp"
#include "phil/log.hpp"
#include "phil/replay.hpp"

namespace phil::trainer {

using Vec = Eigen::VectorXd;
namespace fs = std::filesystem;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x51ED270B27F1A3ULL));
}

// Independent random streams per run.
enum Stream : std::uint64_t { kInit = 1, kNoise = 2, kSample = 3, kDegrade = 4, kHuman = 5, kSmooth = 6, kEpisode = 1000 };

// World seed for an episode; shared by every variant of a plan.
inline std::uint64_t episode_seed(std::uint64_t seed, int episode) {
  return derive_seed(seed, kEpisode + static_cast<std::uint64_t>(episode));
}

struct RunConfig {
  env::ScenarioConfig scenario = env::ScenarioConfig::defaults(env::Scenario::left_turn);
  agent::TrainConfig train{};
  guidance::GuidanceConfig guidance{};
  guidance::HumanModelConfig human{};
  int episodes = 400;
  std::uint64_t seed = 0;
  fs::path out_dir;          // empty: keep everything in memory
  int checkpoint_every = 0;  // 0: final checkpoint only
  bool dump_trajectory = false;

  void validate() const {
    scenario.validate();
    train.validate();
    guidance.validate();
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
    if (train.variant == agent::Variant::vanilla && guidance.source != guidance::Source::none)
      throw ConfigError("variant vanilla takes no guidance (use --guidance none)");
  }

  nlohmann::json to_json() const {
    return {{"scenario", env::to_string(scenario.scenario)},
            {"scenario_config", scenario.to_text()},
            {"train", train.to_json()},
            {"guidance",
             {{"source", guidance::to_string(guidance.source)},
              {"r_pen", guidance.r_pen},
              {"poor_guidance_frac", guidance.poor_guidance_frac},
              {"ttc", guidance.trigger.ttc},
              {"stall", guidance.trigger.stall},
              {"rollout", guidance.trigger.rollout},
              {"min_dwell", guidance.trigger.min_dwell}}},
            {"human_model", {{"lr", human.lr}, {"batch", human.batch}, {"steps_per_update", human.steps_per_update}}},
            {"episodes", episodes},
            {"seed", seed}};
  }
};

struct EpisodeMetrics {
  int episode = 0;
  double reward = 0.0;         // environment reward only, no shaping
  double shaped_reward = 0.0;  // what the learner stored
  double distance = 0.0;
  int interventions = 0;
  int demo_steps = 0;
  int steps = 0;
  bool goal = false;
  bool collision = false;
  double seconds = 0.0;
  double mean_abs_lat_accel = 0.0;

  static std::string csv_header() {
    return "episode,reward,shaped_reward,distance,interventions,demo_steps,steps,goal,collision,mean_abs_lat_accel";
  }
  std::string csv_row() const {
    std::ostringstream o;
    o << std::setprecision(17) << episode << ',' << reward << ',' << shaped_reward << ',' << distance << ','
      << interventions << ',' << demo_steps << ',' << steps << ',' << (goal ? 1 : 0) << ',' << (collision ? 1 : 0)
      << ',' << mean_abs_lat_accel;
    return o.str();
  }
};

struct RunCounters {
  std::int64_t steps = 0;
  std::int64_t guidance_queries = 0;  // times the demo mask was produced by guidance
  std::int64_t demo_steps = 0;
  std::int64_t shaping_penalties = 0;
  std::int64_t single_batches = 0;
  std::int64_t rd2_batches = 0;
  std::int64_t rd2_demo_samples = 0;
  std::int64_t learn_steps = 0;
  std::int64_t human_updates = 0;
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg)
      : cfg_(std::move(cfg)),
        feat_((cfg_.validate(), agent::features(cfg_.train.variant))),
        agent_(env::World::state_dim(cfg_.scenario.scenario), env::World::action_dim(cfg_.scenario.scenario),
               cfg_.train, derive_seed(cfg_.seed, kInit)),
        controller_(cfg_.guidance, cfg_.human, derive_seed(cfg_.seed, kDegrade)),
        main_(cfg_.train.capacity, cfg_.train.priority.alpha),
        demo_(feat_.double_buffer ? cfg_.train.capacity : 1, cfg_.train.priority.alpha),
        noise_rng_(derive_seed(cfg_.seed, kNoise)),
        sample_rng_(derive_seed(cfg_.seed, kSample)),
        human_rng_(derive_seed(cfg_.seed, kHuman)),
        smooth_rng_(derive_seed(cfg_.seed, kSmooth)) {
    if (!cfg_.out_dir.empty()) open_outputs();
  }

  const RunConfig& config() const { return cfg_; }
  agent::Td3Agent& agent() { return agent_; }
  const agent::Td3Agent& agent() const { return agent_; }
  guidance::Controller& controller() { return controller_; }
  const PrioritizedBuffer& buffer() const { return main_; }
  const PrioritizedBuffer& demo_buffer() const { return demo_; }
  const RunCounters& counters() const { return counters_; }
  const std::vector<EpisodeMetrics>& history() const { return history_; }
  int episode() const { return episode_; }

  // Optional hooks: live input and per-step observers (session server).
  void set_live(guidance::LiveSource src) { controller_.set_live(std::move(src)); }
  using StepObserver = std::function<void(const env::World&, const EpisodeMetrics&, bool delta, bool episode_start)>;
  void set_observer(StepObserver obs) { observer_ = std::move(obs); }
  using StopFlag = std::function<bool()>;
  void set_stop(StopFlag f) { stop_ = std::move(f); }

  std::uint64_t world_fingerprint(int episode) const {
    return env::World::reset(cfg_.scenario, episode_seed(cfg_.seed, episode)).fingerprint();
  }

  EpisodeMetrics run_episode() {
    const auto t0 = std::chrono::steady_clock::now();
    const int e = episode_;
    env::World world = env::World::reset(cfg_.scenario, episode_seed(cfg_.seed, e));
    Vec s = world.features();
    controller_.begin_episode();
    EpisodeMetrics m;
    m.episode = e;
    const double sigma = cfg_.train.noise_std * cfg_.train.exploration(e);
    const double beta = cfg_.train.beta(e);
    const double lr_a = cfg_.train.actor_lr_at(e), lr_c = cfg_.train.critic_lr_at(e);
    double lat_sum = 0.0;
    if (observer_) observer_(world, m, false, true);

    while (!world.done()) {
      if (stop_ && stop_()) break;
      Vec a_rl;
      if (counters_.steps < cfg_.train.warmup_steps) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        a_rl.resize(agent_.action_dim());
        for (long i = 0; i < a_rl.size(); ++i) a_rl(i) = u(noise_rng_);
      } else {
        a_rl = agent_.select_action(s, sigma, cfg_.train.noise_clip, noise_rng_);
      }

      guidance::Decision d;
      if (feat_.guidance) {
        d = controller_.decide(world, s, agent_.actor);
        ++counters_.guidance_queries;
      }
      const Vec a = d.delta ? guidance::arbitrate(a_rl, d.action_h, true) : a_rl;

      const env::StepResult res = world.step(a);
      const bool intervened = feat_.shaping && d.intervened;
      const double r_store = feat_.shaping ? guidance::shape_reward(res.reward, d.intervened, cfg_.guidance.r_pen)
                                           : res.reward;
      if (intervened) {
        ++counters_.shaping_penalties;
        ++m.interventions;
      }
      Transition t{s, a, r_store, res.obs, feat_.guidance && d.delta, res.info.goal || res.info.collision ||
                                                                           res.info.off_road};
      if (feat_.double_buffer && t.demo)
        demo_.store(t);
      else
        main_.store(t);

      if (d.delta) {
        ++m.demo_steps;
        ++counters_.demo_steps;
        controller_.model().add_demo(s, d.label);
        if (demo_log_) write_demo(e, m.steps, s, d.action_h, res.reward, res.obs);
      }
      if (traj_) {
        const auto& ego = world.ego();
        *traj_ << e << ' ' << m.steps << ' ' << std::setprecision(17) << ego.x << ' ' << ego.y << ' ' << ego.heading
               << ' ' << ego.v << ' ' << a(0) << ' ' << res.reward << ' ' << (d.delta ? 1 : 0) << ' '
               << (res.done ? 1 : 0) << '\n';
      }

      m.reward += res.reward;
      m.shaped_reward += r_store;
      m.distance = res.info.distance;
      m.goal = res.info.goal;
      m.collision = res.info.collision || res.info.off_road;
      lat_sum += std::abs(res.info.lateral_accel);
      ++m.steps;
      ++counters_.steps;
      s = res.obs;

      if (main_.size() + (feat_.double_buffer ? demo_.size() : 0) >= static_cast<std::size_t>(cfg_.train.batch_size)) {
        for (int u = 0; u < cfg_.train.updates_per_step; ++u) learn_step(beta, lr_a, lr_c);
      }
      if (observer_) observer_(world, m, d.delta, false);
    }

    auto& hm = controller_.model();
    if (hm.initialized() && hm.demo_count() > 0) {
      hm.update(human_rng_);
      ++counters_.human_updates;
    }
    m.mean_abs_lat_accel = m.steps ? lat_sum / m.steps : 0.0;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history_.push_back(m);
    if (metrics_) {
      *metrics_ << m.csv_row() << '\n';
      metrics_->flush();
      *timing_ << m.episode << ',' << std::setprecision(6) << m.seconds << '\n';
      timing_->flush();
    }
    if (demo_log_) demo_log_->flush();
    if (traj_) traj_->flush();
    log::debug("train", "episode ", e, " reward ", m.reward, " distance ", m.distance, " interventions ",
               m.interventions);
    ++episode_;
    if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 && episode_ % cfg_.checkpoint_every == 0)
      save_checkpoint(cfg_.out_dir / ("checkpoint_" + std::to_string(episode_)));
    return m;
  }

  std::vector<EpisodeMetrics> train() {
    while (episode_ < cfg_.episodes) {
      if (stop_ && stop_()) break;
      run_episode();
    }
    if (!cfg_.out_dir.empty()) save_checkpoint(cfg_.out_dir / "checkpoint");
    return history_;
  }

  void save_checkpoint(const fs::path& dir) const {
    agent_.save(dir, {{"episode", episode_}, {"scenario", env::to_string(cfg_.scenario.scenario)},
                      {"scenario_config", cfg_.scenario.to_text()}, {"seed", cfg_.seed}});
    if (controller_.model().initialized()) nn::save_checkpoint(controller_.model().net(), dir / "human_model.json");
  }

 private:
  RunConfig cfg_;
  agent::VariantFeatures feat_;
  agent::Td3Agent agent_;
  guidance::Controller controller_;
  PrioritizedBuffer main_;
  PrioritizedBuffer demo_;
  Rng noise_rng_, sample_rng_, human_rng_, smooth_rng_;
  RunCounters counters_;
  std::vector<EpisodeMetrics> history_;
  int episode_ = 0;
  int diverged_ = 0;
  StepObserver observer_;
  StopFlag stop_;
  std::unique_ptr<std::ofstream> metrics_, timing_, demo_log_, traj_;

  void open_outputs() {
    fs::create_directories(cfg_.out_dir);
    {
      std::ofstream man(cfg_.out_dir / "manifest.json");
      nlohmann::json j = cfg_.to_json();
      j["format"] = "phil-run";
      j["code_version"] = "phil 0.1.0";
      j["streams"] = {{"init", derive_seed(cfg_.seed, kInit)},
                      {"noise", derive_seed(cfg_.seed, kNoise)},
                      {"sample", derive_seed(cfg_.seed, kSample)},
                      {"degrade", derive_seed(cfg_.seed, kDegrade)},
                      {"human", derive_seed(cfg_.seed, kHuman)}};
      man << j.dump(2) << '\n';
    }
    metrics_ = std::make_unique<std::ofstream>(cfg_.out_dir / "metrics.csv");
    *metrics_ << EpisodeMetrics::csv_header() << '\n';
    timing_ = std::make_unique<std::ofstream>(cfg_.out_dir / "timing.csv");
    *timing_ << "episode,seconds\n";
    if (feat_.guidance) demo_log_ = std::make_unique<std::ofstream>(cfg_.out_dir / "demos.jsonl");
    if (cfg_.dump_trajectory) {
      traj_ = std::make_unique<std::ofstream>(cfg_.out_dir / "trajectory.txt");
      *traj_ << "# episode step x y heading v action reward delta done\n";
    }
  }

  void write_demo(int e, int step, const Vec& s, const Vec& a, double r, const Vec& s2) {
    auto v = [](const Vec& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
    nlohmann::json j{{"episode", e}, {"step", step}, {"s", v(s)}, {"a_h", v(a)}, {"r", r}, {"s_next", v(s2)}};
    *demo_log_ << j.dump() << '\n';
  }

  void learn_step(double beta, double lr_a, double lr_c) {
    const std::size_t n = static_cast<std::size_t>(cfg_.train.batch_size);
    SampleBatch batch;
    if (feat_.double_buffer) {
      batch = sample_rd2(main_, demo_, n, beta, sample_rng_);
      ++counters_.rd2_batches;
      counters_.rd2_demo_samples += static_cast<std::int64_t>(batch.demo_count);
    } else {
      batch = main_.sample(n, beta, sample_rng_);
      ++counters_.single_batches;
    }
    try {
      // Priorities are refreshed from the pre-update networks.
      const auto prios = agent_.compute_priorities(batch, feat_.tdqa);
      refresh(batch, prios);
      agent_.critic_update(batch, lr_c, cfg_.train.target_smoothing ? &smooth_rng_ : nullptr);
      if (agent_.counters.critic_steps % cfg_.train.policy_delay == 0) {
        agent_.actor_update(batch, lr_a, cfg_.train.bc_weight);
        agent_.soft_update(cfg_.train.tau);
      }
      diverged_ = 0;
    } catch (const DivergenceError& ex) {
      if (++diverged_ >= 3)
        throw DivergenceError(std::string("training diverged: 3 consecutive non-finite steps (") + ex.what() + ")");
      log::error("train", "skipped a non-finite update: ", ex.what());
    }
    ++counters_.learn_steps;
  }

  void refresh(const SampleBatch& b, const std::vector<double>& prios) {
    if (!feat_.double_buffer) {
      main_.update_priorities(b.indices, prios);
      return;
    }
    std::vector<std::size_t> im, id;
    std::vector<double> pm, pd;
    for (std::size_t i = 0; i < b.size(); ++i) {
      (b.sources[i] == 1 ? id : im).push_back(b.indices[i]);
      (b.sources[i] == 1 ? pd : pm).push_back(prios[i]);
    }
    main_.update_priorities(im, pm);
    demo_.update_priorities(id, pd);
  }
};

// ---------------------------------------------------------------- evaluation

struct EvalReport {
  int runs = 0;
  double success_rate = 0.0;
  double distance_mean = 0.0;
  double distance_sd = 0.0;
  double episode_time_mean = 0.0;
  double lat_accel_mean = 0.0;
  double reward_mean = 0.0;
  std::vector<double> distances;

  nlohmann::json to_json() const {
    return {{"runs", runs},
            {"success_rate", success_rate},
            {"distance_mean", distance_mean},
            {"distance_sd", distance_sd},
            {"episode_time_mean", episode_time_mean},
            {"mean_abs_lateral_accel", lat_accel_mean},
            {"reward_mean", reward_mean}};
  }
};

using Policy = std::function<Vec(const env::World&, const Vec&)>;

// noise_frac is the output-noise sd as a fraction of the control span [-1,1].
inline EvalReport evaluate(const Policy& policy, const env::ScenarioConfig& scenario, int n_runs, double noise_frac,
                           std::uint64_t seed) {
  if (n_runs < 1) throw ConfigError("evaluate: n_runs must be >= 1");
  EvalReport rep;
  rep.runs = n_runs;
  Rng noise(derive_seed(seed, 77));
  std::normal_distribution<double> g(0.0, noise_frac * 2.0);
  double succ = 0, d1 = 0, d2 = 0, tsum = 0, lat = 0, rew = 0;
  for (int i = 0; i < n_runs; ++i) {
    env::World w = env::World::reset(scenario, episode_seed(seed, i));
    Vec s = w.features();
    double lat_ep = 0;
    int steps = 0;
    env::StepResult res;
    while (!w.done()) {
      Vec a = policy(w, s);
      if (noise_frac > 0)
        for (long k = 0; k < a.size(); ++k) a(k) = std::clamp(a(k) + g(noise), -1.0, 1.0);
      res = w.step(a);
      lat_ep += std::abs(res.info.lateral_accel);
      rew += res.reward;
      s = res.obs;
      ++steps;
    }
    succ += res.info.goal ? 1 : 0;
    d1 += res.info.distance;
    d2 += res.info.distance * res.info.distance;
    rep.distances.push_back(res.info.distance);
    tsum += w.elapsed();
    lat += steps ? lat_ep / steps : 0.0;
  }
  rep.success_rate = succ / n_runs;
  rep.distance_mean = d1 / n_runs;
  rep.distance_sd = std::sqrt(std::max(0.0, d2 / n_runs - rep.distance_mean * rep.distance_mean));
  rep.episode_time_mean = tsum / n_runs;
  rep.lat_accel_mean = lat / n_runs;
  rep.reward_mean = rew / n_runs;
  return rep;
}

inline Policy actor_policy(const agent::Td3Agent& a) {
  return [&a](const env::World&, const Vec& s) { return a.act(s); };
}

inline Policy oracle_policy() {
  return [](const env::World& w, const Vec&) { return guidance::oracle_action(w); };
}

inline EvalReport evaluate_checkpoint(const fs::path& dir, const env::ScenarioConfig& scenario, int n_runs,
                                      double noise_frac, std::uint64_t seed) {
  const agent::Td3Agent a = agent::Td3Agent::load(dir);
  if (a.state_dim() != env::World::state_dim(scenario.scenario))
    throw ConfigError("checkpoint state dimension " + std::to_string(a.state_dim()) + " does not fit scenario " +
                      env::to_string(scenario.scenario));
  return evaluate(actor_policy(a), scenario, n_runs, noise_frac, seed);
}

// ---------------------------------------------------------------- experiments

struct ExperimentPlan {
  std::vector<agent::Variant> variants;
  std::vector<std::uint64_t> seeds;
  env::ScenarioConfig scenario = env::ScenarioConfig::defaults(env::Scenario::left_turn);
  guidance::Source source = guidance::Source::oracle;
  std::vector<double> poor_guidance_fracs{0.0};
  std::vector<double> qa_weights{1.0};
  int episodes = 400;
  fs::path out_dir;
  int eval_runs = 0;  // 0 skips the final evaluation table

  void validate() const {
    if (variants.empty() || seeds.empty()) throw ConfigError("experiment plan needs variants and seeds");
    if (poor_guidance_fracs.empty() || qa_weights.empty()) throw ConfigError("empty grid in experiment plan");
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
  }

  static ExperimentPlan from_json(const nlohmann::json& j) {
    ExperimentPlan p;
    try {
      for (const auto& v : j.at("variants")) p.variants.push_back(agent::variant_from_string(v.get<std::string>()));
      p.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      p.scenario = env::ScenarioConfig::defaults(env::scenario_from_string(j.value("scenario", "left-turn")));
      if (j.contains("scenario_config")) {
        std::string text = j.at("scenario_config").get<std::string>();
        p.scenario = env::ScenarioConfig::parse("scenario=" + env::to_string(p.scenario.scenario) + "\n" + text);
      }
      p.source = guidance::source_from_string(j.value("guidance", "oracle"));
      if (j.contains("poor_guidance_frac")) {
        const auto& g = j.at("poor_guidance_frac");
        p.poor_guidance_fracs = g.is_array() ? g.get<std::vector<double>>() : std::vector<double>{g.get<double>()};
      }
      if (j.contains("qa_weight")) {
        const auto& g = j.at("qa_weight");
        p.qa_weights = g.is_array() ? g.get<std::vector<double>>() : std::vector<double>{g.get<double>()};
      }
      p.episodes = j.value("episodes", 400);
      p.out_dir = j.value("out", std::string("experiment_out"));
      p.eval_runs = j.value("eval_runs", 0);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("experiment plan: ") + e.what());
    }
    p.validate();
    return p;
  }
};

struct CellResult {
  agent::Variant variant;
  std::uint64_t seed;
  double poor_guidance_frac;
  double qa_weight;
  bool ok = false;
  std::string error;
  std::vector<EpisodeMetrics> curve;
  std::optional<EvalReport> eval;
};

inline std::string cell_name(const CellResult& c) {
  std::ostringstream o;
  o << agent::to_string(c.variant) << "_seed" << c.seed << "_pg" << c.poor_guidance_frac << "_w" << c.qa_weight;
  return o.str();
}

inline std::vector<CellResult> run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  std::vector<CellResult> cells;
  for (double pg : plan.poor_guidance_fracs)
    for (double w : plan.qa_weights)
      for (auto v : plan.variants) {
        // The priority weight only matters where TDQA is on, and vanilla
        // never sees guidance; skip duplicate cells.
        if (w != plan.qa_weights.front() && !agent::features(v).tdqa) continue;
        if (pg != plan.poor_guidance_fracs.front() && !agent::features(v).guidance) continue;
        for (auto seed : plan.seeds) {
          CellResult c{v, seed, pg, w};
          RunConfig rc;
          rc.scenario = plan.scenario;
          rc.train.variant = v;
          rc.train.max_episodes = plan.episodes;
          rc.train.priority.qa_weight = w;
          rc.guidance.source = agent::features(v).guidance ? plan.source : guidance::Source::none;
          rc.guidance.poor_guidance_frac = pg;
          rc.episodes = plan.episodes;
          rc.seed = seed;
          if (!plan.out_dir.empty()) rc.out_dir = plan.out_dir / cell_name(c);
          try {
            Trainer t(rc);
            c.curve = t.train();
            if (plan.eval_runs > 0)
              c.eval = evaluate(actor_policy(t.agent()), plan.scenario, plan.eval_runs, 0.0, seed);
            c.ok = true;
          } catch (const std::exception& e) {
            c.error = e.what();
            log::error("experiment", cell_name(c), " failed: ", e.what());
          }
          log::info("experiment", cell_name(c), c.ok ? " done" : " FAILED");
          cells.push_back(std::move(c));
        }
      }
  return cells;
}

// Mean and sd across seeds of the per-episode reward, one row per
// (variant, poor-guidance, qa-weight) group.
inline std::string curves_csv(const std::vector<CellResult>& cells) {
  std::ostringstream o;
  o << "variant,poor_guidance_frac,qa_weight,episode,reward_mean,reward_sd,distance_mean,seeds\n";
  std::vector<std::tuple<agent::Variant, double, double>> groups;
  for (const auto& c : cells) {
    auto key = std::make_tuple(c.variant, c.poor_guidance_frac, c.qa_weight);
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  for (const auto& [v, pg, w] : groups) {
    std::vector<const CellResult*> g;
    for (const auto& c : cells)
      if (c.ok && c.variant == v && c.poor_guidance_frac == pg && c.qa_weight == w) g.push_back(&c);
    if (g.empty()) continue;
    std::size_t len = g.front()->curve.size();
    for (auto* c : g) len = std::min(len, c->curve.size());
    for (std::size_t e = 0; e < len; ++e) {
      double s = 0, s2 = 0, d = 0;
      for (auto* c : g) {
        s += c->curve[e].reward;
        s2 += c->curve[e].reward * c->curve[e].reward;
        d += c->curve[e].distance;
      }
      const double n = static_cast<double>(g.size());
      const double mean = s / n;
      o << agent::to_string(v) << ',' << pg << ',' << w << ',' << e << ',' << std::setprecision(10) << mean << ','
        << std::sqrt(std::max(0.0, s2 / n - mean * mean)) << ',' << d / n << ',' << g.size() << '\n';
    }
  }
  return o.str();
}

inline std::string summary_table(const std::vector<CellResult>& cells, int last_k = 20) {
  std::ostringstream o;
  o << "cell,ok,final_mean_reward,final_mean_distance,success_rate,error\n";
  for (const auto& c : cells) {
    double r = 0, d = 0;
    int k = 0;
    for (std::size_t i = c.curve.size() > static_cast<std::size_t>(last_k) ? c.curve.size() - last_k : 0;
         i < c.curve.size(); ++i, ++k) {
      r += c.curve[i].reward;
      d += c.curve[i].distance;
    }
    o << cell_name(c) << ',' << (c.ok ? 1 : 0) << ',' << (k ? r / k : 0) << ',' << (k ? d / k : 0) << ','
      << (c.eval ? c.eval->success_rate : -1) << ',' << '"' << c.error << '"' << '\n';
  }
  return o.str();
}

}  // namespace phil::trainer
