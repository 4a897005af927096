#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "phil/errors.hpp"
#include "phil/nn.hpp"
#include "phil/replay.hpp"

namespace phil::agent {

using Matrix = Eigen::MatrixXd;

enum class Variant { phil, ia, hi, rd2, vanilla };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::phil: return "phil";
    case Variant::ia: return "ia";
    case Variant::hi: return "hi";
    case Variant::rd2: return "rd2";
    case Variant::vanilla: return "vanilla";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "phil") return Variant::phil;
  if (s == "ia") return Variant::ia;
  if (s == "hi") return Variant::hi;
  if (s == "rd2") return Variant::rd2;
  if (s == "vanilla") return Variant::vanilla;
  throw ConfigError("unknown variant '" + s + "'");
}

// What each baseline switches on.
struct VariantFeatures {
  bool guidance;       // substitutes guidance actions and reads the demo mask
  bool shaping;        // intervention penalty
  bool bc;             // behaviour-cloning term in the actor loss
  bool tdqa;           // Q-advantage bonus on demo priorities
  bool double_buffer;  // separate demo store
};

inline VariantFeatures features(Variant v) {
  switch (v) {
    case Variant::phil: return {true, true, true, true, false};
    case Variant::ia: return {true, true, true, false, false};
    case Variant::hi: return {true, true, false, false, false};
    case Variant::rd2: return {true, true, true, false, true};
    case Variant::vanilla: return {false, false, false, false, false};
  }
  return {};
}

struct TrainConfig {
  double gamma = 0.95;
  double tau = 1e-3;
  int policy_delay = 1;
  double noise_std = 0.2;
  double noise_clip = 1.0;
  double explore_initial = 1.0;
  double explore_final = 0.05;
  double bc_weight = 1.0;
  int batch_size = 128;
  double actor_lr = 5e-4;
  double critic_lr = 2e-4;
  double lr_decay = 0.996;  // per episode
  int max_episodes = 400;
  int episode_horizon = 300;
  Variant variant = Variant::phil;
  std::vector<int> hidden{64, 64};
  bool target_smoothing = false;
  double smoothing_std = 0.2;
  double smoothing_clip = 0.5;
  int warmup_steps = 1000;
  int updates_per_step = 1;
  std::size_t capacity = 100000;
  PriorityParams priority{};

  void validate() const {
    if (!(gamma > 0 && gamma < 1)) throw ConfigError("gamma must lie in (0,1)");
    if (!(tau > 0 && tau <= 1)) throw ConfigError("tau must lie in (0,1]");
    if (policy_delay < 1) throw ConfigError("policy_delay must be >= 1");
    if (!(noise_clip > 0)) throw ConfigError("noise_clip must be positive");
    if (noise_std < 0) throw ConfigError("noise_std must be >= 0");
    if (bc_weight < 0) throw ConfigError("bc_weight must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(actor_lr > 0 && critic_lr > 0)) throw ConfigError("learning rates must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr_decay must lie in (0,1]");
    if (max_episodes < 1 || episode_horizon < 1) throw ConfigError("episode counts must be positive");
    if (updates_per_step < 0 || warmup_steps < 0) throw ConfigError("negative step counts");
    if (capacity < static_cast<std::size_t>(batch_size)) throw ConfigError("capacity below batch size");
    for (int h : hidden)
      if (h <= 0) throw ConfigError("hidden sizes must be positive");
    priority.validate();
  }

  // Exploration multiplier for an episode: linear from initial to final.
  double exploration(int episode) const {
    if (max_episodes <= 1) return explore_final;
    const double f = std::min(1.0, static_cast<double>(episode) / (max_episodes - 1));
    return explore_initial + (explore_final - explore_initial) * f;
  }
  // IS exponent anneals linearly from its initial value to zero.
  double beta(int episode) const {
    const double f = std::min(1.0, static_cast<double>(episode) / max_episodes);
    return priority.beta * (1.0 - f);
  }
  double actor_lr_at(int episode) const { return actor_lr * std::pow(lr_decay, episode); }
  double critic_lr_at(int episode) const { return critic_lr * std::pow(lr_decay, episode); }

  nlohmann::json to_json() const {
    return {{"gamma", gamma},
            {"tau", tau},
            {"policy_delay", policy_delay},
            {"noise_std", noise_std},
            {"noise_clip", noise_clip},
            {"explore_initial", explore_initial},
            {"explore_final", explore_final},
            {"bc_weight", bc_weight},
            {"batch_size", batch_size},
            {"actor_lr", actor_lr},
            {"critic_lr", critic_lr},
            {"lr_decay", lr_decay},
            {"max_episodes", max_episodes},
            {"episode_horizon", episode_horizon},
            {"variant", to_string(variant)},
            {"hidden", hidden},
            {"target_smoothing", target_smoothing},
            {"smoothing_std", smoothing_std},
            {"smoothing_clip", smoothing_clip},
            {"warmup_steps", warmup_steps},
            {"updates_per_step", updates_per_step},
            {"capacity", capacity},
            {"alpha", priority.alpha},
            {"beta", priority.beta},
            {"epsilon", priority.epsilon},
            {"qa_weight", priority.qa_weight}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
      auto get = [&](const char* k, auto& field) {
        if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
      };
      get("gamma", c.gamma);
      get("tau", c.tau);
      get("policy_delay", c.policy_delay);
      get("noise_std", c.noise_std);
      get("noise_clip", c.noise_clip);
      get("explore_initial", c.explore_initial);
      get("explore_final", c.explore_final);
      get("bc_weight", c.bc_weight);
      get("batch_size", c.batch_size);
      get("actor_lr", c.actor_lr);
      get("critic_lr", c.critic_lr);
      get("lr_decay", c.lr_decay);
      get("max_episodes", c.max_episodes);
      get("episode_horizon", c.episode_horizon);
      if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
      get("hidden", c.hidden);
      get("target_smoothing", c.target_smoothing);
      get("smoothing_std", c.smoothing_std);
      get("smoothing_clip", c.smoothing_clip);
      get("warmup_steps", c.warmup_steps);
      get("updates_per_step", c.updates_per_step);
      get("capacity", c.capacity);
      get("alpha", c.priority.alpha);
      get("beta", c.priority.beta);
      get("epsilon", c.priority.epsilon);
      get("qa_weight", c.priority.qa_weight);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

// |delta| + eps, plus the Q-advantage bonus for demonstrations.
inline double tdqa_priority(double td_error, bool demo, double q_demo, double q_pi, const PriorityParams& p,
                            bool use_qa = true) {
  if (!std::isfinite(td_error) || !std::isfinite(q_demo) || !std::isfinite(q_pi))
    throw PriorityError("non-finite value in priority computation");
  double prio = std::abs(td_error) + p.epsilon;
  // The advantage is capped so a runaway critic cannot overflow exp().
  if (demo && use_qa) prio += p.qa_weight * std::exp(std::min(q_demo - q_pi, 50.0));
  return prio;
}

struct CriticStep {
  Eigen::VectorXd td_errors;  // y - Q1(s,a), before the step
  double loss1 = 0.0;
  double loss2 = 0.0;
};

// Audit counters for the variant contract.
struct Counters {
  std::int64_t critic_steps = 0;
  std::int64_t actor_steps = 0;
  std::int64_t demo_mask_reads = 0;  // samples whose demo flag steered a loss split
  std::int64_t bc_samples = 0;       // demo samples that entered a BC term with positive weight
  std::int64_t qa_terms = 0;         // priorities that carried a Q-advantage bonus
};

class Td3Agent {
 public:
  nn::MlpParams actor, actor_target;
  nn::MlpParams critic1, critic2, critic1_target, critic2_target;
  nn::AdamState actor_opt, critic1_opt, critic2_opt;
  Counters counters;

  Td3Agent() = default;
  Td3Agent(int state_dim, int action_dim, const TrainConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), state_dim_(state_dim), action_dim_(action_dim) {
    cfg_.validate();
    std::vector<int> a_sizes{state_dim};
    a_sizes.insert(a_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    a_sizes.push_back(action_dim);
    std::vector<int> c_sizes{state_dim + action_dim};
    c_sizes.insert(c_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    c_sizes.push_back(1);
    actor = nn::mlp_init(a_sizes, nn::OutputActivation::tanh, seed);
    critic1 = nn::mlp_init(c_sizes, nn::OutputActivation::identity, seed + 1);
    critic2 = nn::mlp_init(c_sizes, nn::OutputActivation::identity, seed + 2);
    actor_target = actor;
    critic1_target = critic1;
    critic2_target = critic2;
    actor_opt = nn::AdamState::zeros_like(actor);
    critic1_opt = nn::AdamState::zeros_like(critic1);
    critic2_opt = nn::AdamState::zeros_like(critic2);
  }

  const TrainConfig& config() const { return cfg_; }
  TrainConfig& config() { return cfg_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  VariantFeatures variant_features() const { return features(cfg_.variant); }

  Eigen::VectorXd act(const Eigen::VectorXd& s) const {
    if (s.size() != state_dim_) throw ShapeError("state dimension does not match the actor");
    return nn::predict_one(actor, s);
  }

  Eigen::VectorXd select_action(const Eigen::VectorXd& s, double noise_std, double noise_clip, Rng& rng) const {
    Eigen::VectorXd a = act(s);
    if (noise_std > 0) {
      std::normal_distribution<double> n(0.0, noise_std);
      for (long i = 0; i < a.size(); ++i) a(i) += std::clamp(n(rng), -noise_clip, noise_clip);
    }
    return a.cwiseMax(-1.0).cwiseMin(1.0);
  }

  static Matrix stack(const Matrix& top, const Matrix& bottom) {
    Matrix m(top.rows() + bottom.rows(), top.cols());
    m << top, bottom;
    return m;
  }

  struct BatchMatrices {
    Matrix S, A, S2;
    Eigen::VectorXd r, done, w;
    std::vector<char> demo;
  };

  BatchMatrices unpack(const SampleBatch& b) const {
    const long n = static_cast<long>(b.size());
    if (n == 0) throw InsufficientData("empty batch");
    BatchMatrices m;
    m.S.resize(state_dim_, n);
    m.S2.resize(state_dim_, n);
    m.A.resize(action_dim_, n);
    m.r.resize(n);
    m.done.resize(n);
    m.w.resize(n);
    m.demo.resize(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
      const auto& t = b.transitions[static_cast<std::size_t>(i)];
      if (t.s.size() != state_dim_ || t.s_next.size() != state_dim_ || t.a.size() != action_dim_)
        throw ShapeError("transition does not match agent dimensions");
      m.S.col(i) = t.s;
      m.S2.col(i) = t.s_next;
      m.A.col(i) = t.a;
      m.r(i) = t.r;
      m.done(i) = t.done ? 1.0 : 0.0;
      m.w(i) = b.is_weights.empty() ? 1.0 : b.is_weights[static_cast<std::size_t>(i)];
      m.demo[static_cast<std::size_t>(i)] = t.demo ? 1 : 0;
    }
    return m;
  }

  Eigen::VectorXd critic_targets(const Matrix& S2, const Eigen::VectorXd& r, const Eigen::VectorXd& done,
                                 double gamma, Rng* smoothing_rng = nullptr) const {
    Matrix A2 = nn::predict(actor_target, S2);
    if (cfg_.target_smoothing && smoothing_rng) {
      std::normal_distribution<double> n(0.0, cfg_.smoothing_std);
      for (long i = 0; i < A2.size(); ++i)
        A2.data()[i] = std::clamp(A2.data()[i] + std::clamp(n(*smoothing_rng), -cfg_.smoothing_clip,
                                                             cfg_.smoothing_clip),
                                  -1.0, 1.0);
    }
    const Matrix X = stack(S2, A2);
    const Eigen::VectorXd q1 = nn::predict(critic1_target, X).row(0).transpose();
    const Eigen::VectorXd q2 = nn::predict(critic2_target, X).row(0).transpose();
    return r.array() + gamma * (1.0 - done.array()) * q1.cwiseMin(q2).array();
  }

  Eigen::VectorXd critic_targets(const SampleBatch& b, double gamma) const {
    const auto m = unpack(b);
    return critic_targets(m.S2, m.r, m.done, gamma);
  }

  // Per-sample loss weights: IS weight over the size of the sample's
  // sub-batch (RL or demo). Without the demo split everything is RL.
  Eigen::VectorXd subbatch_weights(const BatchMatrices& m, bool split) {
    const long n = m.w.size();
    long n_demo = 0;
    if (split) {
      for (char d : m.demo) n_demo += d;
      counters.demo_mask_reads += n;
    }
    const long n_rl = n - n_demo;
    Eigen::VectorXd k(n);
    for (long i = 0; i < n; ++i) {
      const bool d = split && m.demo[static_cast<std::size_t>(i)];
      k(i) = m.w(i) / static_cast<double>(d ? n_demo : n_rl);
    }
    return k;
  }

  struct CriticGrads {
    nn::GradBundle g1, g2;
    CriticStep step;
  };

  // Loss gradients for both critics against the shared twin-min target.
  CriticGrads critic_gradients(const SampleBatch& b, Rng* smoothing_rng = nullptr) {
    const auto m = unpack(b);
    const bool split = variant_features().guidance;
    const Eigen::VectorXd y = critic_targets(m.S2, m.r, m.done, cfg_.gamma, smoothing_rng);
    const Eigen::VectorXd k = subbatch_weights(m, split);
    const Matrix X = stack(m.S, m.A);

    CriticGrads out;
    auto one = [&](const nn::MlpParams& net, double& loss, Eigen::VectorXd* td) {
      auto fr = nn::forward(net, X);
      const Eigen::VectorXd q = fr.output.row(0).transpose();
      const Eigen::VectorXd diff = q - y;
      if (td) *td = -diff;
      loss = (k.array() * diff.array().square()).sum();
      if (!std::isfinite(loss)) throw DivergenceError("critic loss is not finite");
      Matrix up(1, diff.size());
      up.row(0) = (2.0 * k.array() * diff.array()).matrix().transpose();
      return nn::backward(net, fr.cache, up);
    };
    out.g1 = one(critic1, out.step.loss1, &out.step.td_errors);
    out.g2 = one(critic2, out.step.loss2, nullptr);
    return out;
  }

  CriticStep critic_update(const SampleBatch& b, double lr, Rng* smoothing_rng = nullptr) {
    auto g = critic_gradients(b, smoothing_rng);
    nn::adam_step(critic1, g.g1, critic1_opt, lr);
    nn::adam_step(critic2, g.g2, critic2_opt, lr);
    ++counters.critic_steps;
    return g.step;
  }

  struct ActorGrad {
    nn::GradBundle g;
    double loss = 0.0;
  };

  // Actor objective: mean of -Q1 over RL samples plus omega times the mean
  // squared imitation error over demo samples.
  ActorGrad actor_gradient(const SampleBatch& b, double bc_weight) {
    const auto m = unpack(b);
    const VariantFeatures f = variant_features();
    const bool split = f.guidance;
    const double omega = f.bc ? bc_weight : 0.0;
    long n_demo = 0;
    if (split) {
      for (char d : m.demo) n_demo += d;
      counters.demo_mask_reads += static_cast<long>(m.demo.size());
    }
    const long n = static_cast<long>(m.demo.size());
    const long n_rl = n - n_demo;

    auto fa = nn::forward(actor, m.S);
    const Matrix& pi = fa.output;
    auto fc = nn::forward(critic1, stack(m.S, pi));
    const Eigen::VectorXd q = fc.output.row(0).transpose();

    ActorGrad out;
    Matrix up_q = Matrix::Zero(1, n);
    Matrix up_pi = Matrix::Zero(action_dim_, n);
    for (long i = 0; i < n; ++i) {
      const bool d = split && m.demo[static_cast<std::size_t>(i)];
      if (!d) {
        out.loss += -q(i) / static_cast<double>(n_rl);
        up_q(0, i) = -1.0 / static_cast<double>(n_rl);
      } else if (omega > 0) {
        const Eigen::VectorXd e = pi.col(i) - m.A.col(i);
        out.loss += omega * e.squaredNorm() / static_cast<double>(n_demo);
        up_pi.col(i) = 2.0 * omega * e / static_cast<double>(n_demo);
        ++counters.bc_samples;
      }
    }
    if (!std::isfinite(out.loss)) throw DivergenceError("actor loss is not finite");
    if (n_rl > 0) {
      const auto gc = nn::backward(critic1, fc.cache, up_q);
      up_pi += gc.input.bottomRows(action_dim_);
    }
    out.g = nn::backward(actor, fa.cache, up_pi);
    return out;
  }

  double actor_update(const SampleBatch& b, double lr, double bc_weight) {
    auto g = actor_gradient(b, bc_weight);
    nn::adam_step(actor, g.g, actor_opt, lr);
    ++counters.actor_steps;
    return g.loss;
  }

  void soft_update(double tau) {
    if (!(tau > 0 && tau <= 1)) throw ConfigError("soft_update: tau must lie in (0,1]");
    nn::blend_into(actor_target, actor, tau);
    nn::blend_into(critic1_target, critic1, tau);
    nn::blend_into(critic2_target, critic2, tau);
  }

  // Priorities for a sampled batch. TD errors use the target networks'
  // twin-min bootstrap against online critic 1; the demo bonus uses target
  // critic 1 at the stored action versus the current policy action.
  std::vector<double> compute_priorities(const SampleBatch& b, bool use_qa) {
    const auto m = unpack(b);
    const Eigen::VectorXd y = critic_targets(m.S2, m.r, m.done, cfg_.gamma);
    const Eigen::VectorXd q = nn::predict(critic1, stack(m.S, m.A)).row(0).transpose();
    Eigen::VectorXd qd, qp;
    if (use_qa) {
      qd = nn::predict(critic1_target, stack(m.S, m.A)).row(0).transpose();
      qp = nn::predict(critic1_target, stack(m.S, nn::predict(actor, m.S))).row(0).transpose();
      counters.demo_mask_reads += q.size();
    }
    std::vector<double> out(static_cast<std::size_t>(q.size()));
    for (long i = 0; i < q.size(); ++i) {
      const bool d = use_qa && m.demo[static_cast<std::size_t>(i)];
      if (d) ++counters.qa_terms;
      out[static_cast<std::size_t>(i)] =
          tdqa_priority(y(i) - q(i), d, use_qa ? qd(i) : 0.0, use_qa ? qp(i) : 0.0, cfg_.priority, use_qa);
    }
    return out;
  }

  double compute_priority(const Transition& t, bool use_qa = true) {
    SampleBatch b;
    b.transitions.push_back(t);
    b.is_weights.push_back(1.0);
    return compute_priorities(b, use_qa).front();
  }

  // ------------------------------------------------------------ checkpoint

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const {
    std::filesystem::create_directories(dir);
    nn::save_checkpoint(actor, dir / "actor.json");
    nn::save_checkpoint(critic1, dir / "critic1.json");
    nn::save_checkpoint(critic2, dir / "critic2.json");
    nn::save_checkpoint(actor_target, dir / "actor_target.json");
    nn::save_checkpoint(critic1_target, dir / "critic1_target.json");
    nn::save_checkpoint(critic2_target, dir / "critic2_target.json");
    nlohmann::json man{{"format", "phil-agent"},
                       {"version", 1},
                       {"state_dim", state_dim_},
                       {"action_dim", action_dim_},
                       {"config", cfg_.to_json()},
                       {"networks",
                        {"actor.json", "critic1.json", "critic2.json", "actor_target.json", "critic1_target.json",
                         "critic2_target.json"}}};
    if (!extra.is_null()) man["extra"] = extra;
    std::ofstream f(dir / "manifest.json");
    f << man.dump(2) << "\n";
    if (!f) throw ConfigError("cannot write checkpoint manifest in " + dir.string());
  }

  static nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw ConfigError("no manifest.json in " + dir.string());
    nlohmann::json man;
    try {
      man = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad manifest: ") + e.what());
    }
    if (man.value("format", "") != "phil-agent") throw ConfigError("manifest is not a phil-agent checkpoint");
    return man;
  }

  static Td3Agent load(const std::filesystem::path& dir) {
    const auto man = read_manifest(dir);
    Td3Agent a;
    a.cfg_ = TrainConfig::from_json(man.at("config"));
    a.state_dim_ = man.at("state_dim").get<int>();
    a.action_dim_ = man.at("action_dim").get<int>();
    a.actor = nn::load_checkpoint(dir / "actor.json");
    a.critic1 = nn::load_checkpoint(dir / "critic1.json");
    a.critic2 = nn::load_checkpoint(dir / "critic2.json");
    a.actor_target = nn::load_checkpoint(dir / "actor_target.json");
    a.critic1_target = nn::load_checkpoint(dir / "critic1_target.json");
    a.critic2_target = nn::load_checkpoint(dir / "critic2_target.json");
    if (a.actor.input_dim() != a.state_dim_ || a.actor.output_dim() != a.action_dim_)
      throw ConfigError("checkpoint actor does not match its manifest dimensions");
    a.actor_opt = nn::AdamState::zeros_like(a.actor);
    a.critic1_opt = nn::AdamState::zeros_like(a.critic1);
    a.critic2_opt = nn::AdamState::zeros_like(a.critic2);
    return a;
  }

 private:
  TrainConfig cfg_;
  int state_dim_ = 0;
  int action_dim_ = 0;
};

}  // namespace phil::agent
