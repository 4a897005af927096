#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "phil/env.hpp"
#include "phil/errors.hpp"
#include "phil/nn.hpp"

namespace phil::guidance {

using env::Scenario;
using env::VehicleState;
using env::World;
using Vec = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Source { none, oracle, model, live };

inline std::string to_string(Source s) {
  switch (s) {
    case Source::none: return "none";
    case Source::oracle: return "oracle";
    case Source::model: return "model";
    case Source::live: return "live";
  }
  return "?";
}

inline Source source_from_string(const std::string& s) {
  if (s == "none") return Source::none;
  if (s == "oracle") return Source::oracle;
  if (s == "model") return Source::model;
  if (s == "live") return Source::live;
  throw ConfigError("unknown guidance source '" + s + "'");
}

struct TriggerParams {
  double ttc = 1.5;        // s
  double stall = 5.0;      // s below 0.1 m/s inside the conflict zone
  double rollout = 1.0;    // s, congestion constant-velocity lookahead
  int min_dwell = 5;       // steps the oracle keeps control once triggered
};

struct GuidanceConfig {
  double r_pen = -10.0;
  TriggerParams trigger{};
  double poor_guidance_frac = 0.0;
  Source source = Source::oracle;

  void validate() const {
    if (r_pen > 0) throw ConfigError("r_pen must be <= 0");
    if (!(poor_guidance_frac >= 0 && poor_guidance_frac <= 1)) throw ConfigError("poor_guidance_frac outside [0,1]");
    if (trigger.min_dwell < 1) throw ConfigError("min_dwell must be >= 1");
  }
};

// ---------------------------------------------------------------- pure pieces

// Full authority: the mask is all ones or all zeros.
inline Vec arbitrate(const Vec& a_rl, const Vec& a_h, const Eigen::VectorXi& delta) {
  if (a_rl.size() != a_h.size() || delta.size() != a_rl.size()) throw ShapeError("arbitrate: shape mismatch");
  const bool all_on = (delta.array() == 1).all();
  const bool all_off = (delta.array() == 0).all();
  if (!all_on && !all_off) throw ContractViolation("arbitrate: mixed demonstration mask");
  return all_on ? a_h : a_rl;
}

inline Vec arbitrate(const Vec& a_rl, const Vec& a_h, bool delta) { return delta ? a_h : a_rl; }

inline bool detect_intervention(bool delta_t, bool delta_prev) { return delta_t && !delta_prev; }

inline double shape_reward(double r, bool intervened, double r_pen) { return intervened ? r + r_pen : r; }

inline Vec degrade_guidance(const Vec& action, double frac, std::mt19937_64& rng) {
  if (!(frac >= 0 && frac <= 1)) throw ConfigError("degrade_guidance: frac outside [0,1]");
  // Two draws every call so the stream position does not depend on frac.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double coin = u(rng);
  Vec random(action.size());
  for (long i = 0; i < random.size(); ++i) random(i) = 2.0 * u(rng) - 1.0;
  return coin < frac ? random : action;
}

// ---------------------------------------------------------------- time to collision

// First time in [0, horizon] at which two constant-velocity rectangles touch,
// or +inf. Sampled every `dt` and refined by bisection.
inline double ttc_pair(const VehicleState& a, double vax, double vay, const VehicleState& b, double vbx, double vby,
                       double horizon, double dt = 0.02) {
  auto at = [](const VehicleState& s, double vx, double vy, double t) {
    VehicleState r = s;
    r.x += vx * t;
    r.y += vy * t;
    return r;
  };
  if (env::overlap(a, b)) return 0.0;
  double prev = 0.0;
  for (double t = dt; t <= horizon + 1e-12; t += dt) {
    if (env::overlap(at(a, vax, vay, t), at(b, vbx, vby, t))) {
      double lo = prev, hi = t;
      for (int i = 0; i < 30; ++i) {
        const double mid = 0.5 * (lo + hi);
        (env::overlap(at(a, vax, vay, mid), at(b, vbx, vby, mid)) ? hi : lo) = mid;
      }
      return hi;
    }
    prev = t;
  }
  return kInf;
}

inline VehicleState traffic_at(const env::TrafficVehicle& t, double time) {
  VehicleState s = t.state;
  s.x += t.dir * t.state.v * time;
  return s;
}

inline VehicleState ego_on_path(const VehicleState& ego, double s) {
  const auto p = env::LeftTurnPath::pose(s);
  VehicleState e = ego;
  e.x = p.x;
  e.y = p.y;
  e.heading = p.heading;
  return e;
}

// Vehicles travelling the same way as the ego and sitting behind it cannot be
// helped by braking, so they are not conflicts.
inline bool following_behind(const VehicleState& ego, const env::TrafficVehicle& t) {
  const double hx = std::cos(ego.heading), hy = std::sin(ego.heading);
  const double same_dir = hx * t.dir;
  const double rel = (t.state.x - ego.x) * hx + (t.state.y - ego.y) * hy;
  return same_dir > 0.7 && rel < 0;
}

// Left-turn TTC with the ego continuing along its path at its current speed.
inline double left_turn_ttc(const World& w, double horizon = 3.0, double dt = 0.02) {
  const auto& ego = w.ego();
  const double s0 = env::LeftTurnPath::project(ego.x, ego.y).s;
  double best = kInf;
  for (const auto& t : w.traffic()) {
    if (following_behind(ego, t)) continue;
    if (std::abs(t.state.x - ego.x) > 60) continue;
    auto overl = [&](double time) {
      const double s = s0 + ego.v * time;
      if (s >= env::LeftTurnPath::length() && time > 0) return false;  // gone through the goal
      return env::overlap(time == 0 ? ego : ego_on_path(ego, s), traffic_at(t, time));
    };
    if (overl(0.0)) return 0.0;
    double prev = 0.0;
    for (double time = dt; time <= std::min(horizon, best) + 1e-12; time += dt) {
      if (overl(time)) {
        double lo = prev, hi = time;
        for (int i = 0; i < 20; ++i) {
          const double mid = 0.5 * (lo + hi);
          (overl(mid) ? hi : lo) = mid;
        }
        best = std::min(best, hi);
        break;
      }
      prev = time;
    }
  }
  return best;
}

inline bool congestion_rollout_hits(const World& w, double horizon) {
  const auto& ego = w.ego();
  const double vx = ego.v * std::cos(ego.heading), vy = ego.v * std::sin(ego.heading);
  const int n = static_cast<int>(std::lround(horizon / env::kDt));
  for (int k = 0; k <= n; ++k) {
    const double t = k * env::kDt;
    VehicleState e = ego;
    e.x += vx * t;
    e.y += vy * t;
    for (const auto& c : env::corners(e))
      if (std::abs(c.y) > w.road_half_width()) return true;
    for (const auto& tv : w.traffic())
      if (std::abs(tv.state.x - ego.x) < 40 && env::overlap(e, traffic_at(tv, t))) return true;
  }
  return false;
}

inline bool oracle_should_intervene(const World& w, const TriggerParams& p) {
  if (w.scenario() == Scenario::left_turn) {
    if (w.stall_time() > p.stall + 1e-9) return true;
    return left_turn_ttc(w) < p.ttc;
  }
  return congestion_rollout_hits(w, p.rollout);
}

// ---------------------------------------------------------------- oracle driver

inline double tracking_pedal(double v, double v_target) { return std::clamp(0.5 * (v_target - v), -1.0, 1.0); }

struct PlanOutcome {
  double conflict = kInf;  // first time within the safety margin of a vehicle
  double cost = 0.0;       // accumulated speed penalty, |v - v_target| per step
};

// Rolls the ego along its path under a pedal law against constant-velocity
// traffic.
template <class PedalLaw>
PlanOutcome evaluate_plan(const World& w, PedalLaw law, double horizon = 4.0, double margin = 0.25) {
  const auto& ego = w.ego();
  const double vt = w.config().reward.v_target;
  double s = env::LeftTurnPath::project(ego.x, ego.y).s;
  double v = ego.v;
  PlanOutcome out;
  const int n = static_cast<int>(std::lround(horizon / env::kDt));
  for (int k = 0; k <= n; ++k) {
    const double t = k * env::kDt;
    if (s >= env::LeftTurnPath::length()) return out;
    const VehicleState e = k == 0 ? ego : ego_on_path(ego, s);
    for (const auto& tv : w.traffic()) {
      if (std::abs(tv.state.x - ego.x) > 80) continue;
      if (env::overlap(e, traffic_at(tv, t), margin)) {
        out.conflict = t;
        return out;
      }
    }
    const double v_new = std::clamp(v + env::pedal_to_accel(law(t, v)) * env::kDt, 0.0, World::kEgoMaxSpeed);
    s += 0.5 * (v + v_new) * env::kDt;
    v = v_new;
    out.cost += std::abs(v - vt);
  }
  return out;
}

// Gap acceptance by receding-horizon search: hold a pedal for a while, then
// track the target speed; take the cheapest plan that stays clear of every
// vehicle. With no clear plan, brake unless going delays the conflict more.
inline double left_turn_oracle(const World& w) {
  const double vt = w.config().reward.v_target;
  const double v0 = w.ego().v;
  double best_pedal = -1.0, best_cost = kInf;
  double latest = -1.0, latest_pedal = -1.0;
  auto consider = [&](double first, const PlanOutcome& o) {
    if (std::isinf(o.conflict)) {
      if (o.cost < best_cost) {
        best_cost = o.cost;
        best_pedal = first;
      }
    } else if (o.conflict > latest) {
      latest = o.conflict;
      latest_pedal = first;
    }
  };
  consider(tracking_pedal(v0, vt), evaluate_plan(w, [vt](double, double v) { return tracking_pedal(v, vt); }));
  for (double p : {1.0, 0.5, 0.25, 0.0, -0.25, -0.5, -1.0})
    for (double hold : {0.5, 1.0, 2.0, 4.0})
      consider(p, evaluate_plan(w, [=](double t, double v) { return t < hold ? p : tracking_pedal(v, vt); }));
  if (!std::isinf(best_cost)) return best_pedal;
  return latest_pedal;
}

// Lateral midpoint of the free corridor next to the ego, from vehicles in the
// neighbouring lanes (or the road edge) that overlap the lookahead window.
inline double congestion_gap_center(const World& w, double lookahead) {
  const auto& ego = w.ego();
  const int lanes = w.config().lanes;
  int ref = 0;
  for (int l = 1; l < lanes; ++l)
    if (std::abs(w.lane_center(l) - ego.y) < std::abs(w.lane_center(ref) - ego.y)) ref = l;
  double left = w.road_half_width(), right = -w.road_half_width();
  const double x_lo = ego.x - 0.5 * ego.length - 2.0, x_hi = ego.x + lookahead;
  for (const auto& t : w.traffic()) {
    if (t.lane == ref) continue;
    const double t_lo = t.state.x - 0.5 * t.state.length, t_hi = t.state.x + 0.5 * t.state.length;
    if (t_hi < x_lo || t_lo > x_hi) continue;
    if (t.lane > ref)
      left = std::min(left, t.state.y - 0.5 * t.state.width);
    else
      right = std::max(right, t.state.y + 0.5 * t.state.width);
  }
  const double c = w.lane_center(ref);
  return std::clamp(0.5 * (left + right), c - 1.0, c + 1.0);
}

inline double congestion_oracle(const World& w) {
  const auto& ego = w.ego();
  const double ld = std::max(6.0, 1.5 * ego.v);
  const double ty = congestion_gap_center(w, ld);
  const double alpha = env::wrap_angle(std::atan2(ty - ego.y, ld) - ego.heading);
  const double kappa = 2.0 * std::sin(alpha) / ld;
  const double wheel_left = std::atan(env::kWheelbase * kappa);
  return std::clamp(-wheel_left / env::kMaxWheel, -1.0, 1.0);
}

inline Vec oracle_action(const World& w) {
  Vec a(1);
  a(0) = w.scenario() == Scenario::left_turn ? left_turn_oracle(w) : congestion_oracle(w);
  return a;
}

// ---------------------------------------------------------------- human model

struct HumanModelConfig {
  double lr = 1e-4;
  int batch = 128;
  int steps_per_update = 0;  // gradient steps at each episode end; 0 = one pass over the demo set
};

class HumanModel {
 public:
  explicit HumanModel(HumanModelConfig cfg = {}) : cfg_(cfg) {}

  bool initialized() const { return initialized_; }
  int episodes() const { return episodes_; }
  const nn::MlpParams& net() const { return net_; }
  const HumanModelConfig& config() const { return cfg_; }
  std::size_t demo_count() const { return states_.size(); }

  // Starts from a copy of the (untrained) agent policy.
  void initialize_from(const nn::MlpParams& actor) {
    net_ = actor;
    adam_ = nn::AdamState::zeros_like(net_);
    initialized_ = true;
  }

  Vec act(const Vec& s) const {
    if (!initialized_) throw ContractViolation("human model used before initialization");
    return nn::predict_one(net_, s);
  }

  void add_demo(const Vec& s, const Vec& a) {
    states_.push_back(s);
    actions_.push_back(a);
  }

  // Squared error summed over action dims, averaged over samples.
  double mse(const std::vector<Vec>& s, const std::vector<Vec>& a) const {
    if (s.empty()) return 0.0;
    Eigen::MatrixXd S(s.front().size(), static_cast<long>(s.size()));
    Eigen::MatrixXd A(a.front().size(), static_cast<long>(a.size()));
    for (std::size_t i = 0; i < s.size(); ++i) {
      S.col(static_cast<long>(i)) = s[i];
      A.col(static_cast<long>(i)) = a[i];
    }
    return (nn::predict(net_, S) - A).colwise().squaredNorm().mean();
  }

  // One episode-end update over the aggregated demonstrations: a shuffled
  // pass in batches (or a fixed number of batches if configured). Returns the
  // mean batch loss.
  double update(std::mt19937_64& rng) {
    if (!initialized_) throw ContractViolation("human_model_update before initialization");
    ++episodes_;
    if (states_.empty()) return 0.0;
    const std::size_t b = static_cast<std::size_t>(cfg_.batch);
    const std::size_t steps =
        cfg_.steps_per_update > 0 ? static_cast<std::size_t>(cfg_.steps_per_update) : (states_.size() + b - 1) / b;
    std::vector<std::size_t> idx(states_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    double total = 0.0;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < steps; ++k) {
      if (pos >= idx.size()) {
        std::shuffle(idx.begin(), idx.end(), rng);
        pos = 0;
      }
      const std::size_t n = std::min(b, idx.size() - pos);
      Eigen::MatrixXd S(states_.front().size(), static_cast<long>(n));
      Eigen::MatrixXd A(actions_.front().size(), static_cast<long>(n));
      for (std::size_t i = 0; i < n; ++i) {
        S.col(static_cast<long>(i)) = states_[idx[pos + i]];
        A.col(static_cast<long>(i)) = actions_[idx[pos + i]];
      }
      pos += n;
      total += fit_batch(S, A);
    }
    return total / static_cast<double>(steps);
  }

  // A single Adam step on one batch of (s, a) pairs.
  double fit_batch(const Eigen::MatrixXd& S, const Eigen::MatrixXd& A) {
    if (!initialized_) throw ContractViolation("human_model_update before initialization");
    auto fr = nn::forward(net_, S);
    const Eigen::MatrixXd diff = fr.output - A;
    const double n = static_cast<double>(S.cols());
    const double loss = diff.colwise().squaredNorm().mean();
    const auto grads = nn::backward(net_, fr.cache, (2.0 / n) * diff);
    nn::adam_step(net_, grads, adam_, cfg_.lr);
    return loss;
  }

 private:
  HumanModelConfig cfg_;
  nn::MlpParams net_;
  nn::AdamState adam_;
  bool initialized_ = false;
  int episodes_ = 0;
  std::vector<Vec> states_;
  std::vector<Vec> actions_;
};

// ---------------------------------------------------------------- per-step controller

struct Decision {
  bool delta = false;       // guidance acted this step
  bool intervened = false;  // 0 -> 1 edge, receives the shaping penalty
  Vec action_h;             // what guidance applied (degraded if configured)
  Vec label;                // clean oracle label for human-model training
  bool live = false;
};

// Live input: returns a command only while the human holds control.
using LiveSource = std::function<std::optional<Vec>()>;

class Controller {
 public:
  Controller(GuidanceConfig cfg, HumanModelConfig hm, std::uint64_t degrade_seed)
      : cfg_(cfg), model_(hm), degrade_rng_(degrade_seed) {
    cfg_.validate();
  }

  const GuidanceConfig& config() const { return cfg_; }
  HumanModel& model() { return model_; }
  const HumanModel& model() const { return model_; }
  void set_live(LiveSource src) { live_ = std::move(src); }

  void begin_episode() {
    active_ = false;
    held_ = 0;
    prev_delta_ = false;
  }

  Decision decide(const World& w, const Vec& state, const nn::MlpParams& actor) {
    Decision d;
    if (live_) {
      if (auto cmd = live_()) {
        d.delta = true;
        d.live = true;
        d.action_h = cmd->cwiseMax(-1.0).cwiseMin(1.0);
        d.label = d.action_h;
        active_ = false;
        held_ = 0;
      }
    }
    if (!d.live && (cfg_.source == Source::oracle || cfg_.source == Source::model)) {
      const bool trig = oracle_should_intervene(w, cfg_.trigger);
      if (!active_ && trig) {
        active_ = true;
        held_ = 0;
      } else if (active_ && held_ >= cfg_.trigger.min_dwell && !trig) {
        active_ = false;
      }
      if (active_) {
        ++held_;
        d.delta = true;
        d.label = oracle_action(w);
        Vec act = d.label;
        if (!model_.initialized()) model_.initialize_from(actor);
        if (cfg_.source == Source::model) act = model_.act(state);
        d.action_h = degrade_guidance(act, cfg_.poor_guidance_frac, degrade_rng_);
      }
    }
    d.intervened = detect_intervention(d.delta, prev_delta_);
    prev_delta_ = d.delta;
    return d;
  }

 private:
  GuidanceConfig cfg_;
  HumanModel model_;
  std::mt19937_64 degrade_rng_;
  LiveSource live_;
  bool active_ = false;
  int held_ = 0;
  bool prev_delta_ = false;
};

}  // namespace phil::guidance
