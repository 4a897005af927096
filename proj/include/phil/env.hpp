#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "phil/errors.hpp"
#include "phil/geometry.hpp"

namespace phil::env {

using Vec = Eigen::VectorXd;

inline constexpr double kDt = 0.1;
inline constexpr double kWheelbase = 2.7;
inline constexpr double kMaxWheel = 0.5;  // rad
inline constexpr double kLaneWidth = 3.5;

enum class Scenario { left_turn, congestion };

inline std::string to_string(Scenario s) { return s == Scenario::left_turn ? "left-turn" : "congestion"; }

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "left-turn" || s == "left_turn") return Scenario::left_turn;
  if (s == "congestion") return Scenario::congestion;
  throw ConfigError("unknown scenario '" + s + "'");
}

// ---------------------------------------------------------------- IDM

struct IdmParams {
  double v0 = 6.0;
  double s0 = 2.0;
  double T = 1.0;
  double a_max = 2.0;
  double b = 2.0;
  double delta = 4.0;

  void validate() const {
    if (!(v0 > 0 && s0 > 0 && T > 0 && a_max > 0 && b > 0 && delta > 0))
      throw ConfigError("IDM parameters must all be positive");
  }
};

/// dv is the approach rate v - v_leader. Pass +infinity for a free road.
inline double idm_accel(double gap, double v, double dv, const IdmParams& p) {
  if (!(gap > 0)) throw ContractViolation("idm_accel: gap must be positive (overlap is a collision)");
  const double s_star = p.s0 + std::max(0.0, v * p.T + v * dv / (2.0 * std::sqrt(p.a_max * p.b)));
  const double interaction = std::isinf(gap) ? 0.0 : (s_star / gap) * (s_star / gap);
  const double a = p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - interaction);
  return std::clamp(a, -2.0 * p.b, p.a_max);
}

// ---------------------------------------------------------------- config

struct RewardConfig {
  double r_goal = 10.0;
  double r_fail = -10.0;
  double v_target = 5.0;

  void validate() const {
    if (!(r_goal > 0 && r_fail < 0)) throw ConfigError("reward config needs r_goal > 0 > r_fail");
  }
};

struct ScenarioConfig {
  Scenario scenario = Scenario::left_turn;
  int lanes = 2;
  double speed_min = 4.0;
  double speed_max = 6.0;
  double gap_min = 10.0;  // bumper to bumper, metres
  double gap_max = 50.0;
  double truck_frac = 0.0;
  bool variant = false;   // more and mixed traffic
  int horizon = 300;
  double ego_speed = 5.0;
  RewardConfig reward{};

  static ScenarioConfig defaults(Scenario s) {
    ScenarioConfig c;
    c.scenario = s;
    if (s == Scenario::congestion) {
      c.lanes = 3;
      c.gap_min = 8.0;
      c.gap_max = 16.0;
    }
    return c;
  }

  // Gap and truck settings after the variant toggle is applied.
  double eff_gap_max() const { return variant ? std::max(gap_min, gap_min + 0.5 * (gap_max - gap_min)) : gap_max; }
  double eff_truck_frac() const { return variant ? std::max(truck_frac, 0.3) : truck_frac; }

  void validate() const {
    if (scenario == Scenario::left_turn && lanes != 2) throw ConfigError("left-turn uses exactly 2 lanes");
    if (scenario == Scenario::congestion && (lanes < 3 || lanes % 2 == 0))
      throw ConfigError("congestion needs an odd lane count >= 3");
    if (!(speed_min > 0 && speed_max >= speed_min)) throw ConfigError("bad speed range");
    IdmParams idm;
    if (gap_min < idm.s0 + speed_max * idm.T) throw ConfigError("gap_min below the IDM safe gap s0 + v*T");
    if (gap_max < gap_min) throw ConfigError("gap_max < gap_min");
    if (truck_frac < 0 || truck_frac > 1) throw ConfigError("truck_frac outside [0,1]");
    if (horizon <= 0) throw ConfigError("horizon must be positive");
    if (ego_speed < 0 || ego_speed > 10) throw ConfigError("ego_speed outside [0,10]");
    reward.validate();
  }

  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "scenario=" << to_string(scenario) << "\nlanes=" << lanes << "\nspeed_min=" << speed_min
      << "\nspeed_max=" << speed_max << "\ngap_min=" << gap_min << "\ngap_max=" << gap_max
      << "\ntruck_frac=" << truck_frac << "\nvariant=" << (variant ? 1 : 0) << "\nhorizon=" << horizon
      << "\nego_speed=" << ego_speed << "\nr_goal=" << reward.r_goal << "\nr_fail=" << reward.r_fail
      << "\nv_target=" << reward.v_target << "\n";
    return o.str();
  }

  // Flat key=value text; '#' starts a comment. Keys not given keep the
  // scenario defaults.
  static ScenarioConfig parse(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    ScenarioConfig c = defaults(kv.count("scenario") ? scenario_from_string(kv["scenario"]) : Scenario::left_turn);
    auto num = [&](const std::string& k, const std::string& v) {
      try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(k);
        return d;
      } catch (const std::exception&) {
        throw ConfigError("bad numeric value for '" + k + "': " + v);
      }
    };
    for (const auto& [k, v] : kv) {
      if (k == "scenario") continue;
      else if (k == "lanes") c.lanes = static_cast<int>(num(k, v));
      else if (k == "speed_min") c.speed_min = num(k, v);
      else if (k == "speed_max") c.speed_max = num(k, v);
      else if (k == "gap_min") c.gap_min = num(k, v);
      else if (k == "gap_max") c.gap_max = num(k, v);
      else if (k == "truck_frac") c.truck_frac = num(k, v);
      else if (k == "variant") c.variant = num(k, v) != 0.0;
      else if (k == "horizon") c.horizon = static_cast<int>(num(k, v));
      else if (k == "ego_speed") c.ego_speed = num(k, v);
      else if (k == "r_goal") c.reward.r_goal = num(k, v);
      else if (k == "r_fail") c.reward.r_fail = num(k, v);
      else if (k == "v_target") c.reward.v_target = num(k, v);
      else throw ConfigError("unknown config key '" + k + "'");
    }
    c.validate();
    return c;
  }

  static ScenarioConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open scenario config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }
};

// ---------------------------------------------------------------- left-turn path

struct PathPose {
  double x, y, heading, curvature;
};

struct PathProjection {
  double s;        // arc length along the path
  double lateral;  // signed offset, positive to the left of travel
};

// North-bound approach, a radius-6 left arc onto the west-bound lane, then a
// short straight. Total length 21 m.
class LeftTurnPath {
 public:
  static constexpr double kApproach = 8.0;
  static constexpr double kRadius = 6.0;
  static constexpr double kLength = 21.0;
  static constexpr double kLaneY = 1.75;  // west-bound lane centre; east-bound at -1.75
  static constexpr double kRoadEdge = 3.5;

  static constexpr double arc_length() { return kRadius * std::numbers::pi / 2; }
  static constexpr double arc_start_y() { return kLaneY - kRadius; }
  static constexpr double start_y() { return arc_start_y() - kApproach; }
  static constexpr double length() { return kLength; }

  static PathPose pose(double s) {
    s = std::clamp(s, 0.0, kLength);
    if (s <= kApproach) return {0.0, start_y() + s, std::numbers::pi / 2, 0.0};
    if (s <= kApproach + arc_length()) {
      const double th = (s - kApproach) / kRadius;
      return {-kRadius + kRadius * std::cos(th), arc_start_y() + kRadius * std::sin(th), std::numbers::pi / 2 + th,
              1.0 / kRadius};
    }
    const double u = s - kApproach - arc_length();
    return {-kRadius - u, kLaneY, std::numbers::pi, 0.0};
  }

  static PathProjection project(double x, double y) {
    PathProjection best{0.0, 0.0};
    double best_d = std::numeric_limits<double>::infinity();
    auto consider = [&](double s, double px, double py, double lat) {
      const double d = std::hypot(x - px, y - py);
      if (d < best_d) {
        best_d = d;
        best = {s, lat};
      }
    };
    {  // approach
      const double s = std::clamp(y - start_y(), 0.0, kApproach);
      consider(s, 0.0, start_y() + s, -x);
    }
    {  // arc, centre (-R, arc_start_y)
      const double cx = -kRadius, cy = arc_start_y();
      const double th = std::clamp(std::atan2(y - cy, x - cx), 0.0, std::numbers::pi / 2);
      const double px = cx + kRadius * std::cos(th), py = cy + kRadius * std::sin(th);
      consider(kApproach + kRadius * th, px, py, kRadius - std::hypot(x - cx, y - cy));
    }
    {  // exit straight, heading west
      const double u = std::clamp(-kRadius - x, 0.0, kLength - kApproach - arc_length());
      consider(kApproach + arc_length() + u, -kRadius - u, kLaneY, kLaneY - y);
    }
    return best;
  }

  // Where the path crosses a lane centreline.
  static double conflict_s(int lane) {
    if (lane == 1) return kApproach + arc_length();
    const double th = std::asin((-kLaneY - arc_start_y()) / kRadius);
    return kApproach + kRadius * th;
  }
  static double conflict_x(int lane) { return pose(conflict_s(lane)).x; }

  // Path interval over which the ego body can touch the main road.
  static double zone_begin() { return kApproach - (kRoadEdge + arc_start_y()) - 2.25; }
  static double zone_end() { return kLength; }
};

// ---------------------------------------------------------------- PI lateral

struct PiGains {
  double kp = 0.8;
  double ki = 0.1;
};

class PiLateral {
 public:
  explicit PiLateral(PiGains g = {}) : g_(g) {}

  // Wheel-angle correction (rad, positive = left) for a cross-track error
  // measured positive to the left of the path.
  double update(double cross_track, double dt) {
    integral_ = std::clamp(integral_ + cross_track * dt, -1.0, 1.0);
    return command(cross_track);
  }
  double command(double cross_track) const {
    return std::clamp(-(g_.kp * cross_track + g_.ki * integral_), -kMaxWheel, kMaxWheel);
  }
  double integral() const { return integral_; }
  void reset() { integral_ = 0.0; }
  const PiGains& gains() const { return g_; }

 private:
  PiGains g_;
  double integral_ = 0.0;
};

// ---------------------------------------------------------------- world

struct TrafficVehicle {
  VehicleState state;
  IdmParams idm;
  int lane = 0;
  double dir = 1.0;  // +1 travels towards +x, -1 towards -x
};

struct StepInfo {
  double distance = 0.0;  // surviving distance so far
  double dt = kDt;
  bool goal = false;
  bool collision = false;
  bool off_road = false;
  bool truncated = false;  // horizon reached without a terminal event
  double wheel_angle = 0.0;
  double lateral_accel = 0.0;
  double speed = 0.0;
};

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

struct CongestionReward {
  double smoothness = 0.0;
  double terminal = 0.0;
  double total() const { return smoothness + terminal; }
};

inline CongestionReward reward_congestion(double steer_t, double steer_prev, bool goal, bool fail,
                                          const RewardConfig& rc = {}) {
  CongestionReward r;
  r.smoothness = -std::abs(steer_t - steer_prev);
  if (goal) r.terminal += rc.r_goal;
  if (fail) r.terminal += rc.r_fail;
  return r;
}

inline double reward_left_turn(double v_ego, bool goal, bool fail, const RewardConfig& rc = {}) {
  double r = -std::abs(v_ego - rc.v_target);
  if (goal) r += rc.r_goal;
  if (fail) r += rc.r_fail;
  return r;
}

inline double pedal_to_accel(double pedal) { return pedal >= 0 ? 3.0 * pedal : 6.0 * pedal; }

class World {
 public:
  static constexpr double kCongestionLength = 80.0;
  static constexpr double kEgoMaxSpeed = 10.0;
  static constexpr double kPreview = 2.5;  // PI looks this far ahead of the ego centre
  static constexpr double kEgoV0Congestion = 6.0;

  static World reset(const ScenarioConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    World w;
    w.cfg_ = cfg;
    w.rng_.seed(seed);
    if (cfg.scenario == Scenario::left_turn)
      w.reset_left_turn();
    else
      w.reset_congestion();
    return w;
  }

  static int state_dim(Scenario s) { return s == Scenario::left_turn ? 10 : 9; }
  static int action_dim(Scenario) { return 1; }

  Scenario scenario() const { return cfg_.scenario; }
  const ScenarioConfig& config() const { return cfg_; }
  const VehicleState& ego() const { return ego_; }
  const std::vector<TrafficVehicle>& traffic() const { return traffic_; }
  int step_index() const { return step_; }
  double elapsed() const { return step_ * kDt; }
  bool done() const { return done_; }
  double distance() const { return distance_; }
  double progress() const { return progress_; }  // left-turn path arc length / congestion x offset
  double stall_time() const { return stall_time_; }
  double wheel_angle() const { return wheel_; }
  double road_half_width() const { return 0.5 * cfg_.lanes * kLaneWidth; }
  double lane_center(int lane) const {
    if (cfg_.scenario == Scenario::left_turn) return lane == 0 ? -LeftTurnPath::kLaneY : LeftTurnPath::kLaneY;
    return (lane - 0.5 * (cfg_.lanes - 1)) * kLaneWidth;
  }
  double ego_start_x() const { return ego_x0_; }
  bool in_conflict_zone() const {
    return cfg_.scenario == Scenario::left_turn && progress_ >= LeftTurnPath::zone_begin() &&
           progress_ <= LeftTurnPath::zone_end();
  }
  const PiLateral& pi() const { return pi_; }

  Vec features() const { return cfg_.scenario == Scenario::left_turn ? features_left_turn() : features_congestion(); }

  StepResult step(const Vec& action) {
    if (done_) throw ContractViolation("step called on a finished episode");
    if (action.size() != 1) throw ShapeError("action must have dimension 1");
    const double a = std::clamp(std::isfinite(action(0)) ? action(0) : 0.0, -1.0, 1.0);

    // Traffic accelerations are computed from the pre-step state, then
    // everything is integrated together.
    std::vector<double> acc(traffic_.size());
    for (std::size_t i = 0; i < traffic_.size(); ++i) acc[i] = traffic_accel(i);

    StepResult out;
    if (cfg_.scenario == Scenario::left_turn)
      advance_ego_left_turn(a);
    else
      advance_ego_congestion(a);

    for (std::size_t i = 0; i < traffic_.size(); ++i) {
      auto& s = traffic_[i].state;
      const double v_new = std::max(0.0, s.v + acc[i] * kDt);
      const double travel = 0.5 * (s.v + v_new) * kDt;
      s.x += traffic_[i].dir * travel;
      s.v = v_new;
    }
    ++step_;

    bool collision = false;
    for (const auto& t : traffic_)
      if (overlap(ego_, t.state)) {
        collision = true;
        break;
      }
    bool off_road = false;
    bool goal = false;
    if (cfg_.scenario == Scenario::congestion) {
      for (const auto& c : corners(ego_))
        if (std::abs(c.y) > road_half_width()) off_road = true;
      goal = !collision && !off_road && progress_ >= kCongestionLength;
    } else {
      goal = !collision && progress_ >= LeftTurnPath::length();
    }
    const bool fail = collision || off_road;

    if (cfg_.scenario == Scenario::left_turn)
      out.reward = reward_left_turn(ego_.v, goal, fail, cfg_.reward);
    else
      out.reward = reward_congestion(wheel_, wheel_prev_, goal, fail, cfg_.reward).total();

    out.info.goal = goal;
    out.info.collision = collision;
    out.info.off_road = off_road;
    out.info.truncated = !goal && !fail && step_ >= cfg_.horizon;
    out.done = goal || fail || out.info.truncated;
    out.info.distance = distance_;
    out.info.wheel_angle = wheel_;
    out.info.lateral_accel = ego_.v * ego_.v * std::tan(wheel_) / kWheelbase;
    out.info.speed = ego_.v;
    done_ = out.done;
    out.obs = features();
    return out;
  }

  // FNV-1a over every double in the dynamic state; equal worlds hash equal.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](double d) {
      unsigned char b[sizeof(double)];
      std::memcpy(b, &d, sizeof d);
      for (unsigned char c : b) {
        h ^= c;
        h *= 1099511628211ULL;
      }
    };
    auto mixv = [&](const VehicleState& s) {
      mix(s.x);
      mix(s.y);
      mix(s.heading);
      mix(s.v);
      mix(s.length);
      mix(s.width);
    };
    mixv(ego_);
    for (const auto& t : traffic_) {
      mixv(t.state);
      mix(t.idm.v0);
      mix(t.dir);
    }
    mix(static_cast<double>(step_));
    return h;
  }

  // Test hooks: place vehicles by hand.
  void set_ego(const VehicleState& s) {
    ego_ = s;
    if (cfg_.scenario == Scenario::left_turn) progress_ = LeftTurnPath::project(s.x, s.y).s;
  }
  void set_traffic(std::vector<TrafficVehicle> t) { traffic_ = std::move(t); }

  // Nearest vehicle ahead in a lane band; returns index or -1. `gap` gets the
  // bumper-to-bumper distance.
  int leader_of(double x, double y, double length, double width, double dir, double& gap, int skip = -1) const {
    int best = -1;
    gap = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < traffic_.size(); ++j) {
      if (static_cast<int>(j) == skip) continue;
      const auto& o = traffic_[j];
      if (o.dir != dir) continue;
      if (std::abs(o.state.y - y) >= 0.5 * (width + o.state.width)) continue;
      const double ahead = (o.state.x - x) * dir;
      if (ahead <= 0) continue;
      const double g = ahead - 0.5 * (length + o.state.length);
      if (g < gap) {
        gap = g;
        best = static_cast<int>(j);
      }
    }
    return best;
  }

 private:
  ScenarioConfig cfg_;
  std::mt19937_64 rng_;
  VehicleState ego_;
  std::vector<TrafficVehicle> traffic_;
  int step_ = 0;
  bool done_ = false;
  double distance_ = 0.0;
  double progress_ = 0.0;
  double stall_time_ = 0.0;
  double wheel_ = 0.0;
  double wheel_prev_ = 0.0;
  double ego_x0_ = 0.0;
  PiLateral pi_{};

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  VehicleState make_vehicle(double x, double y, double heading, double v) {
    VehicleState s;
    s.x = x;
    s.y = y;
    s.heading = heading;
    s.v = v;
    if (uniform(0.0, 1.0) < cfg_.eff_truck_frac()) {
      s.length = 8.0;
      s.width = 2.3;
    }
    return s;
  }

  TrafficVehicle make_traffic(double x, double y, double dir, int lane) {
    const double v = uniform(cfg_.speed_min, cfg_.speed_max);
    TrafficVehicle t;
    t.state = make_vehicle(x, y, dir > 0 ? 0.0 : std::numbers::pi, v);
    t.idm.v0 = v;
    t.lane = lane;
    t.dir = dir;
    return t;
  }

  // Lays vehicles bumper to bumper starting at x = `edge` and growing towards
  // `sign` (+1 or -1) until `end` is passed.
  void chain(double edge, double end, double sign, double y, double dir, int lane) {
    while ((end - edge) * sign > 0) {
      TrafficVehicle t = make_traffic(0.0, y, dir, lane);
      const double gap = uniform(cfg_.gap_min, cfg_.eff_gap_max());
      t.state.x = edge + sign * (gap + 0.5 * t.state.length);
      edge = t.state.x + sign * 0.5 * t.state.length;
      traffic_.push_back(t);
    }
  }

  void reset_left_turn() {
    ego_ = VehicleState{0.0, LeftTurnPath::start_y(), std::numbers::pi / 2, cfg_.ego_speed};
    progress_ = 0.0;
    // East-bound lane fills from downstream (x=40) back to x=-150, and the
    // west-bound lane mirrors it.
    chain(40.0 - uniform(0.0, cfg_.eff_gap_max()), -150.0, -1.0, -LeftTurnPath::kLaneY, 1.0, 0);
    chain(-40.0 + uniform(0.0, cfg_.eff_gap_max()), 150.0, 1.0, LeftTurnPath::kLaneY, -1.0, 1);
  }

  void reset_congestion() {
    const int ego_lane = cfg_.lanes / 2;
    ego_ = VehicleState{0.0, lane_center(ego_lane) + uniform(-0.3, 0.3), uniform(-0.05, 0.05), cfg_.ego_speed};
    ego_x0_ = ego_.x;
    progress_ = 0.0;
    for (int l = 0; l < cfg_.lanes; ++l) {
      const double y = lane_center(l);
      if (l == ego_lane) {
        chain(ego_.x + 0.5 * ego_.length, 170.0, 1.0, y, 1.0, l);
        chain(ego_.x - 0.5 * ego_.length, -40.0, -1.0, y, 1.0, l);
      } else {
        chain(-40.0 - uniform(0.0, cfg_.eff_gap_max()), 170.0, 1.0, y, 1.0, l);
      }
    }
  }

  double traffic_accel(std::size_t i) const {
    const auto& t = traffic_[i];
    double gap;
    const int lead = leader_of(t.state.x, t.state.y, t.state.length, t.state.width, t.dir, gap, static_cast<int>(i));
    double dv = 0.0;
    if (lead >= 0) dv = t.state.v - traffic_[static_cast<std::size_t>(lead)].state.v;
    if (cfg_.scenario == Scenario::congestion) {
      // Congestion traffic does see the ego.
      if (std::abs(ego_.y - t.state.y) < 0.5 * (ego_.width + t.state.width)) {
        const double ahead = ego_.x - t.state.x;
        if (ahead > 0) {
          const double g = ahead - 0.5 * (ego_.length + t.state.length);
          if (g < gap) {
            gap = g;
            dv = t.state.v - ego_.v * std::cos(ego_.heading);
          }
        }
      }
    }
    if (gap <= 0) return -2.0 * t.idm.b;
    return idm_accel(gap, t.state.v, dv, t.idm);
  }

  void advance_ego_left_turn(double pedal) {
    const double v_new = std::clamp(ego_.v + pedal_to_accel(pedal) * kDt, 0.0, kEgoMaxSpeed);
    const PathProjection pr = LeftTurnPath::project(ego_.x, ego_.y);
    const double px = ego_.x + kPreview * std::cos(ego_.heading);
    const double py = ego_.y + kPreview * std::sin(ego_.heading);
    const PathProjection pv = LeftTurnPath::project(px, py);
    const double ff = std::atan(kWheelbase * LeftTurnPath::pose(pr.s + kPreview).curvature);
    wheel_prev_ = wheel_;
    wheel_ = std::clamp(ff + pi_.update(pv.lateral, kDt), -kMaxWheel, kMaxWheel);
    integrate_bicycle(v_new, wheel_);
    const double s = LeftTurnPath::project(ego_.x, ego_.y).s;
    progress_ = std::max(progress_, s);
    distance_ = std::clamp(progress_, 0.0, LeftTurnPath::length());
    stall_time_ = (ego_.v < 0.1 && in_conflict_zone()) ? stall_time_ + kDt : 0.0;
  }

  void advance_ego_congestion(double steer) {
    double gap;
    const int lead = leader_of(ego_.x, ego_.y, ego_.length, ego_.width, 1.0, gap);
    IdmParams p;
    p.v0 = kEgoV0Congestion;
    double accel;
    if (lead < 0) {
      accel = idm_accel(std::numeric_limits<double>::infinity(), ego_.v, 0.0, p);
    } else if (gap <= 0) {
      accel = -2.0 * p.b;
    } else {
      accel = idm_accel(gap, ego_.v, ego_.v - traffic_[static_cast<std::size_t>(lead)].state.v, p);
    }
    const double v_new = std::clamp(ego_.v + accel * kDt, 0.0, kEgoMaxSpeed);
    wheel_prev_ = wheel_;
    // Positive normalized steering is a right turn.
    wheel_ = steer * kMaxWheel;
    integrate_bicycle(v_new, -wheel_);
    progress_ = std::max(progress_, ego_.x - ego_x0_);
    distance_ = std::clamp(progress_, 0.0, kCongestionLength);
  }

  // wheel is positive to the left (counter-clockwise yaw).
  void integrate_bicycle(double v_new, double wheel) {
    const double v = 0.5 * (ego_.v + v_new);
    const double h_mid = ego_.heading + 0.5 * v / kWheelbase * std::tan(wheel) * kDt;
    ego_.x += v * std::cos(h_mid) * kDt;
    ego_.y += v * std::sin(h_mid) * kDt;
    ego_.heading = wrap_angle(ego_.heading + v / kWheelbase * std::tan(wheel) * kDt);
    ego_.v = v_new;
  }

  static double clip1(double v) { return std::clamp(v, -1.0, 1.0); }

  Vec features_left_turn() const {
    Vec f = Vec::Ones(10);
    f(0) = clip1(ego_.v / 6.0);
    f(1) = clip1((LeftTurnPath::conflict_s(0) - progress_) / 30.0);
    std::vector<std::pair<double, double>> near;  // (signed distance to conflict, speed)
    for (const auto& t : traffic_) {
      const double cx = LeftTurnPath::conflict_x(t.lane);
      near.emplace_back((cx - t.state.x) * t.dir, t.state.v);
    }
    std::sort(near.begin(), near.end(),
              [](const auto& a, const auto& b) { return std::abs(a.first) < std::abs(b.first); });
    for (std::size_t k = 0; k < 4 && k < near.size(); ++k) {
      f(2 + 2 * static_cast<long>(k)) = clip1(near[k].first / 30.0);
      f(3 + 2 * static_cast<long>(k)) = clip1(near[k].second / 6.0);
    }
    return f;
  }

  Vec features_congestion() const {
    Vec f = Vec::Ones(9);
    const double mid = lane_center(cfg_.lanes / 2);
    f(0) = clip1((ego_.y - mid) / 2.0);
    f(1) = clip1(wrap_angle(ego_.heading) / 0.5);
    f(2) = clip1(ego_.v / 6.0);
    // Sectors: 3 front-left, 4 front, 5 front-right, 6 left, 7 right, 8 rear.
    std::array<double, 6> clr;
    clr.fill(std::numeric_limits<double>::infinity());
    const double half_lane = 0.5 * kLaneWidth;
    for (const auto& t : traffic_) {
      const double dx = t.state.x - ego_.x;
      const double dy = t.state.y - ego_.y;
      const double lon = std::abs(dx) - 0.5 * (t.state.length + ego_.length);
      const double lat = std::abs(dy) - 0.5 * (t.state.width + ego_.width);
      if (std::abs(dy) < half_lane) {
        if (dx > 0)
          clr[1] = std::min(clr[1], lon);
        else
          clr[5] = std::min(clr[5], lon);
      } else if (std::abs(dy) < 3 * half_lane) {
        const bool left = dy > 0;
        if (lon <= 0)
          clr[left ? 3 : 4] = std::min(clr[left ? 3 : 4], lat);
        else if (dx > 0)
          clr[left ? 0 : 2] = std::min(clr[left ? 0 : 2], lon);
      }
    }
    for (int k = 0; k < 6; ++k) f(3 + k) = std::isinf(clr[k]) ? 1.0 : clip1(clr[k] / 20.0);
    return f;
  }
};

inline std::pair<World, Vec> reset(const ScenarioConfig& cfg, std::uint64_t seed) {
  World w = World::reset(cfg, seed);
  Vec obs = w.features();
  return {std::move(w), std::move(obs)};
}

}  // namespace phil::env
