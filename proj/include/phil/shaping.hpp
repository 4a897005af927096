#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "phil/errors.hpp"

namespace phil::shaping {

using Matrix = Eigen::MatrixXd;

struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> P;  // P[(s*A + a)*S + s']
  std::vector<double> R;  // same layout as P
  double gamma = 0.95;
  std::vector<char> unacceptable;

  static TabularMdp empty(int n_states, int n_actions, double gamma) {
    if (n_states < 1 || n_actions < 1) throw ConfigError("MDP needs at least one state and one action");
    TabularMdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.gamma = gamma;
    const auto n = static_cast<std::size_t>(n_states) * n_actions * n_states;
    m.P.assign(n, 0.0);
    m.R.assign(n, 0.0);
    m.unacceptable.assign(static_cast<std::size_t>(n_states), 0);
    return m;
  }

  std::size_t idx(int s, int a, int s2) const {
    return (static_cast<std::size_t>(s) * n_actions + a) * n_states + s2;
  }
  double& p(int s, int a, int s2) { return P[idx(s, a, s2)]; }
  double p(int s, int a, int s2) const { return P[idx(s, a, s2)]; }
  double& r(int s, int a, int s2) { return R[idx(s, a, s2)]; }
  double r(int s, int a, int s2) const { return R[idx(s, a, s2)]; }

  void validate() const {
    if (!(gamma > 0 && gamma < 1)) throw ConfigError("gamma must lie in (0,1)");
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) {
        double sum = 0;
        for (int s2 = 0; s2 < n_states; ++s2) {
          if (p(s, a, s2) < 0) throw ConfigError("negative transition probability");
          sum += p(s, a, s2);
        }
        if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("transition row does not sum to 1");
      }
  }
};

inline double potential(int s, const TabularMdp& m, double r_pen) {
  if (r_pen > 0) throw ConfigError("r_pen must be <= 0");
  return m.unacceptable[static_cast<std::size_t>(s)] ? r_pen / m.gamma : 0.0;
}

inline double shaping_term(int s, int /*a*/, int s2, const TabularMdp& m, double r_pen) {
  return m.gamma * potential(s2, m, r_pen) - potential(s, m, r_pen);
}

// What PHIL actually pays: the penalty on entering an unacceptable state
// only. Equal to F whenever s is acceptable.
inline double edge_penalty(int s, int s2, const TabularMdp& m, double r_pen) {
  return !m.unacceptable[static_cast<std::size_t>(s)] && m.unacceptable[static_cast<std::size_t>(s2)] ? r_pen : 0.0;
}

// R' = R + F. With violation > 0 that share of F is replaced by the bare
// edge penalty (interventions that did not "certainly occur").
inline TabularMdp shaped(const TabularMdp& m, double r_pen, double violation = 0.0) {
  TabularMdp out = m;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a)
      for (int s2 = 0; s2 < m.n_states; ++s2)
        out.r(s, a, s2) += (1.0 - violation) * shaping_term(s, a, s2, m, r_pen) +
                           violation * edge_penalty(s, s2, m, r_pen);
  return out;
}

struct Solution {
  Matrix Q;                 // n_states x n_actions
  std::vector<int> policy;  // greedy, lowest index on ties
  double residual = 0.0;
  int iterations = 0;
};

inline Matrix bellman(const TabularMdp& m, const Matrix& Q) {
  const Eigen::VectorXd v = Q.rowwise().maxCoeff();
  Matrix out(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      double q = 0;
      for (int s2 = 0; s2 < m.n_states; ++s2) q += m.p(s, a, s2) * (m.r(s, a, s2) + m.gamma * v(s2));
      out(s, a) = q;
    }
  return out;
}

inline std::vector<int> greedy(const Matrix& Q) {
  std::vector<int> pi(static_cast<std::size_t>(Q.rows()));
  for (long s = 0; s < Q.rows(); ++s) {
    int best = 0;
    for (int a = 1; a < Q.cols(); ++a)
      if (Q(s, a) > Q(s, best)) best = a;
    pi[static_cast<std::size_t>(s)] = best;
  }
  return pi;
}

// Value iteration to a sup-norm residual below tol, then exact evaluation of
// the greedy policy (repeated while it still improves) so Q is accurate far
// below tol.
inline Solution value_iteration(const TabularMdp& m, double tol) {
  if (!(tol > 0)) throw ConfigError("tol must be positive");
  m.validate();
  Solution sol;
  Matrix Q = Matrix::Zero(m.n_states, m.n_actions);
  for (;;) {
    Matrix Qn = bellman(m, Q);
    const double res = (Qn - Q).cwiseAbs().maxCoeff();
    Q = std::move(Qn);
    ++sol.iterations;
    if (res < tol) break;
    if (sol.iterations > 1000000) throw DivergenceError("value iteration did not converge");
  }
  const int S = m.n_states;
  for (int round = 0; round < 100; ++round) {
    const auto pi = greedy(Q);
    Matrix A = Matrix::Identity(S, S);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(S);
    for (int s = 0; s < S; ++s) {
      const int a = pi[static_cast<std::size_t>(s)];
      for (int s2 = 0; s2 < S; ++s2) {
        A(s, s2) -= m.gamma * m.p(s, a, s2);
        b(s) += m.p(s, a, s2) * m.r(s, a, s2);
      }
    }
    const Eigen::VectorXd v = A.partialPivLu().solve(b);
    Matrix Qe(S, m.n_actions);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < m.n_actions; ++a) {
        double q = 0;
        for (int s2 = 0; s2 < S; ++s2) q += m.p(s, a, s2) * (m.r(s, a, s2) + m.gamma * v(s2));
        Qe(s, a) = q;
      }
    const bool stable = greedy(Qe) == pi;
    Q = std::move(Qe);
    if (stable) break;
  }
  sol.Q = Q;
  sol.policy = greedy(Q);
  sol.residual = (bellman(m, Q) - Q).cwiseAbs().maxCoeff();
  return sol;
}

// Actions within `tie` of the row maximum.
inline std::vector<std::vector<int>> argmax_sets(const Matrix& Q, double tie) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(Q.rows()));
  for (long s = 0; s < Q.rows(); ++s) {
    const double mx = Q.row(s).maxCoeff();
    for (int a = 0; a < Q.cols(); ++a)
      if (Q(s, a) >= mx - tie) out[static_cast<std::size_t>(s)].push_back(a);
  }
  return out;
}

struct InstanceReport {
  std::uint64_t seed = 0;
  int n_states = 0;
  int n_actions = 0;
  int n_unacceptable = 0;
  bool argmax_invariant = false;
  double max_dev = 0.0;       // max |Q'(s,a) - (Q(s,a) - Phi(s))|
  double max_dev_plus = 0.0;  // max |Q'(s,a) - (Q(s,a) + Phi(s))|, the other sign
};

struct InvarianceReport {
  std::vector<InstanceReport> instances;
  double tol = 0.0;
  int invariant_count() const {
    return static_cast<int>(std::count_if(instances.begin(), instances.end(),
                                          [](const InstanceReport& r) { return r.argmax_invariant; }));
  }
  double max_dev() const {
    double d = 0;
    for (const auto& r : instances) d = std::max(d, r.max_dev);
    return d;
  }
  bool all_pass() const {
    return invariant_count() == static_cast<int>(instances.size()) && max_dev() < tol;
  }

  std::string text() const {
    std::ostringstream o;
    o << "instance seed states actions unacceptable argmax_invariant max|Q'-(Q-Phi)| max|Q'-(Q+Phi)|\n";
    o.precision(3);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto& r = instances[i];
      o << i << ' ' << r.seed << ' ' << r.n_states << ' ' << r.n_actions << ' ' << r.n_unacceptable << ' '
        << (r.argmax_invariant ? "yes" : "NO") << ' ' << std::scientific << r.max_dev << ' ' << r.max_dev_plus
        << std::defaultfloat << '\n';
    }
    o << "invariant " << invariant_count() << "/" << instances.size() << ", max deviation " << std::scientific
      << max_dev() << std::defaultfloat << " (tol " << tol << "): " << (all_pass() ? "PASS" : "FAIL") << '\n';
    return o.str();
  }
};

inline InstanceReport check_instance(const TabularMdp& m, double r_pen, double tol, double violation = 0.0) {
  InstanceReport r;
  r.n_states = m.n_states;
  r.n_actions = m.n_actions;
  for (char u : m.unacceptable) r.n_unacceptable += u;
  const double vi_tol = tol * (1.0 - m.gamma) * 0.1;
  const auto base = value_iteration(m, vi_tol);
  const auto shp = value_iteration(shaped(m, r_pen, violation), vi_tol);
  // Ties are judged well inside tol so a shaped tie is not mistaken for a
  // strict preference.
  r.argmax_invariant = argmax_sets(base.Q, tol) == argmax_sets(shp.Q, tol);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      const double phi = potential(s, m, r_pen);
      r.max_dev = std::max(r.max_dev, std::abs(shp.Q(s, a) - (base.Q(s, a) - phi)));
      r.max_dev_plus = std::max(r.max_dev_plus, std::abs(shp.Q(s, a) - (base.Q(s, a) + phi)));
    }
  return r;
}

struct RandomMdpParams {
  int max_states = 8;
  int max_actions = 3;
  double gamma = 0.95;
  double unacceptable_rate = 0.25;
};

// Dirichlet(1,...,1) transition rows, rewards uniform in [-1,1].
inline TabularMdp random_mdp(std::uint64_t seed, const RandomMdpParams& p = {}) {
  std::mt19937_64 rng(seed);
  const int S = std::uniform_int_distribution<int>(2, p.max_states)(rng);
  const int A = std::uniform_int_distribution<int>(1, p.max_actions)(rng);
  TabularMdp m = TabularMdp::empty(S, A, p.gamma);
  std::exponential_distribution<double> ex(1.0);
  std::uniform_real_distribution<double> ur(-1.0, 1.0);
  std::bernoulli_distribution bad(p.unacceptable_rate);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double sum = 0;
      for (int s2 = 0; s2 < S; ++s2) sum += (m.p(s, a, s2) = ex(rng));
      double acc = 0;
      for (int s2 = 0; s2 + 1 < S; ++s2) acc += (m.p(s, a, s2) /= sum);
      m.p(s, a, S - 1) = 1.0 - acc;
      for (int s2 = 0; s2 < S; ++s2) m.r(s, a, s2) = ur(rng);
    }
  for (int s = 0; s < S; ++s) m.unacceptable[static_cast<std::size_t>(s)] = bad(rng);
  return m;
}

inline InvarianceReport check_invariance(double r_pen, double tol, int n_random, std::uint64_t seed,
                                         const RandomMdpParams& p = {}, double violation = 0.0) {
  InvarianceReport rep;
  rep.tol = tol;
  for (int i = 0; i < n_random; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    auto r = check_instance(random_mdp(s, p), r_pen, tol, violation);
    r.seed = s;
    rep.instances.push_back(r);
  }
  return rep;
}

// Sum of discounted shaping terms along a sampled trajectory under a uniform
// random policy, returned with the trajectory's end points.
struct Rollout {
  double discounted_f = 0.0;
  int s0 = 0;
  int sT = 0;
};

inline Rollout rollout_shaping(const TabularMdp& m, double r_pen, int s0, int T, std::mt19937_64& rng) {
  Rollout out;
  out.s0 = s0;
  int s = s0;
  double disc = 1.0;
  std::uniform_int_distribution<int> act(0, m.n_actions - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < T; ++t) {
    const int a = act(rng);
    double x = u(rng);
    int s2 = m.n_states - 1;
    for (int k = 0; k < m.n_states; ++k) {
      x -= m.p(s, a, k);
      if (x < 0) {
        s2 = k;
        break;
      }
    }
    out.discounted_f += disc * shaping_term(s, a, s2, m, r_pen);
    disc *= m.gamma;
    s = s2;
  }
  out.sT = s;
  return out;
}

}  // namespace phil::shaping
