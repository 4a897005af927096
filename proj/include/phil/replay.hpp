#pragma once

// Prioritized replay: a sum-tree store whose leaves hold p_i^alpha, sampled by
// stratified prefix-sum descent with importance-sampling correction.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phil/errors.hpp"

namespace phil {

using Rng = std::mt19937_64;
using Vec = Eigen::VectorXd;

/// One interaction tuple. `demo` is the demonstration mask: full authority
/// means the mask is either all-ones (true) or all-zeros (false).
struct Transition {
  Vec s;
  Vec a;
  double r = 0.0;
  Vec s_next;
  bool demo = false;
  bool done = false;

  void validate() const {
    if (s.size() == 0 || s.size() != s_next.size()) throw ShapeError("transition: state dimensions differ");
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      if (!(std::abs(a(i)) <= 1.0)) throw ContractViolation("transition: action component outside [-1, 1]");
    }
  }
};

struct PriorityParams {
  double alpha = 0.6;
  double beta = 1.0;
  double epsilon = 1e-3;
  double qa_weight = 1.0;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("priority alpha must lie in [0, 1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("priority beta must lie in [0, 1]");
    if (!(epsilon > 0.0)) throw ConfigError("priority epsilon must be positive");
    if (!(qa_weight >= 0.0)) throw ConfigError("qa_weight must be non-negative");
  }
};

/// Complete binary tree over a power-of-two number of leaves. Internal nodes
/// hold the sum (and separately the max) of their children.
class SumTree {
 public:
  explicit SumTree(std::size_t min_leaves) {
    if (min_leaves == 0) throw ConfigError("sum tree needs at least one leaf");
    leaves_ = std::bit_ceil(min_leaves);
    sum_.assign(2 * leaves_, 0.0);
    max_.assign(2 * leaves_, 0.0);
  }

  [[nodiscard]] std::size_t leaf_count() const { return leaves_; }
  [[nodiscard]] double total() const { return sum_[1]; }
  [[nodiscard]] double max_leaf() const { return max_[1]; }
  [[nodiscard]] double leaf(std::size_t i) const { return sum_[leaves_ + check(i)]; }
  [[nodiscard]] const std::vector<double>& nodes() const { return sum_; }

  void set(std::size_t i, double value) {
    if (!(value >= 0.0) || !std::isfinite(value)) throw ContractViolation("sum tree values must be finite and >= 0");
    std::size_t node = leaves_ + check(i);
    sum_[node] = value;
    max_[node] = value;
    for (node /= 2; node >= 1; node /= 2) {
      sum_[node] = sum_[2 * node] + sum_[2 * node + 1];
      max_[node] = std::max(max_[2 * node], max_[2 * node + 1]);
    }
  }

  /// First leaf whose inclusive prefix sum exceeds `mass`; leaf i owns the
  /// half-open interval [prefix_{i-1}, prefix_i). mass == total maps to the
  /// last leaf with positive value.
  [[nodiscard]] std::size_t locate(double mass) const {
    if (!(mass >= 0.0) || mass > total()) {
      throw RangeError("locate: mass " + std::to_string(mass) + " outside [0, " + std::to_string(total()) + "]");
    }
    if (total() <= 0.0) throw RangeError("locate: tree is empty");
    std::size_t node = 1;
    while (node < leaves_) {
      const std::size_t left = 2 * node;
      if (mass < sum_[left] || sum_[left + 1] <= 0.0) {
        node = left;
      } else {
        mass -= sum_[left];
        node = left + 1;
      }
    }
    return node - leaves_;
  }

 private:
  std::size_t check(std::size_t i) const {
    if (i >= leaves_) throw RangeError("sum tree leaf index out of range");
    return i;
  }

  std::size_t leaves_ = 0;
  std::vector<double> sum_;
  std::vector<double> max_;
};

struct SampleBatch {
  std::vector<Transition> transitions;
  std::vector<std::size_t> indices;
  std::vector<double> is_weights;
  // Which store each sample came from (0 = main/RL, 1 = demonstration store).
  std::vector<int> sources;
  std::size_t demo_count = 0;
  std::size_t rl_count = 0;

  [[nodiscard]] std::size_t size() const { return transitions.size(); }
};

/// Ring buffer of transitions backed by a SumTree. Raw priorities p_i are kept
/// alongside; the tree stores p_i^alpha.
class PrioritizedBuffer {
 public:
  PrioritizedBuffer(std::size_t capacity, double alpha) : capacity_(capacity), alpha_(alpha), tree_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("priority alpha must lie in [0, 1]");
    raw_.assign(tree_.leaf_count(), 0.0);
    raw_max_ = SumTree(capacity);
    data_.resize(capacity);
  }

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t cursor() const { return cursor_; }
  [[nodiscard]] double alpha() const { return alpha_; }
  [[nodiscard]] const SumTree& tree() const { return tree_; }
  [[nodiscard]] const Transition& at(std::size_t i) const { return data_.at(live(i)); }
  [[nodiscard]] double priority(std::size_t i) const { return raw_.at(live(i)); }
  [[nodiscard]] std::size_t demo_size() const { return demo_live_; }

  /// Largest raw priority among live items (1.0 when empty).
  [[nodiscard]] double max_priority() const { return size_ == 0 ? 1.0 : raw_max_.max_leaf(); }

  /// Sampling probability p_i^alpha / sum_k p_k^alpha.
  [[nodiscard]] double probability(std::size_t i) const { return tree_.leaf(live(i)) / tree_.total(); }

  /// Stores at the write cursor with the current max priority, evicting the
  /// oldest item once full. Returns the slot written.
  std::size_t store(Transition t) {
    t.validate();
    const std::size_t slot = cursor_;
    if (size_ == capacity_) {
      // The evicted item no longer counts towards the live maximum.
      raw_max_.set(slot, 0.0);
      if (data_[slot].demo) --demo_live_;
    }
    const bool others_live = size_ > (size_ == capacity_ ? 1U : 0U);
    const double p = others_live ? raw_max_.max_leaf() : 1.0;
    if (t.demo) ++demo_live_;
    data_[slot] = std::move(t);
    set_priority(slot, p);
    cursor_ = (cursor_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
    return slot;
  }

  void update_priorities(std::span<const std::size_t> indices, std::span<const double> priorities) {
    if (indices.size() != priorities.size()) throw ShapeError("update_priorities: size mismatch");
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (!(priorities[k] >= 0.0) || !std::isfinite(priorities[k])) {
        throw ContractViolation("update_priorities: priorities must be finite and non-negative");
      }
      set_priority(live(indices[k]), priorities[k]);
    }
  }

  /// n stratified draws: stratum k covers [k, k+1) * total/n of the prefix
  /// mass. IS weights are p(i)^-beta divided by the batch maximum.
  SampleBatch sample(std::size_t n, double beta, Rng& rng) const {
    if (n == 0) throw ContractViolation("sample: batch size must be positive");
    if (n > size_) {
      throw InsufficientData("sample: requested " + std::to_string(n) + " items from a buffer of " +
                             std::to_string(size_));
    }
    SampleBatch batch;
    draw_into(batch, n, beta, 1.0, 0, rng);
    normalize_weights(batch);
    return batch;
  }

  // Appends n stratified draws, scaling probabilities by `store_prob` (the
  // chance that this store was chosen at all) before forming IS weights.
  void draw_into(SampleBatch& batch, std::size_t n, double beta, double store_prob, int source, Rng& rng) const {
    if (n == 0) return;
    const double total = tree_.total();
    const double segment = total / static_cast<double>(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
      double mass = (static_cast<double>(k) + unit(rng)) * segment;
      mass = std::min(mass, total);
      const std::size_t idx = tree_.locate(mass);
      const double prob = store_prob * tree_.leaf(idx) / total;
      batch.transitions.push_back(data_[idx]);
      batch.indices.push_back(idx);
      batch.is_weights.push_back(std::pow(prob, -beta));
      batch.sources.push_back(source);
      if (data_[idx].demo) {
        ++batch.demo_count;
      } else {
        ++batch.rl_count;
      }
    }
  }

  static void normalize_weights(SampleBatch& batch) {
    if (batch.is_weights.empty()) return;
    const double mx = *std::max_element(batch.is_weights.begin(), batch.is_weights.end());
    for (double& w : batch.is_weights) w /= mx;
  }

  // -- snapshot ------------------------------------------------------------

  [[nodiscard]] nlohmann::json snapshot() const {
    nlohmann::json j;
    j["format"] = "phil-replay";
    j["version"] = 1;
    j["capacity"] = capacity_;
    j["alpha"] = alpha_;
    j["cursor"] = cursor_;
    j["size"] = size_;
    nlohmann::json recs = nlohmann::json::array();
    for (std::size_t i = 0; i < size_; ++i) {
      const Transition& t = data_[i];
      recs.push_back({{"leaf", i},
                      {"priority", raw_[i]},
                      {"s", to_vec(t.s)},
                      {"a", to_vec(t.a)},
                      {"r", t.r},
                      {"s_next", to_vec(t.s_next)},
                      {"demo", t.demo},
                      {"done", t.done}});
    }
    j["records"] = std::move(recs);
    return j;
  }

  static PrioritizedBuffer restore(const nlohmann::json& j) {
    try {
      if (j.at("format").get<std::string>() != "phil-replay") throw ConfigError("not a replay snapshot");
      PrioritizedBuffer buf(j.at("capacity").get<std::size_t>(), j.at("alpha").get<double>());
      const auto size = j.at("size").get<std::size_t>();
      const auto cursor = j.at("cursor").get<std::size_t>();
      const auto& recs = j.at("records");
      if (size > buf.capacity_ || cursor >= buf.capacity_ || recs.size() != size) {
        throw ConfigError("replay snapshot bookkeeping is inconsistent");
      }
      for (const auto& r : recs) {
        const auto leaf = r.at("leaf").get<std::size_t>();
        if (leaf >= size) throw ConfigError("replay snapshot leaf out of range");
        Transition t;
        t.s = from_vec(r.at("s"));
        t.a = from_vec(r.at("a"));
        t.r = r.at("r").get<double>();
        t.s_next = from_vec(r.at("s_next"));
        t.demo = r.at("demo").get<bool>();
        t.done = r.at("done").get<bool>();
        t.validate();
        if (t.demo) ++buf.demo_live_;
        buf.data_[leaf] = std::move(t);
        buf.set_priority(leaf, r.at("priority").get<double>());
      }
      buf.size_ = size;
      buf.cursor_ = cursor;
      return buf;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed replay snapshot: ") + e.what());
    }
  }

 private:
  static std::vector<double> to_vec(const Vec& v) { return {v.data(), v.data() + v.size()}; }
  static Vec from_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  std::size_t live(std::size_t i) const {
    if (i >= size_) throw RangeError("replay index " + std::to_string(i) + " is not a live item");
    return i;
  }

  void set_priority(std::size_t slot, double p) {
    raw_[slot] = p;
    raw_max_.set(slot, p);
    tree_.set(slot, std::pow(p, alpha_));
  }

  std::size_t capacity_;
  double alpha_;
  SumTree tree_;
  SumTree raw_max_{1};
  std::vector<double> raw_;
  std::vector<Transition> data_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
  std::size_t demo_live_ = 0;
};

/// Double-store sampling: each of the n draws picks the demonstration store
/// with probability |demo| / (|demo| + |rl|); draws within a store follow
/// that store's own priorities.
inline SampleBatch sample_rd2(const PrioritizedBuffer& rl, const PrioritizedBuffer& demo, std::size_t n, double beta,
                              Rng& rng) {
  const std::size_t total = rl.size() + demo.size();
  if (total == 0) throw InsufficientData("sample_rd2: both buffers are empty");
  if (n > total) throw InsufficientData("sample_rd2: requested more items than stored");
  if (n == 0) throw ContractViolation("sample_rd2: batch size must be positive");
  const double q_demo = static_cast<double>(demo.size()) / static_cast<double>(total);
  std::bernoulli_distribution pick_demo(q_demo);
  std::size_t n_demo = 0;
  for (std::size_t k = 0; k < n; ++k) n_demo += pick_demo(rng) ? 1 : 0;
  SampleBatch batch;
  rl.draw_into(batch, n - n_demo, beta, 1.0 - q_demo, 0, rng);
  demo.draw_into(batch, n_demo, beta, q_demo, 1, rng);
  PrioritizedBuffer::normalize_weights(batch);
  return batch;
}

}  // namespace phil
