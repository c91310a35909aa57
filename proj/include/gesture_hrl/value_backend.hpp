#pragma once

// Q-value approximators (exact table or feed-forward network), the
// cumulant/continuation TD target, SGD updates with a target copy, uniform
// replay and epsilon-greedy selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlp.hpp"
#include "rng.hpp"

namespace ghrl {

// Named blocks of a feature vector. One-hot blocks hold exactly one 1.
class FeatureLayout {
public:
  struct Block {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    bool one_hot = true;
  };

  FeatureLayout& add(std::string name, std::size_t size, bool one_hot = true) {
    blocks_.push_back(Block{std::move(name), total_, size, one_hot});
    total_ += size;
    return *this;
  }

  std::size_t size() const { return total_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& block(std::size_t i) const { return blocks_.at(i); }

  friend bool operator==(const FeatureLayout& a, const FeatureLayout& b) {
    if (a.blocks_.size() != b.blocks_.size()) return false;
    for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
      const auto &x = a.blocks_[i], &y = b.blocks_[i];
      if (x.name != y.name || x.size != y.size || x.one_hot != y.one_hot) return false;
    }
    return true;
  }

private:
  std::vector<Block> blocks_;
  std::size_t total_ = 0;
};

using LayoutPtr = std::shared_ptr<const FeatureLayout>;

struct FeatureVector {
  std::vector<float> values;
  LayoutPtr layout;

  FeatureVector() = default;
  explicit FeatureVector(LayoutPtr l) : values(l->size(), 0.0f), layout(std::move(l)) {}

  std::size_t size() const { return values.size(); }

  FeatureVector& set_one_hot(std::size_t block, std::size_t hot) {
    const auto& b = layout->block(block);
    if (hot >= b.size) throw std::out_of_range("FeatureVector: one-hot index outside block " + b.name);
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size, 0.0f);
    values[b.offset + hot] = 1.0f;
    return *this;
  }

  FeatureVector& set_value(std::size_t block, std::size_t i, float v) {
    const auto& b = layout->block(block);
    if (i >= b.size) throw std::out_of_range("FeatureVector: index outside block " + b.name);
    values[b.offset + i] = v;
    return *this;
  }

  // Hot index of a one-hot block; throws if the block is not exactly one-hot.
  std::size_t hot_index(std::size_t block) const {
    const auto& b = layout->block(block);
    std::size_t hot = b.size;
    for (std::size_t i = 0; i < b.size; ++i) {
      const float v = values[b.offset + i];
      if (v == 1.0f && hot == b.size) hot = i;
      else if (v != 0.0f) throw std::invalid_argument("FeatureVector: block " + b.name + " is not one-hot");
    }
    if (hot == b.size) throw std::invalid_argument("FeatureVector: block " + b.name + " has no hot entry");
    return hot;
  }

  Eigen::VectorXd to_eigen() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
    return v;
  }
};

// Per-action validity; an empty mask allows every action.
using ActionMask = std::vector<bool>;
using MaskPtr = std::shared_ptr<const ActionMask>;

struct Transition {
  FeatureVector features;
  // One output index per trained head (usually one).
  std::vector<std::uint32_t> actions;
  double cumulant = 0.0;
  double continuation = 0.0;
  FeatureVector next_features;
  MaskPtr next_mask;  // null allows all actions
};

enum class Backend : std::uint8_t { Table, Network };

class size_mismatch_error : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Q-value function over a fixed output vector that may be split into
// equal-width heads. TABLE keys rows by the mixed-radix index of the
// one-hot blocks in the input layout.
class QApproximator {
public:
  QApproximator() = default;

  static QApproximator table(LayoutPtr layout, std::size_t output_size, std::size_t head_width = 0) {
    QApproximator q;
    q.backend_ = Backend::Table;
    std::size_t rows = 1;
    for (const auto& b : layout->blocks()) {
      if (!b.one_hot) throw std::invalid_argument("table backend needs one-hot blocks only; got " + b.name);
      rows *= b.size;
    }
    q.input_size_ = layout->size();
    q.output_size_ = output_size;
    q.head_width_ = head_width == 0 ? output_size : head_width;
    q.layout_ = std::move(layout);
    q.table_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(output_size));
    q.check_heads();
    return q;
  }

  static QApproximator network(std::size_t input_size, const std::vector<std::size_t>& hidden,
                               std::size_t output_size, Rng& rng, std::size_t head_width = 0) {
    QApproximator q;
    q.backend_ = Backend::Network;
    std::vector<std::size_t> sizes{input_size};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(output_size);
    q.net_ = Mlp(sizes, rng);
    q.input_size_ = input_size;
    q.output_size_ = output_size;
    q.head_width_ = head_width == 0 ? output_size : head_width;
    q.check_heads();
    return q;
  }

  static QApproximator from_mlp(Mlp net, std::size_t head_width = 0) {
    QApproximator q;
    q.backend_ = Backend::Network;
    q.input_size_ = net.input_size();
    q.output_size_ = net.output_size();
    q.head_width_ = head_width == 0 ? q.output_size_ : head_width;
    q.net_ = std::move(net);
    q.check_heads();
    return q;
  }

  Backend backend() const { return backend_; }
  std::size_t input_size() const { return input_size_; }
  std::size_t output_size() const { return output_size_; }
  std::size_t head_width() const { return head_width_; }
  std::size_t heads() const { return output_size_ / head_width_; }
  std::uint64_t update_count() const { return updates_; }
  void set_update_count(std::uint64_t n) { updates_ = n; }

  const Mlp& mlp() const { return net_; }
  Mlp& mlp() { return net_; }
  const Eigen::MatrixXd& table_values() const { return table_; }
  Eigen::MatrixXd& table_values() { return table_; }
  const LayoutPtr& layout() const { return layout_; }

  std::size_t table_row(const FeatureVector& f) const {
    std::size_t row = 0;
    for (std::size_t b = 0; b < layout_->blocks().size(); ++b)
      row = row * layout_->block(b).size + f.hot_index(b);
    return row;
  }

  Eigen::VectorXd q_values(const FeatureVector& f) const {
    check_input(f);
    if (backend_ == Backend::Table) return table_.row(static_cast<Eigen::Index>(table_row(f))).transpose();
    return net_.forward(f.to_eigen()).col(0);
  }

  // Column j holds q_values of features[j].
  Eigen::MatrixXd q_values_batch(std::span<const FeatureVector* const> features) const {
    if (backend_ == Backend::Table) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(output_size_), static_cast<Eigen::Index>(features.size()));
      for (std::size_t j = 0; j < features.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = q_values(*features[j]);
      return out;
    }
    return net_.forward(stack(features));
  }

  Eigen::MatrixXd stack(std::span<const FeatureVector* const> features) const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(input_size_), static_cast<Eigen::Index>(features.size()));
    for (std::size_t j = 0; j < features.size(); ++j) {
      check_input(*features[j]);
      const auto& v = features[j]->values;
      for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i];
    }
    return x;
  }

  void check_input(const FeatureVector& f) const {
    if (f.size() != input_size_)
      throw size_mismatch_error("q_values: feature length " + std::to_string(f.size()) + " != input size " +
                                std::to_string(input_size_));
  }

  void copy_parameters_from(const QApproximator& other) {
    table_ = other.table_;
    net_ = other.net_;
  }

  friend bool same_parameters(const QApproximator& a, const QApproximator& b) {
    return a.backend_ == b.backend_ && a.output_size_ == b.output_size_ && a.table_ == b.table_ && a.net_ == b.net_;
  }

private:
  void check_heads() const {
    if (head_width_ == 0 || output_size_ % head_width_ != 0)
      throw std::invalid_argument("QApproximator: output size must be a multiple of head width");
  }

  Backend backend_ = Backend::Network;
  std::size_t input_size_ = 0;
  std::size_t output_size_ = 0;
  std::size_t head_width_ = 0;
  std::uint64_t updates_ = 0;
  LayoutPtr layout_;
  Eigen::MatrixXd table_;
  Mlp net_;
};

struct TdConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t target_sync_period = 200;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::uint64_t epsilon_decay_steps = 10000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TdConfig: learning_rate must be > 0");
    if (batch_size == 0) throw std::invalid_argument("TdConfig: batch_size must be >= 1");
    if (target_sync_period == 0) throw std::invalid_argument("TdConfig: target_sync_period must be >= 1");
    for (double e : {epsilon_start, epsilon_end})
      if (e < 0.0 || e > 1.0) throw std::invalid_argument("TdConfig: epsilon outside [0,1]");
  }

  // Linear decay from start to end over epsilon_decay_steps, then constant.
  double epsilon_at(std::uint64_t step) const {
    if (epsilon_decay_steps == 0 || step >= epsilon_decay_steps) return epsilon_end;
    const double frac = static_cast<double>(step) / static_cast<double>(epsilon_decay_steps);
    return epsilon_start + (epsilon_end - epsilon_start) * frac;
  }
};

namespace detail {

inline double masked_head_max(const Eigen::Ref<const Eigen::VectorXd>& q, const ActionMask* mask, std::size_t head,
                              std::size_t width) {
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t a = head * width; a < (head + 1) * width; ++a) {
    if (mask && !mask->empty() && !(*mask)[a]) continue;
    best = any ? std::max(best, q(static_cast<Eigen::Index>(a))) : q(static_cast<Eigen::Index>(a));
    any = true;
  }
  if (!any) throw std::invalid_argument("td_target: empty action mask with continuation > 0");
  return best;
}

// Bootstrap value: mean over the trained heads of each head's masked max.
inline double bootstrap_value(const Transition& t, const Eigen::Ref<const Eigen::VectorXd>& next_q,
                              std::size_t head_width) {
  double sum = 0.0;
  for (std::uint32_t a : t.actions) sum += masked_head_max(next_q, t.next_mask.get(), a / head_width, head_width);
  return sum / static_cast<double>(t.actions.size());
}

}  // namespace detail

inline double td_target(const Transition& t, const QApproximator& target) {
  if (t.continuation == 0.0) return t.cumulant;
  const Eigen::VectorXd next_q = target.q_values(t.next_features);
  return t.cumulant + t.continuation * detail::bootstrap_value(t, next_q, target.head_width());
}

inline std::vector<double> td_targets(std::span<const Transition* const> batch, const QApproximator& target) {
  std::vector<double> y(batch.size());
  std::vector<const FeatureVector*> nexts;
  std::vector<std::size_t> which;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->actions.empty()) throw std::invalid_argument("td_update: transition trains no action");
    if (batch[i]->continuation == 0.0) {
      y[i] = batch[i]->cumulant;
    } else {
      nexts.push_back(&batch[i]->next_features);
      which.push_back(i);
    }
  }
  if (!nexts.empty()) {
    const Eigen::MatrixXd q = target.q_values_batch(nexts);
    for (std::size_t j = 0; j < which.size(); ++j) {
      const Transition& t = *batch[which[j]];
      y[which[j]] = t.cumulant + t.continuation * detail::bootstrap_value(t, q.col(static_cast<Eigen::Index>(j)),
                                                                           target.head_width());
    }
  }
  return y;
}

// One step toward the TD targets of the batch. Returns the mean squared TD
// error over all trained (transition, head) terms, measured before the step.
// Every target_sync_period updates the target receives the online parameters.
inline double td_update(QApproximator& online, QApproximator& target, std::span<const Transition* const> batch,
                        const TdConfig& config) {
  if (batch.empty()) throw std::invalid_argument("td_update: empty batch");
  const std::vector<double> y = td_targets(batch, target);
  std::size_t terms = 0;
  for (const Transition* t : batch) terms += t->actions.size();
  double loss = 0.0;

  if (online.backend() == Backend::Table) {
    auto& tab = online.table_values();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(online.table_row(batch[i]->features));
      for (std::uint32_t a : batch[i]->actions) {
        double& q = tab(row, static_cast<Eigen::Index>(a));
        const double err = y[i] - q;
        loss += err * err;
        q += config.learning_rate * err;
      }
    }
  } else {
    std::vector<const FeatureVector*> feats;
    feats.reserve(batch.size());
    for (const Transition* t : batch) feats.push_back(&t->features);
    const Eigen::MatrixXd x = online.stack(feats);
    Mlp::Gradients g;
    online.mlp().forward_backward(
        x,
        [&](const Eigen::MatrixXd& out) {
          Eigen::MatrixXd d = Eigen::MatrixXd::Zero(out.rows(), out.cols());
          for (std::size_t i = 0; i < batch.size(); ++i) {
            for (std::uint32_t a : batch[i]->actions) {
              const double err = out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) - y[i];
              loss += err * err;
              d(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) += 2.0 * err / static_cast<double>(terms);
            }
          }
          return d;
        },
        g);
    online.mlp().apply_sgd(g, config.learning_rate);
  }

  online.set_update_count(online.update_count() + 1);
  if (online.update_count() % config.target_sync_period == 0) target.copy_parameters_from(online);
  return loss / static_cast<double>(terms);
}

inline double td_update(QApproximator& online, QApproximator& target, const std::vector<Transition>& batch,
                        const TdConfig& config) {
  std::vector<const Transition*> ptrs;
  for (const auto& t : batch) ptrs.push_back(&t);
  return td_update(online, target, ptrs, config);
}

class empty_mask_error : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Masked argmax (lowest index wins ties) with probability 1 - epsilon,
// otherwise a uniform valid action. With epsilon <= 0 no randomness is drawn.
inline std::size_t epsilon_greedy(const Eigen::Ref<const Eigen::VectorXd>& q, const ActionMask& mask, double epsilon,
                                  Rng& rng) {
  const auto n = static_cast<std::size_t>(q.size());
  if (!mask.empty() && mask.size() != n) throw size_mismatch_error("epsilon_greedy: mask size");
  auto valid = [&](std::size_t a) { return mask.empty() || mask[a]; };
  std::size_t count = 0;
  for (std::size_t a = 0; a < n; ++a) count += valid(a) ? 1 : 0;
  if (count == 0) throw empty_mask_error("epsilon_greedy: no valid action");
  if (epsilon > 0.0 && rng.uniform01() < epsilon) {
    std::size_t k = rng.uniform_index(count);
    for (std::size_t a = 0; a < n; ++a) {
      if (!valid(a)) continue;
      if (k-- == 0) return a;
    }
  }
  std::size_t best = n;
  for (std::size_t a = 0; a < n; ++a) {
    if (!valid(a)) continue;
    if (best == n || q(static_cast<Eigen::Index>(a)) > q(static_cast<Eigen::Index>(best))) best = a;
  }
  return best;
}

// Fixed-capacity FIFO store with uniform sampling (with replacement).
template <typename T>
class ReplayBuffer {
public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
    items_.reserve(std::min<std::size_t>(capacity_, 4096));
  }

  void add(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[next_] = std::move(item);
    }
    next_ = (next_ + 1) % capacity_;
    ++inserted_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t inserted() const { return inserted_; }
  bool empty() const { return items_.empty(); }

  // Storage slot i; slot order is not insertion order once the buffer wraps.
  const T& at(std::size_t i) const { return items_.at(i); }

  std::vector<const T*> sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("ReplayBuffer: sample from empty buffer");
    std::vector<const T*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[rng.uniform_index(items_.size())]);
    return out;
  }

  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(rng.uniform_index(items_.size()));
    return out;
  }

private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::uint64_t inserted_ = 0;
  std::vector<T> items_;
};

}  // namespace ghrl

namespace ghrl {

inline double finite_diff_gradcheck(const QApproximator& q, const FeatureVector& features, std::size_t action_index,
                                    double h = 1e-5) {
  if (q.backend() != Backend::Network) throw std::invalid_argument("gradcheck: network backend required");
  q.check_input(features);
  return finite_diff_gradcheck(q.mlp(), features.to_eigen(), action_index, h);
}

}  // namespace ghrl
