#pragma once

#include <deque>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "amcen/autograd.hpp"
#include "amcen/config.hpp"

namespace amcen {

/// Multi-head attention of `query` rows over `values` rows, one history slot per
/// element of `keys`/`values`. For each row and head h the weights are
/// softmax_j(q_h . k_{j,h} / scale_den) and the output is sum_j w_j v_{j,h}.
/// Heads are contiguous column blocks of width d / heads.
[[nodiscard]] Var multi_head_attention(const Var& query, std::span<const Var> keys,
                                       std::span<const Var> values, int heads, double scale_den);

/// Per-head attention weights for row `row`, shape heads x history.
[[nodiscard]] Matrix attention_weights(const Matrix& query, std::span<const Matrix> keys, int heads,
                                       double scale_den, Eigen::Index row);

/// beta * z_prev + (1 - beta) * pooled
[[nodiscard]] Var blend(const Var& z_prev, const Var& pooled, double beta);
[[nodiscard]] Eigen::RowVectorXd blend(const Eigen::RowVectorXd& z_prev,
                                       const Eigen::RowVectorXd& pooled, double beta);

/// x_s (+) x_r (+) t
[[nodiscard]] Eigen::RowVectorXd local_query_pattern(const Eigen::RowVectorXd& x_subject,
                                                     const Eigen::RowVectorXd& x_relation,
                                                     const Eigen::RowVectorXd& time_embedding);

/// tanh(F W_F + b_F) for sparse frequency rows F (n x |E|); w_f is |E| x b.
[[nodiscard]] Var global_pattern(const SparseMatrix& freq, const Var& w_f, const Var& b_f);
[[nodiscard]] Eigen::RowVectorXd global_pattern(std::span<const int> freq, const Matrix& w_f,
                                                const Eigen::RowVectorXd& b_f);

/// Builds a sparse n x |E| matrix from per-row (object, count) lists.
[[nodiscard]] SparseMatrix frequency_rows(std::span<const std::vector<std::pair<int, int>>> rows,
                                          int entity_count);

/// Most-recent-first window of past time-dependent representations.
template <typename T>
class RollingBuffer {
public:
    explicit RollingBuffer(int capacity = 1) : capacity_(capacity) {}

    void push(T value) {
        items_.push_front(std::move(value));
        while (static_cast<int>(items_.size()) > capacity_) {
            items_.pop_back();
        }
    }
    void clear() { items_.clear(); }
    [[nodiscard]] int size() const { return static_cast<int>(items_.size()); }
    [[nodiscard]] int capacity() const { return capacity_; }
    [[nodiscard]] const T& operator[](int i) const { return items_[static_cast<std::size_t>(i)]; }
    [[nodiscard]] bool empty() const { return items_.empty(); }

private:
    int capacity_;
    std::deque<T> items_;
};

/// Detached per-entity and per-relation windows of x_{., t-j}.
struct TemporalState {
    RollingBuffer<Matrix> entities;
    RollingBuffer<Matrix> relations;

    explicit TemporalState(int window = 1) : entities(window), relations(window) {}
    void clear() {
        entities.clear();
        relations.clear();
    }
};

/// Attentive pooling over a sliding window followed by the beta blend. One
/// parameter set per stream ("temporal.entity." and "temporal.relation."):
/// w_q, w_k, w_v (d x d, m heads of d/m columns), ffn_w1/ffn_b1/ffn_w2/ffn_b2.
/// Also owns the timestamp table and the frequency encoder (global.w_f, global.b_f).
class TemporalEncoder {
public:
    TemporalEncoder(const TrainConfig& config, int entity_count, int time_count);

    void init_params(ParameterStore& store, std::mt19937_64& rng) const;

    /// x_(t-1)^- for every row of z_prev. `history` holds x_{t-2} .. x_{t-tau}
    /// (most recent first); an empty history returns z_prev.
    [[nodiscard]] Var attentive_pool(Tape& tape, ParameterStore& store, const std::string& stream,
                                     const Var& z_prev, std::span<const Var> history) const;

    /// x_t from z_{t-1} and a window whose front is x_{t-1}.
    [[nodiscard]] Var step(Tape& tape, ParameterStore& store, const std::string& stream,
                           const Var& z_prev, std::span<const Var> window) const;

    /// Timestamp embeddings for `times`, clamped to the last trained index.
    /// Indices past time_limit() reuse the row at time_limit().
    [[nodiscard]] Var time_embeddings(Tape& tape, ParameterStore& store,
                                      std::span<const int> times) const;

    [[nodiscard]] Var global_features(Tape& tape, ParameterStore& store,
                                      const SparseMatrix& freq) const;

    [[nodiscard]] int window() const { return window_; }
    [[nodiscard]] double beta() const { return beta_; }
    [[nodiscard]] int heads() const { return heads_; }
    [[nodiscard]] int time_limit() const { return time_limit_; }
    void set_time_limit(int last_trained_time);

private:
    int dim_;
    int heads_;
    int window_;
    double beta_;
    int entity_count_;
    int time_count_;
    int time_limit_;
};

}  // namespace amcen
