#include "amcen/temporal_encoder.hpp"

#include <algorithm>
#include <cmath>

#include "amcen/errors.hpp"

namespace amcen {

namespace {

// weights(j, h) for one row
Matrix row_attention(const Matrix& query, std::span<const Matrix* const> keys, int heads,
                     double scale_den, Eigen::Index row) {
    const Eigen::Index width = query.cols() / heads;
    const auto slots = static_cast<Eigen::Index>(keys.size());
    Matrix w(slots, heads);
    for (int h = 0; h < heads; ++h) {
        for (Eigen::Index j = 0; j < slots; ++j) {
            w(j, h) = query.row(row).segment(h * width, width).dot(
                          keys[static_cast<std::size_t>(j)]->row(row).segment(h * width, width)) /
                      scale_den;
        }
        const double m = w.col(h).maxCoeff();
        w.col(h) = (w.col(h).array() - m).exp().matrix();
        w.col(h) /= w.col(h).sum();
    }
    return w;
}

}  // namespace

Var multi_head_attention(const Var& query, std::span<const Var> keys, std::span<const Var> values,
                         int heads, double scale_den) {
    if (keys.empty() || keys.size() != values.size()) {
        throw ValidationError("attention: need one value per key and a nonempty history");
    }
    if (heads <= 0 || query.cols() % heads != 0) {
        throw ValidationError("attention: dimension not divisible by head count");
    }
    for (std::size_t j = 0; j < keys.size(); ++j) {
        if (keys[j].rows() != query.rows() || keys[j].cols() != query.cols() ||
            values[j].rows() != query.rows() || values[j].cols() != query.cols()) {
            throw ValidationError("attention: dimension mismatch");
        }
    }
    const Eigen::Index n = query.rows();
    const Eigen::Index width = query.cols() / heads;
    std::vector<const Matrix*> key_vals;
    std::vector<int> key_ids;
    std::vector<int> value_ids;
    bool needs_grad = query.requires_grad();
    for (std::size_t j = 0; j < keys.size(); ++j) {
        key_vals.push_back(&keys[j].value());
        key_ids.push_back(keys[j].id());
        value_ids.push_back(values[j].id());
        needs_grad = needs_grad || keys[j].requires_grad() || values[j].requires_grad();
    }

    // weights[i] is slots x heads
    std::vector<Matrix> weights(static_cast<std::size_t>(n));
    Matrix out = Matrix::Zero(n, query.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        weights[static_cast<std::size_t>(i)] = row_attention(query.value(), key_vals, heads, scale_den, i);
        const Matrix& w = weights[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const Matrix& v = values[j].value();
            for (int h = 0; h < heads; ++h) {
                out.row(i).segment(h * width, width) +=
                    w(static_cast<Eigen::Index>(j), h) * v.row(i).segment(h * width, width);
            }
        }
    }

    const int query_id = query.id();
    return query.tape().record(
        std::move(out), needs_grad,
        [query_id, key_ids, value_ids, weights = std::move(weights), heads, width, scale_den,
         n](Tape& t, const Matrix& g) {
            const Matrix& q = t.value(query_id);
            const std::size_t slots = key_ids.size();
            Matrix dq = Matrix::Zero(q.rows(), q.cols());
            std::vector<Matrix> dk(slots, Matrix::Zero(q.rows(), q.cols()));
            std::vector<Matrix> dv(slots, Matrix::Zero(q.rows(), q.cols()));
            Eigen::VectorXd da(static_cast<Eigen::Index>(slots));
            for (Eigen::Index i = 0; i < n; ++i) {
                const Matrix& w = weights[static_cast<std::size_t>(i)];
                for (int h = 0; h < heads; ++h) {
                    const auto g_h = g.row(i).segment(h * width, width);
                    double mean = 0.0;
                    for (std::size_t j = 0; j < slots; ++j) {
                        const auto jj = static_cast<Eigen::Index>(j);
                        da(jj) = g_h.dot(t.value(value_ids[j]).row(i).segment(h * width, width));
                        mean += w(jj, h) * da(jj);
                        dv[j].row(i).segment(h * width, width) += w(jj, h) * g_h;
                    }
                    for (std::size_t j = 0; j < slots; ++j) {
                        const auto jj = static_cast<Eigen::Index>(j);
                        const double ds = w(jj, h) * (da(jj) - mean) / scale_den;
                        dq.row(i).segment(h * width, width) +=
                            ds * t.value(key_ids[j]).row(i).segment(h * width, width);
                        dk[j].row(i).segment(h * width, width) += ds * q.row(i).segment(h * width, width);
                    }
                }
            }
            t.accumulate(query_id, dq);
            for (std::size_t j = 0; j < slots; ++j) {
                t.accumulate(key_ids[j], dk[j]);
                t.accumulate(value_ids[j], dv[j]);
            }
        });
}

Matrix attention_weights(const Matrix& query, std::span<const Matrix> keys, int heads,
                         double scale_den, Eigen::Index row) {
    std::vector<const Matrix*> ptrs;
    for (const auto& k : keys) {
        ptrs.push_back(&k);
    }
    return row_attention(query, ptrs, heads, scale_den, row).transpose();
}

Var blend(const Var& z_prev, const Var& pooled, double beta) {
    if (beta < 0.0 || beta > 1.0) {
        throw ValidationError("blend: beta must lie in [0,1]");
    }
    return ad::add(ad::scale(z_prev, beta), ad::scale(pooled, 1.0 - beta));
}

Eigen::RowVectorXd blend(const Eigen::RowVectorXd& z_prev, const Eigen::RowVectorXd& pooled,
                         double beta) {
    if (z_prev.size() != pooled.size()) {
        throw ValidationError("blend: dimension mismatch");
    }
    Tape tape(false);
    return blend(tape.constant(z_prev), tape.constant(pooled), beta).value().row(0);
}

Eigen::RowVectorXd local_query_pattern(const Eigen::RowVectorXd& x_subject,
                                       const Eigen::RowVectorXd& x_relation,
                                       const Eigen::RowVectorXd& time_embedding) {
    Eigen::RowVectorXd out(x_subject.size() + x_relation.size() + time_embedding.size());
    out << x_subject, x_relation, time_embedding;
    return out;
}

Var global_pattern(const SparseMatrix& freq, const Var& w_f, const Var& b_f) {
    return ad::tanh(ad::add_row(ad::sparse_matmul(freq, w_f), b_f));
}

Eigen::RowVectorXd global_pattern(std::span<const int> freq, const Matrix& w_f,
                                  const Eigen::RowVectorXd& b_f) {
    if (static_cast<Eigen::Index>(freq.size()) != w_f.rows() || b_f.size() != w_f.cols()) {
        throw ValidationError("global_pattern: dimension mismatch");
    }
    std::vector<std::vector<std::pair<int, int>>> rows(1);
    for (std::size_t o = 0; o < freq.size(); ++o) {
        if (freq[o] < 0) {
            throw ValidationError("global_pattern: negative frequency");
        }
        if (freq[o] > 0) {
            rows[0].emplace_back(static_cast<int>(o), freq[o]);
        }
    }
    Tape tape(false);
    const SparseMatrix f = frequency_rows(rows, static_cast<int>(freq.size()));
    return global_pattern(f, tape.constant(w_f), tape.constant(b_f)).value().row(0);
}

SparseMatrix frequency_rows(std::span<const std::vector<std::pair<int, int>>> rows, int entity_count) {
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (const auto& [o, c] : rows[i]) {
            triplets.emplace_back(static_cast<int>(i), o, static_cast<double>(c));
        }
    }
    SparseMatrix m(static_cast<Eigen::Index>(rows.size()), entity_count);
    m.setFromTriplets(triplets.begin(), triplets.end());
    return m;
}

TemporalEncoder::TemporalEncoder(const TrainConfig& config, int entity_count, int time_count)
    : dim_(config.dim),
      heads_(config.heads),
      window_(config.window),
      beta_(config.beta),
      entity_count_(entity_count),
      time_count_(time_count),
      time_limit_(std::max(time_count, 1) - 1) {
    if (dim_ % heads_ != 0) {
        throw ValidationError("temporal encoder: dim must be divisible by heads");
    }
}

void TemporalEncoder::init_params(ParameterStore& store, std::mt19937_64& rng) const {
    for (const char* stream : {"entity", "relation"}) {
        const std::string p = std::string("temporal.") + stream + ".";
        store.add_xavier(p + "w_q", dim_, dim_, rng);
        store.add_xavier(p + "w_k", dim_, dim_, rng);
        store.add_xavier(p + "w_v", dim_, dim_, rng);
        store.add_xavier(p + "ffn_w1", dim_, dim_, rng);
        store.add_zeros(p + "ffn_b1", 1, dim_);
        store.add_xavier(p + "ffn_w2", dim_, dim_, rng);
        store.add_zeros(p + "ffn_b2", 1, dim_);
    }
    store.add_xavier("time_embedding", std::max(time_count_, 1), dim_, rng);
    // global feature width equals d
    store.add_xavier("global.w_f", entity_count_, dim_, rng);
    store.add_zeros("global.b_f", 1, dim_);
}

Var TemporalEncoder::attentive_pool(Tape& tape, ParameterStore& store, const std::string& stream,
                                    const Var& z_prev, std::span<const Var> history) const {
    if (history.empty()) {
        return z_prev;
    }
    const std::string p = "temporal." + stream + ".";
    Var w_q = tape.parameter(store.at(p + "w_q"));
    Var w_k = tape.parameter(store.at(p + "w_k"));
    Var w_v = tape.parameter(store.at(p + "w_v"));
    std::vector<Var> keys;
    std::vector<Var> values;
    for (const auto& x : history) {
        keys.push_back(ad::matmul(x, w_k));
        values.push_back(ad::matmul(x, w_v));
    }
    Var pooled = multi_head_attention(ad::matmul(z_prev, w_q), keys, values, heads_,
                                      std::sqrt(static_cast<double>(dim_)));
    Var hidden = ad::relu(ad::add_row(ad::matmul(pooled, tape.parameter(store.at(p + "ffn_w1"))),
                                      tape.parameter(store.at(p + "ffn_b1"))));
    return ad::add_row(ad::matmul(hidden, tape.parameter(store.at(p + "ffn_w2"))),
                       tape.parameter(store.at(p + "ffn_b2")));
}

Var TemporalEncoder::step(Tape& tape, ParameterStore& store, const std::string& stream,
                          const Var& z_prev, std::span<const Var> window) const {
    // the window front is x_{t-1}; pooling reads x_{t-2} .. x_{t-tau}
    const std::size_t available = window.size();
    const std::size_t usable = std::min(available, static_cast<std::size_t>(window_));
    std::span<const Var> history =
        usable > 1 ? window.subspan(1, usable - 1) : std::span<const Var>{};
    Var pooled = attentive_pool(tape, store, stream, z_prev, history);
    return blend(z_prev, pooled, beta_);
}

Var TemporalEncoder::time_embeddings(Tape& tape, ParameterStore& store,
                                     std::span<const int> times) const {
    Var table = tape.parameter(store.at("time_embedding"));
    std::vector<int> rows(times.begin(), times.end());
    const int last = std::min(time_limit_, static_cast<int>(table.rows()) - 1);
    for (auto& t : rows) {
        t = std::clamp(t, 0, last);
    }
    return ad::gather_rows(table, rows);
}

void TemporalEncoder::set_time_limit(int last_trained_time) {
    time_limit_ = std::clamp(last_trained_time, 0, std::max(time_count_, 1) - 1);
}

Var TemporalEncoder::global_features(Tape& tape, ParameterStore& store,
                                     const SparseMatrix& freq) const {
    return global_pattern(freq, tape.parameter(store.at("global.w_f")),
                          tape.parameter(store.at("global.b_f")));
}

}  // namespace amcen
