#include "amcen/classifier.hpp"

#include <cmath>
#include <limits>

#include "amcen/errors.hpp"

namespace amcen {

Var contrastive_loss(const Var& v, std::span<const int> labels, double temperature) {
    const Eigen::Index n = v.rows();
    if (n < 2) {
        throw ValidationError("contrastive_loss: batch needs at least two samples");
    }
    if (static_cast<Eigen::Index>(labels.size()) != n) {
        throw ValidationError("contrastive_loss: one label per row required");
    }
    if (temperature <= 0.0) {
        throw ValidationError("contrastive_loss: temperature must be positive");
    }
    const Matrix& x = v.value();
    const Matrix sim = (x * x.transpose()) / temperature;

    // dL/dsim, filled row by row; sim is symmetric so dV = (G + G^T) V / mu
    Matrix grad_sim = Matrix::Zero(n, n);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        int positives = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
                ++positives;
            }
        }
        if (positives == 0) {
            continue;
        }
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < n; ++k) {
            if (k != i) {
                m = std::max(m, sim(i, k));
            }
        }
        double s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            if (k != i) {
                s += std::exp(sim(i, k) - m);
            }
        }
        const double lse = m + std::log(s);
        const double inv = 1.0 / positives;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            grad_sim(i, j) += std::exp(sim(i, j) - lse);
            if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
                total -= inv * (sim(i, j) - lse);
                grad_sim(i, j) -= inv;
            }
        }
    }

    Matrix value(1, 1);
    value(0, 0) = total;
    const int id = v.id();
    return v.tape().record(std::move(value), v.requires_grad(),
                           [id, grad_sim = std::move(grad_sim), temperature](Tape& t, const Matrix& g) {
                               const Matrix& xv = t.value(id);
                               t.accumulate(id, g(0, 0) * ((grad_sim + grad_sim.transpose()) * xv) /
                                                    temperature);
                           });
}

double contrastive_loss(const Matrix& v, std::span<const int> labels, double temperature) {
    Tape tape(false);
    return contrastive_loss(tape.constant(v), labels, temperature).scalar();
}

Var normalize_rows(const Var& v) {
    const Matrix& x = v.value();
    Eigen::VectorXd norms = x.rowwise().norm().cwiseMax(1e-12);
    Matrix y = norms.cwiseInverse().asDiagonal() * x;
    const int id = v.id();
    Tape& tape = v.tape();
    const int out_id = static_cast<int>(tape.size());
    return tape.record(std::move(y), v.requires_grad(),
                       [id, out_id, norms = std::move(norms)](Tape& t, const Matrix& g) {
                           const Matrix& yv = t.value(out_id);
                           Eigen::VectorXd dots = g.cwiseProduct(yv).rowwise().sum();
                           Matrix dx = g - dots.asDiagonal() * yv;
                           t.accumulate(id, norms.cwiseInverse().asDiagonal() * dx);
                       });
}

Var binary_cross_entropy_with_logits(const Var& logits, std::span<const int> labels) {
    if (logits.cols() != 1 || static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
        throw ValidationError("binary_cross_entropy: expects n x 1 logits and n labels");
    }
    const Matrix& z = logits.value();
    double total = 0.0;
    Matrix dz(z.rows(), 1);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double zi = z(i, 0);
        const double y = labels[static_cast<std::size_t>(i)] != 0 ? 1.0 : 0.0;
        // softplus(z) = max(z,0) + log1p(exp(-|z|))
        total += std::max(zi, 0.0) + std::log1p(std::exp(-std::abs(zi))) - y * zi;
        dz(i, 0) = 1.0 / (1.0 + std::exp(-zi)) - y;
    }
    Matrix value(1, 1);
    value(0, 0) = total;
    const int id = logits.id();
    return logits.tape().record(std::move(value), logits.requires_grad(),
                                [id, dz = std::move(dz)](Tape& t, const Matrix& g) {
                                    t.accumulate(id, g(0, 0) * dz);
                                });
}

MaskVector predictive_mask(double recurring_probability, std::span<const int> freq) {
    const bool recurring = predicted_label(recurring_probability) == 1;
    MaskVector mask(freq.size());
    for (std::size_t o = 0; o < freq.size(); ++o) {
        mask.set(o, recurring ? freq[o] > 0 : freq[o] == 0);
    }
    return mask;
}

EventClassifier::EventClassifier(int dim, int global_width) : dim_(dim), global_width_(global_width) {}

void EventClassifier::init_params(ParameterStore& store, std::mt19937_64& rng) const {
    store.add_xavier("contrastive.w1", 3 * dim_ + global_width_, dim_, rng);
    store.add_zeros("contrastive.b1", 1, dim_);
    store.add_xavier("contrastive.w2", dim_, dim_, rng);
    store.add_zeros("contrastive.b2", 1, dim_);
    store.add_xavier("classifier.w1", dim_, dim_, rng);
    store.add_zeros("classifier.b1", 1, dim_);
    store.add_xavier("classifier.w2", dim_, 1, rng);
    store.add_zeros("classifier.b2", 1, 1);
}

Var EventClassifier::representation(Tape& tape, ParameterStore& store, const Var& local,
                                    const Var& global) const {
    if (local.cols() != 3 * dim_ || global.cols() != global_width_ || local.rows() != global.rows()) {
        throw ValidationError("contrastive representation: dimension mismatch");
    }
    const Var parts[] = {local, global};
    Var hidden = ad::relu(ad::add_row(ad::matmul(ad::hcat(parts), tape.parameter(store.at("contrastive.w1"))),
                                      tape.parameter(store.at("contrastive.b1"))));
    return ad::add_row(ad::matmul(hidden, tape.parameter(store.at("contrastive.w2"))),
                       tape.parameter(store.at("contrastive.b2")));
}

Var EventClassifier::logits(Tape& tape, ParameterStore& store, const Var& v) const {
    Var hidden = ad::relu(ad::add_row(ad::matmul(v, tape.parameter(store.at("classifier.w1"))),
                                      tape.parameter(store.at("classifier.b1"))));
    return ad::add_row(ad::matmul(hidden, tape.parameter(store.at("classifier.w2"))),
                       tape.parameter(store.at("classifier.b2")));
}

Eigen::RowVectorXd EventClassifier::representation(ParameterStore& store,
                                                   const Eigen::RowVectorXd& local,
                                                   const Eigen::RowVectorXd& global) const {
    Tape tape(false);
    return representation(tape, store, tape.constant(local), tape.constant(global)).value().row(0);
}

double EventClassifier::classify(ParameterStore& store, const Eigen::RowVectorXd& v) const {
    Tape tape(false);
    return ad::sigmoid(logits(tape, store, tape.constant(v))).scalar();
}

}  // namespace amcen
