#pragma once

#include <random>
#include <span>
#include <vector>

#include "amcen/autograd.hpp"
#include "amcen/history_index.hpp"

namespace amcen {

/// Supervised contrastive loss over a batch of representations (rows of v).
///
/// For anchor i with positives P(i) = {j != i : label_j == label_i}:
///   term_i = -1/|P(i)| * sum_{j in P(i)} log( exp(v_i.v_j/mu) / sum_{k != i} exp(v_k.v_i/mu) )
/// Anchors without positives are skipped; the result is the sum of the terms.
[[nodiscard]] Var contrastive_loss(const Var& v, std::span<const int> labels, double temperature);
[[nodiscard]] double contrastive_loss(const Matrix& v, std::span<const int> labels,
                                      double temperature);

/// Rows scaled to unit length.
[[nodiscard]] Var normalize_rows(const Var& v);

/// sum_i softplus(z_i) - y_i z_i, the binary cross-entropy of sigmoid(z) against y.
[[nodiscard]] Var binary_cross_entropy_with_logits(const Var& logits, std::span<const int> labels);

/// Recurring when probability > 1/2, then the historical entities; otherwise
/// the non-historical ones.
[[nodiscard]] MaskVector predictive_mask(double recurring_probability, std::span<const int> freq);

[[nodiscard]] inline int predicted_label(double recurring_probability) {
    return recurring_probability > 0.5 ? 1 : 0;
}

/// Contrastive head (local (+) global -> d) and the binary event-type classifier.
/// Parameters: contrastive.{w1,b1,w2,b2} and classifier.{w1,b1,w2,b2}.
class EventClassifier {
public:
    EventClassifier(int dim, int global_width);

    void init_params(ParameterStore& store, std::mt19937_64& rng) const;

    /// v_q = FFN(H_local (+) H_global): ReLU(x W1 + b1) W2 + b2.
    [[nodiscard]] Var representation(Tape& tape, ParameterStore& store, const Var& local,
                                     const Var& global) const;
    /// Pre-sigmoid score of the d -> d -> 1 classifier.
    [[nodiscard]] Var logits(Tape& tape, ParameterStore& store, const Var& v) const;

    [[nodiscard]] Eigen::RowVectorXd representation(ParameterStore& store,
                                                    const Eigen::RowVectorXd& local,
                                                    const Eigen::RowVectorXd& global) const;
    [[nodiscard]] double classify(ParameterStore& store, const Eigen::RowVectorXd& v) const;

    static constexpr const char* kClassifierPrefix = "classifier.";

private:
    int dim_;
    int global_width_;
};

}  // namespace amcen
