#pragma once

#include <optional>
#include <span>
#include <vector>

#include "amcen/autograd.hpp"
#include "amcen/history_index.hpp"

namespace amcen {

enum class Branch { historical, nonhistorical, combined };

[[nodiscard]] const char* branch_name(Branch b);

/// Probability vector over all entities plus the set it is supported on.
struct ScoreDistribution {
    Eigen::VectorXd probabilities;
    MaskVector support;
    Branch branch = Branch::combined;
    bool empty_support = false;  // branch had no admissible entity; probabilities are all zero
};

/// Additive bias given to masked-out logits before the softmax.
inline constexpr double kMaskedLogitBias = -1e9;
/// Probabilities are clamped here before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

/// logits(i, o) = ((x_s (+) x_r) W_q)(x_o W_k)^T / sqrt(d) for each query row i.
/// w_q is 2d x d, w_k is d x d.
[[nodiscard]] Var similarity_logits(const Var& x_subject, const Var& x_relation,
                                    const Var& entity_x, const Var& w_q, const Var& w_k);
[[nodiscard]] Eigen::VectorXd similarity_logits(const Eigen::RowVectorXd& x_subject,
                                                const Eigen::RowVectorXd& x_relation,
                                                const Matrix& entity_x, const Matrix& w_q,
                                                const Matrix& w_k);

/// Softmax restricted to the mask; zero outside it. An all-zero mask yields a
/// zero distribution flagged empty_support.
[[nodiscard]] ScoreDistribution branch_distribution(const Eigen::VectorXd& logits,
                                                    const MaskVector& mask, Branch branch);

/// Full softmax multiplied by the mask (unnormalized on the support).
[[nodiscard]] ScoreDistribution post_softmax_masked(const Eigen::VectorXd& logits,
                                                    const MaskVector& mask, Branch branch);

/// label * -log C_his(gt) + (1 - label) * -log C_nhis(gt).
[[nodiscard]] double multiclass_loss(const ScoreDistribution& historical,
                                     const ScoreDistribution& nonhistorical, int gt, int label);

/// (C_his + C_nhis) / 2. Throws ContractViolation when the supports overlap
/// unless `allow_overlap` (used by the no-attention-mask ablation).
[[nodiscard]] ScoreDistribution combine(const ScoreDistribution& historical,
                                        const ScoreDistribution& nonhistorical,
                                        bool allow_overlap = false);

/// How the two branch losses are formed in a batch.
struct BranchLossOptions {
    bool historical = true;       // historical branch contributes
    bool nonhistorical = true;    // non-historical branch contributes
    bool no_mask = false;         // both supports are all entities
    bool post_softmax = false;    // mask after a full softmax
};

/// Sum over queries of the label-weighted branch cross-entropies.
/// `historical_sets[i]` lists the historical entities of query i in ascending order.
[[nodiscard]] Var dual_branch_loss(const Var& logits,
                                   std::span<const std::vector<int>> historical_sets,
                                   std::span<const int> targets, std::span<const int> labels,
                                   const BranchLossOptions& options);

/// Branch distributions for one query under the same options, plus the mixture.
struct BranchScores {
    ScoreDistribution historical;
    ScoreDistribution nonhistorical;
    ScoreDistribution combined;
};
[[nodiscard]] BranchScores score_branches(const Eigen::VectorXd& logits,
                                          const MaskVector& historical_mask,
                                          const BranchLossOptions& options);

}  // namespace amcen
