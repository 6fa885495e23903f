#include "amcen/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "amcen/errors.hpp"

namespace amcen {

const char* branch_name(Branch b) {
    switch (b) {
        case Branch::historical: return "historical";
        case Branch::nonhistorical: return "nonhistorical";
        case Branch::combined: return "combined";
    }
    return "?";
}

Var similarity_logits(const Var& x_subject, const Var& x_relation, const Var& entity_x,
                      const Var& w_q, const Var& w_k) {
    const auto d = static_cast<double>(w_k.cols());
    const Var parts[] = {x_subject, x_relation};
    Var query = ad::matmul(ad::hcat(parts), w_q);
    Var keys = ad::matmul(entity_x, w_k);
    return ad::scale(ad::matmul_bt(query, keys), 1.0 / std::sqrt(d));
}

Eigen::VectorXd similarity_logits(const Eigen::RowVectorXd& x_subject,
                                  const Eigen::RowVectorXd& x_relation, const Matrix& entity_x,
                                  const Matrix& w_q, const Matrix& w_k) {
    if (x_subject.size() != x_relation.size() || w_q.rows() != 2 * x_subject.size() ||
        entity_x.cols() != w_k.rows()) {
        throw ValidationError("similarity_logits: dimension mismatch");
    }
    Tape tape(false);
    Var out = similarity_logits(tape.constant(x_subject), tape.constant(x_relation),
                                tape.constant(entity_x), tape.constant(w_q), tape.constant(w_k));
    return out.value().row(0).transpose();
}

ScoreDistribution branch_distribution(const Eigen::VectorXd& logits, const MaskVector& mask,
                                      Branch branch) {
    if (static_cast<std::size_t>(logits.size()) != mask.size()) {
        throw ValidationError("branch_distribution: mask length differs from logits");
    }
    ScoreDistribution out;
    out.branch = branch;
    out.support = mask;
    out.probabilities = Eigen::VectorXd::Zero(logits.size());
    if (mask.none()) {
        out.empty_support = true;
        return out;
    }
    Eigen::VectorXd biased = logits;
    for (Eigen::Index o = 0; o < logits.size(); ++o) {
        if (!mask[static_cast<std::size_t>(o)]) {
            biased(o) += kMaskedLogitBias;
        }
    }
    const double m = biased.maxCoeff();
    Eigen::VectorXd e = (biased.array() - m).exp().matrix();
    for (Eigen::Index o = 0; o < logits.size(); ++o) {
        if (!mask[static_cast<std::size_t>(o)]) {
            e(o) = 0.0;
        }
    }
    out.probabilities = e / e.sum();
    return out;
}

ScoreDistribution post_softmax_masked(const Eigen::VectorXd& logits, const MaskVector& mask,
                                      Branch branch) {
    ScoreDistribution full = branch_distribution(logits, MaskVector(mask.size(), true), branch);
    for (Eigen::Index o = 0; o < logits.size(); ++o) {
        if (!mask[static_cast<std::size_t>(o)]) {
            full.probabilities(o) = 0.0;
        }
    }
    full.support = mask;
    full.empty_support = mask.none();
    return full;
}

double multiclass_loss(const ScoreDistribution& historical, const ScoreDistribution& nonhistorical,
                       int gt, int label) {
    if (gt < 0 || gt >= historical.probabilities.size() ||
        historical.probabilities.size() != nonhistorical.probabilities.size()) {
        throw ValidationError("multiclass_loss: ground truth outside the vocabulary");
    }
    const ScoreDistribution& chosen = label == 1 ? historical : nonhistorical;
    if (!chosen.support[static_cast<std::size_t>(gt)]) {
        return 0.0;
    }
    return -std::log(std::max(chosen.probabilities(gt), kProbabilityFloor));
}

ScoreDistribution combine(const ScoreDistribution& historical, const ScoreDistribution& nonhistorical,
                          bool allow_overlap) {
    if (historical.probabilities.size() != nonhistorical.probabilities.size()) {
        throw ValidationError("combine: length mismatch");
    }
    if (!allow_overlap) {
        for (std::size_t o = 0; o < historical.support.size(); ++o) {
            if (historical.support[o] && nonhistorical.support[o]) {
                throw ContractViolation("combine: branch supports overlap at entity " +
                                        std::to_string(o));
            }
        }
    }
    ScoreDistribution out;
    out.branch = Branch::combined;
    out.probabilities = 0.5 * (historical.probabilities + nonhistorical.probabilities);
    out.support = MaskVector(historical.support.size());
    for (std::size_t o = 0; o < out.support.size(); ++o) {
        out.support.set(o, historical.support[o] || nonhistorical.support[o]);
    }
    return out;
}

namespace {

// log-sum-exp of row over the ascending index set `in` (or its complement)
double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row, const std::vector<int>& in,
                   bool complement, double& max_out) {
    double m = -std::numeric_limits<double>::infinity();
    auto visit = [&](auto&& fn) {
        if (!complement) {
            for (int o : in) {
                fn(o);
            }
            return;
        }
        std::size_t k = 0;
        for (int o = 0; o < row.size(); ++o) {
            if (k < in.size() && in[k] == o) {
                ++k;
                continue;
            }
            fn(o);
        }
    };
    visit([&](int o) { m = std::max(m, row(o)); });
    if (!std::isfinite(m)) {
        max_out = m;
        return m;
    }
    double s = 0.0;
    visit([&](int o) { s += std::exp(row(o) - m); });
    max_out = m;
    return m + std::log(s);
}

bool contains(const std::vector<int>& sorted, int value) {
    return std::binary_search(sorted.begin(), sorted.end(), value);
}

}  // namespace

Var dual_branch_loss(const Var& logits, std::span<const std::vector<int>> historical_sets,
                     std::span<const int> targets, std::span<const int> labels,
                     const BranchLossOptions& options) {
    const Eigen::Index n = logits.rows();
    if (static_cast<Eigen::Index>(historical_sets.size()) != n ||
        static_cast<Eigen::Index>(targets.size()) != n ||
        static_cast<Eigen::Index>(labels.size()) != n) {
        throw ValidationError("dual_branch_loss: one history set, target and label per row");
    }
    const Matrix& z = logits.value();
    const std::vector<int> none;
    // per row: which entity set the softmax runs over, and whether it contributes
    struct RowTerm {
        bool active = false;
        bool full = false;        // softmax over all entities
        bool complement = false;  // over the complement of the history set
        double lse = 0.0;
    };
    std::vector<RowTerm> terms(static_cast<std::size_t>(n));
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int gt = targets[static_cast<std::size_t>(i)];
        if (gt < 0 || gt >= z.cols()) {
            throw ValidationError("dual_branch_loss: target outside the vocabulary");
        }
        const int label = labels[static_cast<std::size_t>(i)];
        const auto& hist = historical_sets[static_cast<std::size_t>(i)];
        RowTerm& term = terms[static_cast<std::size_t>(i)];
        const bool use_historical = label == 1 && options.historical;
        const bool use_nonhistorical = label == 0 && options.nonhistorical;
        if (!use_historical && !use_nonhistorical) {
            continue;
        }
        const bool gt_in_history = contains(hist, gt);
        if (!options.no_mask && use_historical != gt_in_history) {
            continue;  // support cannot contain gt
        }
        term.full = options.no_mask || options.post_softmax;
        term.complement = !term.full && use_nonhistorical;
        double m = 0.0;
        term.lse = term.full ? log_sum_exp(z.row(i), none, true, m)
                             : log_sum_exp(z.row(i), hist, term.complement, m);
        const double log_p = z(i, gt) - term.lse;
        if (log_p < std::log(kProbabilityFloor)) {
            total += -std::log(kProbabilityFloor);
            continue;  // clamped: no gradient
        }
        term.active = true;
        total += -log_p;
    }

    Matrix value(1, 1);
    value(0, 0) = total;
    const int id = logits.id();
    std::vector<std::vector<int>> sets(historical_sets.begin(), historical_sets.end());
    std::vector<int> gts(targets.begin(), targets.end());
    return logits.tape().record(
        std::move(value), logits.requires_grad(),
        [id, terms = std::move(terms), sets = std::move(sets), gts = std::move(gts)](
            Tape& t, const Matrix& g) {
            const Matrix& zv = t.value(id);
            Matrix dz = Matrix::Zero(zv.rows(), zv.cols());
            const double scale = g(0, 0);
            for (Eigen::Index i = 0; i < zv.rows(); ++i) {
                const RowTerm& term = terms[static_cast<std::size_t>(i)];
                if (!term.active) {
                    continue;
                }
                const auto& hist = sets[static_cast<std::size_t>(i)];
                auto add_prob = [&](int o) { dz(i, o) += scale * std::exp(zv(i, o) - term.lse); };
                if (term.full) {
                    for (int o = 0; o < zv.cols(); ++o) {
                        add_prob(o);
                    }
                } else if (!term.complement) {
                    for (int o : hist) {
                        add_prob(o);
                    }
                } else {
                    std::size_t k = 0;
                    for (int o = 0; o < zv.cols(); ++o) {
                        if (k < hist.size() && hist[k] == o) {
                            ++k;
                            continue;
                        }
                        add_prob(o);
                    }
                }
                dz(i, gts[static_cast<std::size_t>(i)]) -= scale;
            }
            t.accumulate(id, dz);
        });
}

BranchScores score_branches(const Eigen::VectorXd& logits, const MaskVector& historical_mask,
                            const BranchLossOptions& options) {
    BranchScores s;
    const std::size_t n = historical_mask.size();
    const MaskVector all(n, true);
    const MaskVector nothing(n, false);
    MaskVector his_mask = options.no_mask ? all : historical_mask;
    MaskVector nhis_mask = options.no_mask ? all : historical_mask.complement();
    if (!options.historical) {
        his_mask = nothing;
    }
    if (!options.nonhistorical) {
        nhis_mask = nothing;
    }
    if (options.post_softmax) {
        s.historical = post_softmax_masked(logits, his_mask, Branch::historical);
        s.nonhistorical = post_softmax_masked(logits, nhis_mask, Branch::nonhistorical);
    } else {
        s.historical = branch_distribution(logits, his_mask, Branch::historical);
        s.nonhistorical = branch_distribution(logits, nhis_mask, Branch::nonhistorical);
    }
    s.combined = combine(s.historical, s.nonhistorical, options.no_mask);
    return s;
}

}  // namespace amcen
