#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "amcen/training.hpp"

namespace amcen {

enum class RankMode { raw, filtered };
enum class Direction { object, subject };

[[nodiscard]] const char* to_string(RankMode m);
[[nodiscard]] const char* to_string(Direction d);  // "obj" / "subj"
[[nodiscard]] Direction parse_direction(const std::string& name);

struct InferenceOptions {
    bool use_predictive_mask = true;
    bool gt_mask_override = false;  // mask from the true event type instead of the classifier

    [[nodiscard]] static InferenceOptions from(const AblationFlags& flags);
};

struct Inference {
    Eigen::VectorXd unmasked;  // mixture of the two branch distributions
    Eigen::VectorXd final;     // after the predictive mask (or unmasked on fallback)
    MaskVector predictive;     // all ones when the mask is not used
    double recurring_probability = 0.0;
    int predicted_label = 0;
    int prediction = 0;        // argmax of final, lowest id on ties
    bool fell_back = false;
};

using WarningSink = std::function<void(const std::string&)>;

/// Classify, mask and rank one query from its decoder logits.
/// `true_label` is only read when options.gt_mask_override is set.
[[nodiscard]] Inference infer(const Eigen::VectorXd& logits, const MaskVector& historical_mask,
                              double recurring_probability, int true_label,
                              const InferenceOptions& options, const BranchLossOptions& branches,
                              const WarningSink& warn = {});

/// 1 + #{o : p_o > p_gt} + #{o < gt : p_o == p_gt}.
[[nodiscard]] int rank_of(const Eigen::VectorXd& p, int gt);
/// rank_of with the entities in `other_answers` removed (gt itself is never removed).
[[nodiscard]] int filtered_rank_of(const Eigen::VectorXd& p, int gt, std::span<const int> other_answers);
/// Index of the largest entry, lowest index among ties.
[[nodiscard]] int argmax_lowest_id(const Eigen::VectorXd& p);

struct QueryRecord {
    Quadruple query;  // as asked: subject queries carry the inverse relation
    Direction direction = Direction::object;
    int label = 0;
    int predicted_label = 0;
    double recurring_probability = 0.0;
    int raw_rank = 0;
    int filtered_rank = 0;
    int prediction = 0;
    bool fell_back = false;
};

struct MetricsRow {
    RankMode mode = RankMode::raw;
    std::string direction;  // obj, subj or mean
    double mrr = 0.0;
    double hits1 = 0.0;
    double hits3 = 0.0;
    double hits10 = 0.0;
    double classifier_accuracy = 0.0;
    std::size_t queries = 0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;

    /// Throws ValidationError when the row is absent.
    [[nodiscard]] const MetricsRow& get(RankMode mode, const std::string& direction) const;
};

/// Per-direction means and their average, for both rank modes.
[[nodiscard]] MetricsReport summarize(std::span<const QueryRecord> records);
void to_json(nlohmann::json& j, const MetricsRow& row);
void to_json(nlohmann::json& j, const MetricsReport& report);

/// Header plus one line per record: query, label, predicted_label, rank, ...
void write_records_csv(std::ostream& out, std::span<const QueryRecord> records, RankMode mode);

struct EvaluationResult {
    MetricsReport metrics;
    std::vector<QueryRecord> records;
    std::size_t fallbacks = 0;
};

/// Rolls the model over ground-truth snapshots from time 0 and scores both
/// query directions at every timestamp of `split`. Snapshot t joins the history
/// only after its queries have been scored.
[[nodiscard]] EvaluationResult evaluate_split(AmcenModel& model, const TrainingData& data, Split split,
                                              const InferenceOptions& options,
                                              const WarningSink& warn = {});

struct Prediction {
    Quadruple query;
    Direction direction = Direction::object;
    std::vector<std::pair<int, double>> top;  // (entity, probability), best first
    double recurring_probability = 0.0;
    int predicted_label = 0;
    bool fell_back = false;
};

/// Single query (entity, base relation, ?, time) in the given direction. History
/// and window come from every snapshot before `time`.
[[nodiscard]] Prediction predict(AmcenModel& model, const TrainingData& data, int entity,
                                 int relation, int time, Direction direction, int top_k,
                                 const InferenceOptions& options);

}  // namespace amcen
