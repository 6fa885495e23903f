#pragma once

#include <span>
#include <vector>

#include "amcen/classifier.hpp"
#include "amcen/config.hpp"
#include "amcen/dataset.hpp"
#include "amcen/decoder.hpp"
#include "amcen/history_index.hpp"
#include "amcen/structural_encoder.hpp"
#include "amcen/temporal_encoder.hpp"

namespace amcen {

/// Object queries (s, r, ?, t) with their answers and history-derived inputs.
/// Subject queries are expressed on inverse relations.
struct QueryBatch {
    std::vector<Quadruple> queries;  // object field holds the answer
    std::vector<int> labels;         // 1 recurring, 0 new
    std::vector<std::vector<int>> historical;
    std::vector<std::vector<std::pair<int, int>>> frequencies;

    [[nodiscard]] static QueryBatch build(std::span<const Quadruple> queries,
                                          const HistoryIndex& index);
    [[nodiscard]] QueryBatch subset(std::span<const std::size_t> rows) const;
    [[nodiscard]] std::size_t size() const { return queries.size(); }
    [[nodiscard]] bool empty() const { return queries.empty(); }
    [[nodiscard]] std::vector<int> targets() const;
};

/// x_{., t} for all entities and relations at one timestamp.
struct TimeFeatures {
    Var entities;
    Var relations;
};

struct BatchLosses {
    Var ranking;      // mean label-weighted branch cross-entropy
    Var contrastive;  // mean supervised contrastive term (0 when skipped)
    Var total;        // lambda * ranking + (1 - lambda) * contrastive
};

/// Parameters and forward computations of the full network.
class AmcenModel {
public:
    AmcenModel(TrainConfig config, int entity_count, int base_relation_count, int time_count);

    /// Fresh random parameters from config.seed.
    void initialize();

    [[nodiscard]] ParameterStore& params() { return params_; }
    [[nodiscard]] const ParameterStore& params() const { return params_; }
    void set_params(ParameterStore params) { params_ = std::move(params); }
    [[nodiscard]] const TrainConfig& config() const { return config_; }
    /// Switch ablation flags that do not change parameter shapes.
    void set_ablation(const AblationFlags& flags);
    /// Replace optimization and non-shape settings. Throws ContractViolation when
    /// the new configuration implies different parameter shapes.
    void set_config(const TrainConfig& config);

    [[nodiscard]] int entity_count() const { return entity_count_; }
    [[nodiscard]] int base_relation_count() const { return base_relation_count_; }
    [[nodiscard]] int time_count() const { return time_count_; }
    [[nodiscard]] std::string fingerprint() const;

    [[nodiscard]] const StructuralEncoder& structural() const { return structural_; }
    [[nodiscard]] TemporalEncoder& temporal() { return temporal_; }
    [[nodiscard]] const TemporalEncoder& temporal() const { return temporal_; }
    [[nodiscard]] const EventClassifier& classifier() const { return classifier_; }

    /// z_{t-1}: the encoded previous snapshot, or the layer-0 tables when there is none.
    [[nodiscard]] StructuralOutput structure(Tape& tape, const SnapshotGraph* previous,
                                             ForwardMode mode);

    /// x_t from z_{t-1} and per-stream windows whose fronts are x_{t-1}.
    [[nodiscard]] TimeFeatures temporal_step(Tape& tape, const StructuralOutput& z_prev,
                                             std::span<const Var> entity_window,
                                             std::span<const Var> relation_window);

    /// Full recursion from timestamp 0 to t kept on one tape (no detaching).
    [[nodiscard]] TimeFeatures unrolled_features(Tape& tape, const SnapshotSequence& seq, int t,
                                                 ForwardMode mode);

    [[nodiscard]] Var logits(Tape& tape, const TimeFeatures& x, const QueryBatch& batch);
    [[nodiscard]] Var local_pattern(Tape& tape, const TimeFeatures& x, const QueryBatch& batch);
    [[nodiscard]] Var global_pattern(Tape& tape, const QueryBatch& batch);
    [[nodiscard]] Var representation(Tape& tape, const TimeFeatures& x, const QueryBatch& batch);
    /// Pre-sigmoid recurring-event scores, n x 1.
    [[nodiscard]] Var classifier_logits(Tape& tape, const Var& representation);

    [[nodiscard]] BatchLosses losses(Tape& tape, const TimeFeatures& x, const QueryBatch& batch);

    [[nodiscard]] BranchLossOptions branch_options() const;

private:
    TrainConfig config_;
    int entity_count_;
    int base_relation_count_;
    int time_count_;
    ParameterStore params_;
    StructuralEncoder structural_;
    TemporalEncoder temporal_;
    EventClassifier classifier_;
};

/// Walks snapshots forward, keeping the detached window of past x matrices.
class Rollout {
public:
    Rollout(AmcenModel& model, const SnapshotSequence& seq);

    void reset();
    /// Next timestamp whose features features() will produce.
    [[nodiscard]] int time() const { return time_; }
    /// x_t for t = time(), computed on `tape` from the encoded snapshot t-1.
    [[nodiscard]] TimeFeatures features(Tape& tape, ForwardMode mode);
    /// Store x_t (detached) and move to t + 1.
    void advance(const Matrix& entities, const Matrix& relations);
    /// features() on a no-grad tape followed by advance(); returns the values.
    std::pair<Matrix, Matrix> step_no_grad();

private:
    AmcenModel& model_;
    const SnapshotSequence& seq_;
    TemporalState state_;
    int time_ = 0;
};

/// Base facts of snapshot t as an encoder graph (empty beyond the sequence).
[[nodiscard]] SnapshotGraph snapshot_graph(const SnapshotSequence& seq, int t, int entity_count,
                                           int base_relation_count);

}  // namespace amcen
