#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amcen/model.hpp"

namespace amcen {

/// Vocabulary plus every snapshot of train, valid and test in time order.
struct TrainingData {
    Vocabulary vocab;
    SnapshotSequence sequence;

    [[nodiscard]] static TrainingData from_dataset(const Dataset& dataset);
    /// Last timestamp tagged `split`, or -1 when the split is empty.
    [[nodiscard]] int last_time(Split split) const;
};

/// Object and subject queries for every base fact, the latter on inverse relations.
[[nodiscard]] std::vector<Quadruple> both_directions(std::span<const Quadruple> base_facts,
                                                     int base_relation_count);

struct AdamSettings {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a named subset of a ParameterStore. kind == adam folds the decay
/// into the gradient (L2); adamw applies it directly to the weights.
class Optimizer {
public:
    Optimizer(ParameterStore& store, std::vector<std::string> names, AdamSettings settings);

    /// One update from the current gradients. Parameters whose gradient is exactly
    /// zero everywhere are treated as unused and skipped. Throws ContractViolation
    /// if any managed parameter is frozen.
    void step();
    [[nodiscard]] long steps() const { return steps_; }
    [[nodiscard]] const std::vector<std::string>& names() const { return names_; }

private:
    struct Moments {
        Matrix m;
        Matrix v;
        long t = 0;
    };
    ParameterStore& store_;
    std::vector<std::string> names_;
    AdamSettings settings_;
    std::vector<Moments> moments_;
    long steps_ = 0;
};

struct EpochRecord {
    int stage = 1;
    int epoch = 0;  // 1-based
    double loss = 0.0;
    std::optional<double> val_mrr;
    std::optional<double> accuracy;  // stage 2: training accuracy of the classifier
};
void to_json(nlohmann::json& j, const EpochRecord& r);

struct Checkpoint {
    std::string stage;  // "stage1" or "stage2"
    int epoch = 0;
    TrainConfig config;
    int entity_count = 0;
    int base_relation_count = 0;
    int time_count = 0;
    int time_limit = 0;
    nlohmann::json metrics = nlohmann::json::object();
    ParameterStore params;

    [[nodiscard]] std::string fingerprint() const;
};

[[nodiscard]] Checkpoint make_checkpoint(const AmcenModel& model, std::string stage, int epoch,
                                         nlohmann::json metrics = nlohmann::json::object());
/// Model with the checkpoint's configuration, parameters and time limit.
[[nodiscard]] AmcenModel restore_model(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on a damaged or foreign file. With `expected_fingerprint`
/// set, a different architecture is refused unless `force`.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path,
                                         const std::optional<std::string>& expected_fingerprint = {},
                                         bool force = false);

struct TrainingHooks {
    std::function<void(const EpochRecord&)> on_epoch;
    /// Selection by validation MRR; disable for fixtures without a valid split.
    bool select_by_validation = true;
};

/// Chronological pass over the training snapshots minimizing
/// lambda * ranking + (1 - lambda) * contrastive. Leaves the model holding the
/// selected parameters and returns their checkpoint.
Checkpoint stage1_train(AmcenModel& model, const TrainingData& data, const TrainingHooks& hooks = {});

/// Binary cross-entropy training of the classifier head on representations
/// computed once with every other parameter frozen.
Checkpoint stage2_train(AmcenModel& model, const TrainingData& data, const TrainingHooks& hooks = {});

}  // namespace amcen
