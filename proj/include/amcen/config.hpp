#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace amcen {

enum class Composition { subtract, multiply, circular_correlation };
enum class OptimizerKind { adam, adamw };

[[nodiscard]] const char* to_string(Composition c);
[[nodiscard]] Composition parse_composition(const std::string& name);
[[nodiscard]] const char* to_string(OptimizerKind k);
[[nodiscard]] OptimizerKind parse_optimizer(const std::string& name);

/// Switches reproducing the ablation variants and the literal formulations.
struct AblationFlags {
    bool no_attention_mask = false;   // both branch masks all-ones
    bool his_only = false;            // historical branch only
    bool nonhis_only = false;         // non-historical branch only
    bool no_predictive_mask = false;  // rank with the unmasked mixture
    bool gt_predictive_mask = false;  // predictive mask from the true event type
    bool softmax_activation = false;  // softmax(ReLU(x)) after each graph layer
    bool post_softmax_mask = false;   // multiply masks after a full softmax

    bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
    // optimization
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    OptimizerKind optimizer = OptimizerKind::adam;
    int stage1_epochs = 30;
    int stage2_epochs = 20;
    int batch_size = 1024;
    double lambda = 0.6;  // weight of the ranking loss against the contrastive loss
    std::uint64_t seed = 42;
    int validate_every = 1;  // epochs between validation MRR checks; 0 disables selection

    // architecture
    int dim = 200;
    int layers = 2;
    double dropout = 0.3;
    Composition composition = Composition::multiply;
    int num_bases = 0;  // 0 = one free embedding per relation
    int window = 4;
    int heads = 10;
    double beta = 0.2;
    double temperature = 0.1;
    bool normalize_contrastive = false;

    AblationFlags ablation;

    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Stable hash of the fields that shape the parameter tensors, plus vocabulary sizes.
[[nodiscard]] std::string architecture_fingerprint(const TrainConfig& c, int entity_count,
                                                   int base_relation_count, int time_count);

}  // namespace amcen
