#include "amcen/config.hpp"

#include <cstdio>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "amcen/errors.hpp"

namespace amcen {

const char* to_string(Composition c) {
    switch (c) {
        case Composition::subtract: return "subtract";
        case Composition::multiply: return "multiply";
        case Composition::circular_correlation: return "circular-correlation";
    }
    return "?";
}

Composition parse_composition(const std::string& name) {
    if (name == "subtract" || name == "sub") return Composition::subtract;
    if (name == "multiply" || name == "mult") return Composition::multiply;
    if (name == "circular-correlation" || name == "corr" || name == "ccorr") {
        return Composition::circular_correlation;
    }
    throw ValidationError("unknown composition operator: " + name);
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "adamw"; }

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "adamw") return OptimizerKind::adamw;
    throw ValidationError("unknown optimizer: " + name);
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) {
            throw ValidationError(std::string("invalid config: ") + what);
        }
    };
    require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0,1]");
    require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1]");
    require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0,1)");
    require(temperature > 0.0, "temperature must be positive");
    require(learning_rate > 0.0, "learning_rate must be positive");
    require(weight_decay >= 0.0, "weight_decay must be nonnegative");
    require(stage1_epochs > 0 && stage2_epochs > 0, "epoch counts must be positive");
    require(stage1_epochs <= 30, "stage1_epochs is limited to 30");
    require(stage2_epochs <= 20, "stage2_epochs is limited to 20");
    require(batch_size > 0, "batch_size must be positive");
    require(dim > 0 && heads > 0, "dim and heads must be positive");
    require(dim % heads == 0, "dim must be divisible by heads");
    require(layers >= 0, "layers must be nonnegative");
    require(window >= 1, "window must be at least 1");
    require(num_bases >= 0, "num_bases must be nonnegative");
    require(validate_every >= 0, "validate_every must be nonnegative");
    require(!(ablation.his_only && ablation.nonhis_only), "his_only and nonhis_only are exclusive");
    require(!(ablation.no_predictive_mask && ablation.gt_predictive_mask),
            "no_predictive_mask and gt_predictive_mask are exclusive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"learning_rate", c.learning_rate},
        {"weight_decay", c.weight_decay},
        {"optimizer", to_string(c.optimizer)},
        {"stage1_epochs", c.stage1_epochs},
        {"stage2_epochs", c.stage2_epochs},
        {"batch_size", c.batch_size},
        {"lambda", c.lambda},
        {"seed", c.seed},
        {"validate_every", c.validate_every},
        {"dim", c.dim},
        {"layers", c.layers},
        {"dropout", c.dropout},
        {"composition", to_string(c.composition)},
        {"num_bases", c.num_bases},
        {"window", c.window},
        {"heads", c.heads},
        {"beta", c.beta},
        {"temperature", c.temperature},
        {"normalize_contrastive", c.normalize_contrastive},
        {"ablation",
         {{"no_attention_mask", c.ablation.no_attention_mask},
          {"his_only", c.ablation.his_only},
          {"nonhis_only", c.ablation.nonhis_only},
          {"no_predictive_mask", c.ablation.no_predictive_mask},
          {"gt_predictive_mask", c.ablation.gt_predictive_mask},
          {"softmax_activation", c.ablation.softmax_activation},
          {"post_softmax_mask", c.ablation.post_softmax_mask}}},
    };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.optimizer = parse_optimizer(j.value("optimizer", std::string(to_string(d.optimizer))));
    c.stage1_epochs = j.value("stage1_epochs", d.stage1_epochs);
    c.stage2_epochs = j.value("stage2_epochs", d.stage2_epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lambda = j.value("lambda", d.lambda);
    c.seed = j.value("seed", d.seed);
    c.validate_every = j.value("validate_every", d.validate_every);
    c.dim = j.value("dim", d.dim);
    c.layers = j.value("layers", d.layers);
    c.dropout = j.value("dropout", d.dropout);
    c.composition = parse_composition(j.value("composition", std::string(to_string(d.composition))));
    c.num_bases = j.value("num_bases", d.num_bases);
    c.window = j.value("window", d.window);
    c.heads = j.value("heads", d.heads);
    c.beta = j.value("beta", d.beta);
    c.temperature = j.value("temperature", d.temperature);
    c.normalize_contrastive = j.value("normalize_contrastive", d.normalize_contrastive);
    const auto a = j.value("ablation", nlohmann::json::object());
    c.ablation.no_attention_mask = a.value("no_attention_mask", false);
    c.ablation.his_only = a.value("his_only", false);
    c.ablation.nonhis_only = a.value("nonhis_only", false);
    c.ablation.no_predictive_mask = a.value("no_predictive_mask", false);
    c.ablation.gt_predictive_mask = a.value("gt_predictive_mask", false);
    c.ablation.softmax_activation = a.value("softmax_activation", false);
    c.ablation.post_softmax_mask = a.value("post_softmax_mask", false);
}

std::string architecture_fingerprint(const TrainConfig& c, int entity_count, int base_relation_count,
                                     int time_count) {
    const nlohmann::json arch{
        {"entities", entity_count}, {"relations", base_relation_count}, {"times", time_count},
        {"dim", c.dim},           {"layers", c.layers},                 {"num_bases", c.num_bases},
        {"heads", c.heads},       {"composition", to_string(c.composition)},
    };
    const std::string text = arch.dump();
    const uLong crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()),
                            static_cast<uInt>(text.size()));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

}  // namespace amcen
