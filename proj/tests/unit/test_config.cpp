#include <doctest.h>

#include <nlohmann/json.hpp>

#include "amcen/config.hpp"
#include "amcen/errors.hpp"

using namespace amcen;

TEST_SUITE("config") {

TEST_CASE("defaults are the published settings") {
    const TrainConfig c;
    CHECK(c.learning_rate == 1e-3);
    CHECK(c.weight_decay == 1e-5);
    CHECK(c.optimizer == OptimizerKind::adam);
    CHECK(c.stage1_epochs == 30);
    CHECK(c.stage2_epochs == 20);
    CHECK(c.dim == 200);
    CHECK(c.batch_size == 1024);
    CHECK(c.layers == 2);
    CHECK(c.dropout == 0.3);
    CHECK(c.window == 4);
    CHECK(c.heads == 10);
    CHECK(c.beta == 0.2);
    CHECK(c.lambda == 0.6);
    CHECK(c.temperature == 0.1);
    CHECK(c.composition == Composition::multiply);
    CHECK(c.num_bases == 0);
    CHECK(c.ablation == AblationFlags{});
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("json round trip preserves every field") {
    TrainConfig c;
    c.learning_rate = 0.01;
    c.weight_decay = 0.0;
    c.optimizer = OptimizerKind::adamw;
    c.stage1_epochs = 7;
    c.stage2_epochs = 3;
    c.batch_size = 33;
    c.lambda = 0.25;
    c.seed = 123456789012345ULL;
    c.validate_every = 2;
    c.dim = 12;
    c.layers = 1;
    c.dropout = 0.1;
    c.composition = Composition::circular_correlation;
    c.num_bases = 4;
    c.window = 6;
    c.heads = 3;
    c.beta = 0.7;
    c.temperature = 0.5;
    c.normalize_contrastive = true;
    c.ablation.no_attention_mask = true;
    c.ablation.his_only = true;
    c.ablation.gt_predictive_mask = true;
    c.ablation.softmax_activation = true;
    c.ablation.post_softmax_mask = true;
    const nlohmann::json j = c;
    const TrainConfig back = nlohmann::json::parse(j.dump()).get<TrainConfig>();
    CHECK(back == c);
}

TEST_CASE("missing json fields fall back to defaults") {
    const TrainConfig c = nlohmann::json::parse(R"({"dim": 16, "ablation": {"nonhis_only": true}})").get<TrainConfig>();
    CHECK(c.dim == 16);
    CHECK(c.heads == 10);
    CHECK(c.ablation.nonhis_only);
    CHECK_FALSE(c.ablation.his_only);
}

TEST_CASE("validation rejects out-of-range settings") {
    auto rejects = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ValidationError);
    };
    rejects([](TrainConfig& c) { c.lambda = 1.5; });
    rejects([](TrainConfig& c) { c.beta = -0.1; });
    rejects([](TrainConfig& c) { c.dropout = 1.0; });
    rejects([](TrainConfig& c) { c.temperature = 0.0; });
    rejects([](TrainConfig& c) { c.learning_rate = 0.0; });
    rejects([](TrainConfig& c) { c.stage1_epochs = 31; });
    rejects([](TrainConfig& c) { c.stage2_epochs = 21; });
    rejects([](TrainConfig& c) { c.stage1_epochs = 0; });
    rejects([](TrainConfig& c) { c.heads = 7; });
    rejects([](TrainConfig& c) { c.window = 0; });
    rejects([](TrainConfig& c) { c.batch_size = 0; });
    rejects([](TrainConfig& c) {
        c.ablation.his_only = true;
        c.ablation.nonhis_only = true;
    });
    rejects([](TrainConfig& c) {
        c.ablation.no_predictive_mask = true;
        c.ablation.gt_predictive_mask = true;
    });
}

TEST_CASE("operator names") {
    for (Composition op : {Composition::subtract, Composition::multiply, Composition::circular_correlation}) {
        CHECK(parse_composition(to_string(op)) == op);
    }
    CHECK(parse_composition("corr") == Composition::circular_correlation);
    CHECK(parse_composition("sub") == Composition::subtract);
    CHECK_THROWS_AS((void)parse_composition("rotate"), ValidationError);
    CHECK(parse_optimizer("adamw") == OptimizerKind::adamw);
    CHECK_THROWS_AS((void)parse_optimizer("sgd"), ValidationError);
}

TEST_CASE("fingerprint tracks shape fields only") {
    const TrainConfig base;
    const std::string f = architecture_fingerprint(base, 10, 2, 5);
    CHECK(f.size() == 8);
    CHECK(architecture_fingerprint(base, 10, 2, 5) == f);
    TrainConfig c = base;
    c.learning_rate = 0.5;
    c.beta = 0.9;
    c.ablation.no_attention_mask = true;
    CHECK(architecture_fingerprint(c, 10, 2, 5) == f);
    c.dim = 100;
    CHECK(architecture_fingerprint(c, 10, 2, 5) != f);
    CHECK(architecture_fingerprint(base, 11, 2, 5) != f);
    CHECK(architecture_fingerprint(base, 10, 3, 5) != f);
    CHECK(architecture_fingerprint(base, 10, 2, 6) != f);
    c = base;
    c.composition = Composition::subtract;
    CHECK(architecture_fingerprint(c, 10, 2, 5) != f);
}

}  // TEST_SUITE
