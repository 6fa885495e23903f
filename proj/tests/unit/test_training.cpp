#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "amcen/errors.hpp"
#include "amcen/evaluation.hpp"
#include "amcen/training.hpp"
#include "fixtures.hpp"

using namespace amcen;
using namespace amcen::testing;

namespace {

// Scalar Adam written out longhand for the optimizer comparison.
struct ScalarAdam {
    double m = 0.0;
    double v = 0.0;
    int t = 0;

    double step(double w, double g, const AdamSettings& s) {
        ++t;
        if (s.kind == OptimizerKind::adam) {
            g += s.weight_decay * w;
        } else {
            w *= 1.0 - s.learning_rate * s.weight_decay;
        }
        m = s.beta1 * m + (1.0 - s.beta1) * g;
        v = s.beta2 * v + (1.0 - s.beta2) * g * g;
        const double mh = m / (1.0 - std::pow(s.beta1, t));
        const double vh = v / (1.0 - std::pow(s.beta2, t));
        return w - s.learning_rate * mh / (std::sqrt(vh) + s.eps);
    }
};

std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// The shared fixture settings with short epoch budgets.
TrainConfig short_config() {
    TrainConfig c = fixture_config();
    c.stage1_epochs = 3;
    c.stage2_epochs = 5;
    return c;
}

AmcenModel fresh_model(const TrainConfig& c, const TrainingData& data) {
    AmcenModel model(c, data.vocab.entity_count, data.vocab.base_relation_count, data.vocab.time_count);
    model.initialize();
    return model;
}

Matrix probe_logits(AmcenModel& model, const TrainingData& data, int t) {
    Tape tape(false);
    const TimeFeatures x = model.unrolled_features(tape, data.sequence, t, ForwardMode{});
    HistoryIndex index(model.entity_count(), model.base_relation_count());
    for (int k = 0; k < t; ++k) {
        index.absorb(k, data.sequence.snapshots[static_cast<std::size_t>(k)]);
    }
    const auto& facts = data.sequence.snapshots[static_cast<std::size_t>(t)];
    const QueryBatch batch = QueryBatch::build(both_directions(facts, model.base_relation_count()), index);
    return model.logits(tape, x, batch).value();
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("adam and adamw follow the scalar recurrence") {
    for (OptimizerKind kind : {OptimizerKind::adam, OptimizerKind::adamw}) {
        AdamSettings s;
        s.kind = kind;
        s.learning_rate = 0.1;
        s.weight_decay = 0.5;
        ParameterStore store;
        store.add("w", (Matrix(1, 2) << 1.0, -3.0).finished());
        Optimizer opt(store, {"w"}, s);
        ScalarAdam a;
        ScalarAdam b;
        double w0 = 1.0;
        double w1 = -3.0;
        const double grads[][2] = {{2.0, 0.5}, {-1.0, 0.25}, {0.3, -4.0}};
        for (const auto& g : grads) {
            store.at("w").grad << g[0], g[1];
            opt.step();
            w0 = a.step(w0, g[0], s);
            w1 = b.step(w1, g[1], s);
            CHECK(store.at("w").value(0, 0) == doctest::Approx(w0).epsilon(1e-14));
            CHECK(store.at("w").value(0, 1) == doctest::Approx(w1).epsilon(1e-14));
        }
        CHECK(opt.steps() == 3);
    }
    // the two kinds part ways on the first step already
    AdamSettings s;
    s.learning_rate = 0.1;
    s.weight_decay = 0.5;
    ScalarAdam coupled;
    s.kind = OptimizerKind::adam;
    const double a = coupled.step(1.0, 2.0, s);
    ScalarAdam decoupled;
    s.kind = OptimizerKind::adamw;
    const double b = decoupled.step(1.0, 2.0, s);
    CHECK(a == doctest::Approx(0.9));
    CHECK(b == doctest::Approx(0.85));
}

TEST_CASE("unused parameters are left alone") {
    ParameterStore store;
    store.add("used", Matrix::Ones(2, 2));
    store.add("idle", Matrix::Ones(2, 2));
    AdamSettings s;
    s.weight_decay = 0.1;
    Optimizer opt(store, {"used", "idle"}, s);
    store.zero_grad();
    store.at("used").grad.setConstant(1.0);
    opt.step();
    CHECK(store.at("idle").value == Matrix::Ones(2, 2));
    CHECK((store.at("used").value.array() < 1.0).all());
}

TEST_CASE("stepping a frozen parameter is a contract violation") {
    ParameterStore store;
    store.add("a", Matrix::Ones(1, 1));
    store.add("b", Matrix::Ones(1, 1));
    Optimizer opt(store, {"a", "b"}, AdamSettings{});
    store.at("a").grad.setOnes();
    store.at("b").frozen = true;
    CHECK_THROWS_AS(opt.step(), ContractViolation);
    CHECK(store.at("a").value(0, 0) == 1.0);
}

TEST_CASE("epoch records serialize to json") {
    EpochRecord r;
    r.stage = 1;
    r.epoch = 4;
    r.loss = 0.25;
    nlohmann::json j = r;
    CHECK(j["epoch"] == 4);
    CHECK(j["loss"] == 0.25);
    CHECK(j["val_mrr"].is_null());
    CHECK_FALSE(j.contains("accuracy"));
    r.val_mrr = 0.5;
    r.accuracy = 0.75;
    j = r;
    CHECK(j["val_mrr"] == 0.5);
    CHECK(j["accuracy"] == 0.75);
}

TEST_CASE("both directions lists object then inverse subject queries") {
    const std::vector<Quadruple> facts = {{0, 1, 2, 5}, {3, 0, 4, 5}};
    const auto q = both_directions(facts, 3);
    REQUIRE(q.size() == 4);
    CHECK(q[0] == facts[0]);
    CHECK(q[2] == Quadruple{2, 4, 0, 5});
    CHECK(q[3] == Quadruple{4, 3, 3, 5});
}

TEST_CASE("checkpoint round trip restores an identical model") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    AmcenModel model = fresh_model(short_config(), data);
    model.temporal().set_time_limit(12);
    TempDir dir("ckpt");
    const Checkpoint ckpt = make_checkpoint(model, "stage1", 3, {{"final_loss", 1.5}});
    save_checkpoint(ckpt, dir / "m.ckpt");
    CHECK_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));

    const Checkpoint back = load_checkpoint(dir / "m.ckpt", model.fingerprint());
    CHECK(back.stage == "stage1");
    CHECK(back.epoch == 3);
    CHECK(back.config == model.config());
    CHECK(back.time_limit == 12);
    CHECK(back.metrics["final_loss"] == 1.5);
    CHECK(back.params.bitwise_equal(model.params()));

    AmcenModel restored = restore_model(back);
    CHECK(restored.temporal().time_limit() == 12);
    CHECK(probe_logits(restored, data, 5) == probe_logits(model, data, 5));
}

TEST_CASE("damaged checkpoints are refused") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    AmcenModel model = fresh_model(short_config(), data);
    TempDir dir("ckpt-bad");
    const auto good = dir / "good.ckpt";
    save_checkpoint(make_checkpoint(model, "stage1", 1), good);
    const std::vector<char> bytes = read_bytes(good);

    auto refused = [&](std::vector<char> damaged) {
        const auto p = dir / "bad.ckpt";
        write_bytes(p, damaged);
        CHECK_THROWS_AS((void)load_checkpoint(p), CheckpointError);
    };
    {
        auto b = bytes;
        b[b.size() - 3] ^= 0x10;  // inside the last parameter value
        refused(b);
    }
    {
        auto b = bytes;
        b.resize(b.size() - 8);
        refused(b);
    }
    {
        auto b = bytes;
        b.push_back('x');
        refused(b);
    }
    {
        auto b = bytes;
        b[0] = 'X';
        refused(b);
    }
    {
        auto b = bytes;
        b[8] = 9;  // version
        refused(b);
    }
    refused({});
    CHECK_THROWS_AS((void)load_checkpoint(dir / "missing.ckpt"), CheckpointError);
    CHECK_NOTHROW((void)load_checkpoint(good));
}

TEST_CASE("a checkpoint for another architecture needs force") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    AmcenModel model = fresh_model(short_config(), data);
    TempDir dir("ckpt-fp");
    save_checkpoint(make_checkpoint(model, "stage2", 1), dir / "m.ckpt");
    TrainConfig other = short_config();
    other.dim = 32;
    const std::string expected = architecture_fingerprint(other, 20, 4, 30);
    CHECK_THROWS_AS((void)load_checkpoint(dir / "m.ckpt", expected), CheckpointError);
    CHECK_NOTHROW((void)load_checkpoint(dir / "m.ckpt", expected, true));
}

TEST_CASE("restore refuses mismatched parameter sets") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    AmcenModel model = fresh_model(short_config(), data);
    Checkpoint c = make_checkpoint(model, "stage1", 1);
    c.params.add("stray", Matrix::Zero(1, 1));
    CHECK_THROWS_AS((void)restore_model(c), CheckpointError);
    Checkpoint shape = make_checkpoint(model, "stage1", 1);
    shape.params.at("classifier.w1").value = Matrix::Zero(3, 3);
    CHECK_THROWS_AS((void)restore_model(shape), CheckpointError);
}

TEST_CASE("stage 1 is deterministic for a seed and lowers the loss") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    TrainConfig c = short_config();
    c.stage1_epochs = 5;
    c.dropout = 0.2;
    std::vector<double> losses;
    TrainingHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) {
        CHECK(r.stage == 1);
        CHECK(r.epoch == static_cast<int>(losses.size()) + 1);
        losses.push_back(r.loss);
    };
    AmcenModel a = fresh_model(c, data);
    const Checkpoint ca = stage1_train(a, data, hooks);
    REQUIRE(losses.size() == 5);
    CHECK(losses.back() < losses.front());
    CHECK(ca.stage == "stage1");
    CHECK(ca.metrics["final_loss"] == losses.back());
    CHECK(a.temporal().time_limit() == 29);

    AmcenModel b = fresh_model(c, data);
    (void)stage1_train(b, data);
    CHECK(a.params().bitwise_equal(b.params()));

    c.seed = 8;
    AmcenModel other = fresh_model(c, data);
    (void)stage1_train(other, data);
    CHECK_FALSE(a.params().bitwise_equal(other.params()));
}

TEST_CASE("stage 1 leaves the classifier head untouched") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    TrainConfig c = short_config();
    c.stage1_epochs = 1;
    AmcenModel model = fresh_model(c, data);
    const ParameterStore before = model.params();
    (void)stage1_train(model, data);
    for (const auto& [name, p] : model.params()) {
        const bool head = name.rfind(EventClassifier::kClassifierPrefix, 0) == 0;
        CHECK_MESSAGE((p.value == before.at(name).value) == head, name);
    }
}

TEST_CASE("with lambda = 1 the contrastive projection never moves") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    TrainConfig c = short_config();
    c.stage1_epochs = 1;
    c.lambda = 1.0;
    AmcenModel model = fresh_model(c, data);
    const ParameterStore before = model.params();
    (void)stage1_train(model, data);
    for (const auto& [name, p] : model.params()) {
        if (name.rfind("contrastive.", 0) == 0) {
            CHECK_MESSAGE(p.value == before.at(name).value, name);
        }
    }
    CHECK_FALSE(model.params().at("decoder.w_q").value == before.at("decoder.w_q").value);
}

TEST_CASE("a non-finite loss stops stage 1") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    TrainConfig c = short_config();
    c.stage1_epochs = 1;
    AmcenModel model = fresh_model(c, data);
    model.params().at("decoder.w_q").value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS((void)stage1_train(model, data), TrainingError);
}

TEST_CASE("stage 1 keeps the epoch with the best validation score") {
    Dataset ds = recurrence_fixture();
    std::vector<Quadruple> train;
    for (const auto& q : ds.train) {
        (q.time < 24 ? train : q.time < 27 ? ds.valid : ds.test).push_back(q);
    }
    ds.train = train;
    const TrainingData data = TrainingData::from_dataset(ds);
    TrainConfig c = short_config();
    c.stage1_epochs = 4;
    c.validate_every = 1;
    std::vector<double> mrr;
    TrainingHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) {
        REQUIRE(r.val_mrr.has_value());
        mrr.push_back(*r.val_mrr);
    };
    AmcenModel model = fresh_model(c, data);
    const Checkpoint ckpt = stage1_train(model, data, hooks);
    REQUIRE(mrr.size() == 4);
    const auto best = std::max_element(mrr.begin(), mrr.end());
    CHECK(ckpt.epoch == static_cast<int>(best - mrr.begin()) + 1);
    CHECK(ckpt.metrics["val_mrr"] == *best);
    CHECK(ckpt.params.bitwise_equal(model.params()));
    CHECK(model.temporal().time_limit() == 23);

    InferenceOptions unmasked;
    unmasked.use_predictive_mask = false;
    const double again = evaluate_split(model, data, Split::valid, unmasked).metrics.get(RankMode::raw, "mean").mrr;
    CHECK(again == doctest::Approx(*best).epsilon(1e-12));

    hooks.select_by_validation = false;
    mrr.clear();
    hooks.on_epoch = [&](const EpochRecord& r) { CHECK_FALSE(r.val_mrr.has_value()); };
    AmcenModel plain = fresh_model(c, data);
    CHECK_FALSE(stage1_train(plain, data, hooks).metrics.contains("val_mrr"));
}

TEST_CASE("stage 2 changes only the classifier head") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    TrainConfig c = short_config();
    c.stage1_epochs = 2;
    AmcenModel model = fresh_model(c, data);
    (void)stage1_train(model, data);
    const ParameterStore before = model.params();
    const Checkpoint ckpt = stage2_train(model, data);
    CHECK(ckpt.stage == "stage2");
    ParameterStore backbone = model.params();
    ParameterStore reference = before;
    for (const auto& name : before.names()) {
        const bool head = name.rfind(EventClassifier::kClassifierPrefix, 0) == 0;
        if (head) {
            CHECK_FALSE(model.params().at(name).value == before.at(name).value);
            backbone.at(name).value.setZero();
            reference.at(name).value.setZero();
        }
        CHECK_FALSE(model.params().at(name).frozen);
    }
    CHECK(backbone.bitwise_equal(reference));
}

TEST_CASE("stage 2 learns the recurrence pattern") {
    const TrainingData data = TrainingData::from_dataset(recurrence_fixture());
    TrainConfig c = short_config();
    c.stage1_epochs = 10;
    c.stage2_epochs = 20;
    AmcenModel model = fresh_model(c, data);
    (void)stage1_train(model, data);
    std::vector<double> accuracy;
    TrainingHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) {
        CHECK(r.stage == 2);
        REQUIRE(r.accuracy.has_value());
        accuracy.push_back(*r.accuracy);
    };
    const Checkpoint ckpt = stage2_train(model, data, hooks);
    REQUIRE(accuracy.size() == 20);
    CHECK(ckpt.metrics["train_accuracy"] == accuracy.back());
    CHECK(accuracy.back() >= 0.95);
}

TEST_CASE("training needs a training split") {
    Dataset ds;
    ds.test = {{0, 0, 1, 0}};
    ds.vocab = build_vocabulary(ds.train, ds.valid, ds.test);
    const TrainingData data = TrainingData::from_dataset(ds);
    AmcenModel model = fresh_model(short_config(), data);
    CHECK_THROWS_AS((void)stage1_train(model, data), DataError);
    CHECK_THROWS_AS((void)stage2_train(model, data), DataError);
}

}  // TEST_SUITE
