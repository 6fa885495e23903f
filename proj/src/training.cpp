#include "amcen/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <zlib.h>

#include "amcen/errors.hpp"
#include "amcen/evaluation.hpp"

namespace amcen {

TrainingData TrainingData::from_dataset(const Dataset& dataset) {
    TrainingData data;
    data.vocab = dataset.vocab;
    data.sequence = split_snapshots(dataset);
    return data;
}

int TrainingData::last_time(Split split) const {
    const auto range = sequence.time_range(split);
    return range ? range->second : -1;
}

std::vector<Quadruple> both_directions(std::span<const Quadruple> base_facts, int base_relation_count) {
    std::vector<Quadruple> out;
    out.reserve(2 * base_facts.size());
    for (const auto& q : base_facts) {
        out.push_back(q);
    }
    for (const auto& q : base_facts) {
        out.push_back({q.object, inverse_relation(q.relation, base_relation_count), q.subject, q.time});
    }
    return out;
}

Optimizer::Optimizer(ParameterStore& store, std::vector<std::string> names, AdamSettings settings)
    : store_(store), names_(std::move(names)), settings_(settings) {
    moments_.resize(names_.size());
    for (std::size_t i = 0; i < names_.size(); ++i) {
        const Parameter& p = store_.at(names_[i]);
        moments_[i].m = Matrix::Zero(p.value.rows(), p.value.cols());
        moments_[i].v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
}

void Optimizer::step() {
    for (const auto& name : names_) {
        if (store_.at(name).frozen) {
            throw ContractViolation("optimizer step on frozen parameter " + name);
        }
    }
    const AdamSettings& s = settings_;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        Parameter& p = store_.at(names_[i]);
        if (p.grad.size() != p.value.size() || p.grad.isZero(0.0)) {
            continue;
        }
        Moments& mo = moments_[i];
        ++mo.t;
        Matrix g = p.grad;
        if (s.kind == OptimizerKind::adam && s.weight_decay > 0.0) {
            g += s.weight_decay * p.value;
        }
        mo.m = s.beta1 * mo.m + (1.0 - s.beta1) * g;
        mo.v = s.beta2 * mo.v + (1.0 - s.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(mo.t));
        const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(mo.t));
        Matrix& w = store_.mutable_value(names_[i]);
        if (s.kind == OptimizerKind::adamw && s.weight_decay > 0.0) {
            w *= 1.0 - s.learning_rate * s.weight_decay;
        }
        w.array() -= s.learning_rate * (mo.m.array() / c1) /
                     ((mo.v.array() / c2).sqrt() + s.eps);
    }
    ++steps_;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
    j = nlohmann::json{{"epoch", r.epoch}, {"stage", r.stage}, {"loss", r.loss}};
    j["val_mrr"] = r.val_mrr ? nlohmann::json(*r.val_mrr) : nlohmann::json(nullptr);
    if (r.accuracy) {
        j["accuracy"] = *r.accuracy;
    }
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'M', 'C', 'E', 'N', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc_of(const std::vector<double>& payload) {
    uLong crc = crc32(0L, Z_NULL, 0);
    const auto* bytes = reinterpret_cast<const Bytef*>(payload.data());
    std::size_t remaining = payload.size() * sizeof(double);
    while (remaining > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
        crc = crc32(crc, bytes, chunk);
        bytes += chunk;
        remaining -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string Checkpoint::fingerprint() const {
    return architecture_fingerprint(config, entity_count, base_relation_count, time_count);
}

Checkpoint make_checkpoint(const AmcenModel& model, std::string stage, int epoch, nlohmann::json metrics) {
    Checkpoint c;
    c.stage = std::move(stage);
    c.epoch = epoch;
    c.config = model.config();
    c.entity_count = model.entity_count();
    c.base_relation_count = model.base_relation_count();
    c.time_count = model.time_count();
    c.time_limit = model.temporal().time_limit();
    c.metrics = std::move(metrics);
    c.params = model.params();
    return c;
}

AmcenModel restore_model(const Checkpoint& ckpt) {
    AmcenModel model(ckpt.config, ckpt.entity_count, ckpt.base_relation_count, ckpt.time_count);
    model.initialize();
    for (const auto& [name, p] : model.params()) {
        if (!ckpt.params.contains(name)) {
            throw CheckpointError("checkpoint lacks parameter " + name);
        }
        const Parameter& stored = ckpt.params.at(name);
        if (stored.value.rows() != p.value.rows() || stored.value.cols() != p.value.cols()) {
            throw CheckpointError("checkpoint parameter " + name + " has the wrong shape");
        }
    }
    if (ckpt.params.size() != model.params().size()) {
        throw CheckpointError("checkpoint holds parameters this model does not define");
    }
    model.set_params(ckpt.params);
    model.temporal().set_time_limit(ckpt.time_limit);
    return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::vector<double> payload;
    payload.reserve(ckpt.params.scalar_count());
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, p] : ckpt.params) {
        params.push_back({{"name", name},
                          {"rows", p.value.rows()},
                          {"cols", p.value.cols()},
                          {"offset", payload.size()},
                          {"frozen", p.frozen}});
        // column-major, as Eigen stores it
        payload.insert(payload.end(), p.value.data(), p.value.data() + p.value.size());
    }
    const nlohmann::json header{
        {"stage", ckpt.stage},
        {"epoch", ckpt.epoch},
        {"fingerprint", ckpt.fingerprint()},
        {"config", ckpt.config},
        {"entity_count", ckpt.entity_count},
        {"base_relation_count", ckpt.base_relation_count},
        {"time_count", ckpt.time_count},
        {"time_limit", ckpt.time_limit},
        {"metrics", ckpt.metrics},
        {"params", params},
        {"payload_values", payload.size()},
        {"payload_crc32", crc_of(payload)},
    };
    const std::string text = header.dump();
    const std::uint64_t header_len = text.size();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw CheckpointError("cannot write checkpoint " + tmp.string());
        }
        out.write(kMagic, sizeof(kMagic));
        out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
        out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size() * sizeof(double)));
        if (!out) {
            throw CheckpointError("failed writing checkpoint " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_fingerprint, bool force) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    char magic[sizeof(kMagic)];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(path.string() + " is not a checkpoint");
    }
    if (version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    if (header_len > (1u << 30)) {
        throw CheckpointError("checkpoint header is implausibly large");
    }
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw CheckpointError("checkpoint header is truncated");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is corrupt: ") + e.what());
    }

    Checkpoint c;
    std::vector<double> payload;
    try {
        c.stage = header.at("stage").get<std::string>();
        c.epoch = header.at("epoch").get<int>();
        c.config = header.at("config").get<TrainConfig>();
        c.entity_count = header.at("entity_count").get<int>();
        c.base_relation_count = header.at("base_relation_count").get<int>();
        c.time_count = header.at("time_count").get<int>();
        c.time_limit = header.at("time_limit").get<int>();
        c.metrics = header.at("metrics");
        const auto count = header.at("payload_values").get<std::size_t>();
        payload.resize(count);
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in || in.peek() != std::char_traits<char>::eof()) {
            throw CheckpointError("checkpoint payload length does not match its header");
        }
        if (crc_of(payload) != header.at("payload_crc32").get<std::uint32_t>()) {
            throw CheckpointError("checkpoint payload failed its integrity check");
        }
        for (const auto& entry : header.at("params")) {
            const auto rows = entry.at("rows").get<Eigen::Index>();
            const auto cols = entry.at("cols").get<Eigen::Index>();
            const auto offset = entry.at("offset").get<std::size_t>();
            if (rows < 0 || cols < 0 ||
                offset + static_cast<std::size_t>(rows * cols) > payload.size()) {
                throw CheckpointError("checkpoint parameter extends past the payload");
            }
            Matrix value = Eigen::Map<const Matrix>(payload.data() + offset, rows, cols);
            c.params.add(entry.at("name").get<std::string>(), std::move(value)).frozen =
                entry.value("frozen", false);
        }
        if (header.at("fingerprint").get<std::string>() != c.fingerprint()) {
            throw CheckpointError("checkpoint fingerprint does not match its own configuration");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is incomplete: ") + e.what());
    } catch (const ValidationError& e) {
        throw CheckpointError(std::string("checkpoint header is invalid: ") + e.what());
    }
    if (expected_fingerprint && *expected_fingerprint != c.fingerprint() && !force) {
        throw CheckpointError("checkpoint fingerprint " + c.fingerprint() +
                              " differs from the expected " + *expected_fingerprint +
                              " (use --force to load anyway)");
    }
    return c;
}

// ---------------------------------------------------------------------------
// stage 1

namespace {

AdamSettings settings_of(const TrainConfig& c) {
    AdamSettings s;
    s.kind = c.optimizer;
    s.learning_rate = c.learning_rate;
    s.weight_decay = c.weight_decay;
    return s;
}

std::vector<std::string> backbone_names(const ParameterStore& store) {
    std::vector<std::string> out;
    for (const auto& name : store.names()) {
        if (name.rfind(EventClassifier::kClassifierPrefix, 0) != 0) {
            out.push_back(name);
        }
    }
    return out;
}

std::vector<std::string> classifier_names(const ParameterStore& store) {
    std::vector<std::string> out;
    for (const auto& name : store.names()) {
        if (name.rfind(EventClassifier::kClassifierPrefix, 0) == 0) {
            out.push_back(name);
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> shuffled_chunks(std::size_t n, int batch_size, std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> chunks;
    const auto b = static_cast<std::size_t>(batch_size);
    for (std::size_t start = 0; start < n; start += b) {
        chunks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
    }
    return chunks;
}

double stage1_epoch(AmcenModel& model, const TrainingData& data, Optimizer& optimizer,
                    std::mt19937_64& rng) {
    const int last = data.last_time(Split::train);
    HistoryIndex index(model.entity_count(), model.base_relation_count());
    Rollout rollout(model, data.sequence);
    double weighted = 0.0;
    std::size_t seen = 0;
    for (int t = 0; t <= last; ++t) {
        const auto& facts = data.sequence.snapshots[static_cast<std::size_t>(t)];
        const QueryBatch all = QueryBatch::build(both_directions(facts, model.base_relation_count()), index);
        Matrix x_ent;
        Matrix x_rel;
        const auto chunks = shuffled_chunks(all.size(), model.config().batch_size, rng);
        for (std::size_t b = 0; b < chunks.size(); ++b) {
            const QueryBatch batch = all.subset(chunks[b]);
            Tape tape;
            TimeFeatures x = rollout.features(tape, ForwardMode{true, &rng});
            BatchLosses losses = model.losses(tape, x, batch);
            const double value = losses.total.scalar();
            if (!std::isfinite(value)) {
                throw TrainingError("non-finite loss at timestamp " + std::to_string(t) + ", batch " +
                                    std::to_string(b) + " (" + std::to_string(batch.size()) +
                                    " queries)");
            }
            model.params().zero_grad();
            tape.backward(losses.total);
            optimizer.step();
            weighted += value * static_cast<double>(batch.size());
            seen += batch.size();
            if (b + 1 == chunks.size()) {
                x_ent = x.entities.value();
                x_rel = x.relations.value();
            }
        }
        if (chunks.empty()) {
            rollout.step_no_grad();
        } else {
            rollout.advance(x_ent, x_rel);
        }
        index.absorb(t, facts);
    }
    return seen == 0 ? 0.0 : weighted / static_cast<double>(seen);
}

}  // namespace

Checkpoint stage1_train(AmcenModel& model, const TrainingData& data, const TrainingHooks& hooks) {
    const TrainConfig& config = model.config();
    const int last = data.last_time(Split::train);
    if (last < 0) {
        throw DataError("stage 1 needs at least one training timestamp");
    }
    model.temporal().set_time_limit(last);
    model.params().unfreeze_all();
    Optimizer optimizer(model.params(), backbone_names(model.params()), settings_of(config));
    std::mt19937_64 rng(config.seed + 1);

    const bool validate = hooks.select_by_validation && config.validate_every > 0 &&
                          data.last_time(Split::valid) >= 0;
    std::optional<ParameterStore> best;
    double best_mrr = -1.0;
    int best_epoch = config.stage1_epochs;
    double last_loss = 0.0;
    for (int epoch = 1; epoch <= config.stage1_epochs; ++epoch) {
        EpochRecord record;
        record.stage = 1;
        record.epoch = epoch;
        record.loss = stage1_epoch(model, data, optimizer, rng);
        last_loss = record.loss;
        if (validate && (epoch % config.validate_every == 0 || epoch == config.stage1_epochs)) {
            InferenceOptions unmasked;
            unmasked.use_predictive_mask = false;
            const EvaluationResult r = evaluate_split(model, data, Split::valid, unmasked);
            record.val_mrr = r.metrics.get(RankMode::raw, "mean").mrr;
            if (*record.val_mrr > best_mrr) {
                best_mrr = *record.val_mrr;
                best = model.params();
                best_epoch = epoch;
            }
        }
        if (hooks.on_epoch) {
            hooks.on_epoch(record);
        }
    }
    nlohmann::json metrics{{"final_loss", last_loss}};
    if (best) {
        model.set_params(*best);
        metrics["val_mrr"] = best_mrr;
    }
    return make_checkpoint(model, "stage1", best_epoch, std::move(metrics));
}

// ---------------------------------------------------------------------------
// stage 2

Checkpoint stage2_train(AmcenModel& model, const TrainingData& data, const TrainingHooks& hooks) {
    const TrainConfig& config = model.config();
    const int last = data.last_time(Split::train);
    if (last < 0) {
        throw DataError("stage 2 needs at least one training timestamp");
    }
    model.temporal().set_time_limit(last);
    model.params().freeze_all_except({EventClassifier::kClassifierPrefix});

    // representations are fixed once the backbone is frozen
    std::vector<Eigen::RowVectorXd> reps;
    std::vector<int> labels;
    {
        HistoryIndex index(model.entity_count(), model.base_relation_count());
        Rollout rollout(model, data.sequence);
        for (int t = 0; t <= last; ++t) {
            const auto& facts = data.sequence.snapshots[static_cast<std::size_t>(t)];
            Tape tape(false);
            TimeFeatures x = rollout.features(tape, ForwardMode{});
            if (!facts.empty()) {
                const QueryBatch batch =
                    QueryBatch::build(both_directions(facts, model.base_relation_count()), index);
                const Matrix v = model.representation(tape, x, batch).value();
                for (Eigen::Index i = 0; i < v.rows(); ++i) {
                    reps.emplace_back(v.row(i));
                    labels.push_back(batch.labels[static_cast<std::size_t>(i)]);
                }
            }
            rollout.advance(x.entities.value(), x.relations.value());
            index.absorb(t, facts);
        }
    }
    if (reps.empty()) {
        throw DataError("stage 2 found no training queries");
    }

    Optimizer optimizer(model.params(), classifier_names(model.params()), settings_of(config));
    std::mt19937_64 rng(config.seed + 2);
    double last_loss = 0.0;
    double last_accuracy = 0.0;
    const Eigen::Index d = reps.front().size();
    for (int epoch = 1; epoch <= config.stage2_epochs; ++epoch) {
        double weighted = 0.0;
        std::size_t correct = 0;
        for (const auto& chunk : shuffled_chunks(reps.size(), config.batch_size, rng)) {
            Matrix v(static_cast<Eigen::Index>(chunk.size()), d);
            std::vector<int> y;
            y.reserve(chunk.size());
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                v.row(static_cast<Eigen::Index>(i)) = reps[chunk[i]];
                y.push_back(labels[chunk[i]]);
            }
            Tape tape;
            Var logits = model.classifier_logits(tape, tape.constant(std::move(v)));
            Var loss = ad::scale(binary_cross_entropy_with_logits(logits, y),
                                 1.0 / static_cast<double>(chunk.size()));
            if (!std::isfinite(loss.scalar())) {
                throw TrainingError("non-finite classifier loss in epoch " + std::to_string(epoch));
            }
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                const int predicted = logits.value()(static_cast<Eigen::Index>(i), 0) > 0.0 ? 1 : 0;
                correct += predicted == y[i] ? 1 : 0;
            }
            model.params().zero_grad();
            tape.backward(loss);
            optimizer.step();
            weighted += loss.scalar() * static_cast<double>(chunk.size());
        }
        last_loss = weighted / static_cast<double>(reps.size());
        last_accuracy = static_cast<double>(correct) / static_cast<double>(reps.size());
        EpochRecord record;
        record.stage = 2;
        record.epoch = epoch;
        record.loss = last_loss;
        record.accuracy = last_accuracy;
        if (hooks.on_epoch) {
            hooks.on_epoch(record);
        }
    }
    model.params().unfreeze_all();
    return make_checkpoint(model, "stage2", config.stage2_epochs,
                           {{"final_loss", last_loss}, {"train_accuracy", last_accuracy}});
}

}  // namespace amcen
