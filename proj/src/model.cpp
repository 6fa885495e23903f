#include "amcen/model.hpp"

#include <algorithm>

#include "amcen/errors.hpp"

namespace amcen {

QueryBatch QueryBatch::build(std::span<const Quadruple> queries, const HistoryIndex& index) {
    QueryBatch batch;
    batch.queries.assign(queries.begin(), queries.end());
    batch.labels.reserve(queries.size());
    batch.historical.reserve(queries.size());
    batch.frequencies.reserve(queries.size());
    for (const auto& q : queries) {
        batch.frequencies.push_back(index.sparse_frequency(q.subject, q.relation, q.time));
        std::vector<int> hist;
        hist.reserve(batch.frequencies.back().size());
        int label = 0;
        for (const auto& [o, c] : batch.frequencies.back()) {
            hist.push_back(o);
            if (o == q.object) {
                label = 1;
            }
        }
        batch.historical.push_back(std::move(hist));
        batch.labels.push_back(label);
    }
    return batch;
}

QueryBatch QueryBatch::subset(std::span<const std::size_t> rows) const {
    QueryBatch out;
    for (std::size_t r : rows) {
        out.queries.push_back(queries.at(r));
        out.labels.push_back(labels.at(r));
        out.historical.push_back(historical.at(r));
        out.frequencies.push_back(frequencies.at(r));
    }
    return out;
}

std::vector<int> QueryBatch::targets() const {
    std::vector<int> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        out.push_back(q.object);
    }
    return out;
}

AmcenModel::AmcenModel(TrainConfig config, int entity_count, int base_relation_count,
                       int time_count)
    : config_(std::move(config)),
      entity_count_(entity_count),
      base_relation_count_(base_relation_count),
      time_count_(time_count),
      structural_(config_, entity_count, base_relation_count),
      temporal_(config_, entity_count, time_count),
      classifier_(config_.dim, config_.dim) {
    config_.validate();
    if (entity_count <= 0 || base_relation_count <= 0) {
        throw ValidationError("model needs at least one entity and one relation");
    }
}

void AmcenModel::initialize() {
    std::mt19937_64 rng(config_.seed);
    params_ = ParameterStore{};
    structural_.init_params(params_, rng);
    temporal_.init_params(params_, rng);
    params_.add_xavier("decoder.w_q", 2 * config_.dim, config_.dim, rng);
    params_.add_xavier("decoder.w_k", config_.dim, config_.dim, rng);
    classifier_.init_params(params_, rng);
}

void AmcenModel::set_ablation(const AblationFlags& flags) {
    TrainConfig c = config_;
    c.ablation = flags;
    set_config(c);
}

void AmcenModel::set_config(const TrainConfig& config) {
    config.validate();
    if (architecture_fingerprint(config, entity_count_, base_relation_count_, time_count_) !=
        fingerprint()) {
        throw ContractViolation("set_config: new settings change parameter shapes");
    }
    const int limit = temporal_.time_limit();
    config_ = config;
    structural_ = StructuralEncoder(config_, entity_count_, base_relation_count_);
    temporal_ = TemporalEncoder(config_, entity_count_, time_count_);
    temporal_.set_time_limit(limit);
}

std::string AmcenModel::fingerprint() const {
    return architecture_fingerprint(config_, entity_count_, base_relation_count_, time_count_);
}

StructuralOutput AmcenModel::structure(Tape& tape, const SnapshotGraph* previous, ForwardMode mode) {
    if (previous == nullptr) {
        return structural_.initial(tape, params_);
    }
    return structural_.encode(tape, params_, *previous, mode);
}

TimeFeatures AmcenModel::temporal_step(Tape& tape, const StructuralOutput& z_prev,
                                       std::span<const Var> entity_window,
                                       std::span<const Var> relation_window) {
    return {temporal_.step(tape, params_, "entity", z_prev.entities, entity_window),
            temporal_.step(tape, params_, "relation", z_prev.relations, relation_window)};
}

TimeFeatures AmcenModel::unrolled_features(Tape& tape, const SnapshotSequence& seq, int t,
                                           ForwardMode mode) {
    if (t < 0) {
        throw ValidationError("unrolled_features: negative time");
    }
    std::vector<Var> ent_window;
    std::vector<Var> rel_window;
    const auto capacity = static_cast<std::size_t>(config_.window);
    TimeFeatures x;
    for (int k = 0; k <= t; ++k) {
        StructuralOutput z;
        if (k == 0) {
            z = structure(tape, nullptr, mode);
        } else {
            const SnapshotGraph g = snapshot_graph(seq, k - 1, entity_count_, base_relation_count_);
            z = structure(tape, &g, mode);
        }
        x = temporal_step(tape, z, ent_window, rel_window);
        ent_window.insert(ent_window.begin(), x.entities);
        rel_window.insert(rel_window.begin(), x.relations);
        if (ent_window.size() > capacity) {
            ent_window.pop_back();
            rel_window.pop_back();
        }
    }
    return x;
}

namespace {

std::vector<int> column(const QueryBatch& batch, int Quadruple::*field) {
    std::vector<int> out;
    out.reserve(batch.size());
    for (const auto& q : batch.queries) {
        out.push_back(q.*field);
    }
    return out;
}

}  // namespace

Var AmcenModel::logits(Tape& tape, const TimeFeatures& x, const QueryBatch& batch) {
    Var xs = ad::gather_rows(x.entities, column(batch, &Quadruple::subject));
    Var xr = ad::gather_rows(x.relations, column(batch, &Quadruple::relation));
    return similarity_logits(xs, xr, x.entities, tape.parameter(params_.at("decoder.w_q")),
                             tape.parameter(params_.at("decoder.w_k")));
}

Var AmcenModel::local_pattern(Tape& tape, const TimeFeatures& x, const QueryBatch& batch) {
    const Var parts[] = {ad::gather_rows(x.entities, column(batch, &Quadruple::subject)),
                         ad::gather_rows(x.relations, column(batch, &Quadruple::relation)),
                         temporal_.time_embeddings(tape, params_, column(batch, &Quadruple::time))};
    return ad::hcat(parts);
}

Var AmcenModel::global_pattern(Tape& tape, const QueryBatch& batch) {
    return temporal_.global_features(tape, params_, frequency_rows(batch.frequencies, entity_count_));
}

Var AmcenModel::representation(Tape& tape, const TimeFeatures& x, const QueryBatch& batch) {
    Var v = classifier_.representation(tape, params_, local_pattern(tape, x, batch),
                                       global_pattern(tape, batch));
    return config_.normalize_contrastive ? normalize_rows(v) : v;
}

Var AmcenModel::classifier_logits(Tape& tape, const Var& representation) {
    return classifier_.logits(tape, params_, representation);
}

BranchLossOptions AmcenModel::branch_options() const {
    BranchLossOptions o;
    o.historical = !config_.ablation.nonhis_only;
    o.nonhistorical = !config_.ablation.his_only;
    o.no_mask = config_.ablation.no_attention_mask;
    o.post_softmax = config_.ablation.post_softmax_mask;
    return o;
}

BatchLosses AmcenModel::losses(Tape& tape, const TimeFeatures& x, const QueryBatch& batch) {
    if (batch.empty()) {
        throw ValidationError("losses: empty batch");
    }
    const double n = static_cast<double>(batch.size());
    const std::vector<int> targets = batch.targets();
    BatchLosses out;
    out.ranking = ad::scale(dual_branch_loss(logits(tape, x, batch), batch.historical, targets,
                                             batch.labels, branch_options()),
                            1.0 / n);
    const double lambda = config_.lambda;
    if (lambda < 1.0 && batch.size() >= 2) {
        out.contrastive = ad::scale(
            contrastive_loss(representation(tape, x, batch), batch.labels, config_.temperature),
            1.0 / n);
        out.total = ad::add(ad::scale(out.ranking, lambda), ad::scale(out.contrastive, 1.0 - lambda));
    } else {
        out.contrastive = tape.constant(Matrix::Zero(1, 1));
        out.total = ad::scale(out.ranking, lambda);
    }
    return out;
}

Rollout::Rollout(AmcenModel& model, const SnapshotSequence& seq)
    : model_(model), seq_(seq), state_(model.config().window) {}

void Rollout::reset() {
    state_.clear();
    time_ = 0;
}

TimeFeatures Rollout::features(Tape& tape, ForwardMode mode) {
    StructuralOutput z;
    if (time_ == 0) {
        z = model_.structure(tape, nullptr, mode);
    } else {
        const SnapshotGraph g = snapshot_graph(seq_, time_ - 1, model_.entity_count(),
                                               model_.base_relation_count());
        z = model_.structure(tape, &g, mode);
    }
    std::vector<Var> ent;
    std::vector<Var> rel;
    for (int i = 0; i < state_.entities.size(); ++i) {
        ent.push_back(tape.constant(state_.entities[i]));
        rel.push_back(tape.constant(state_.relations[i]));
    }
    return model_.temporal_step(tape, z, ent, rel);
}

void Rollout::advance(const Matrix& entities, const Matrix& relations) {
    state_.entities.push(entities);
    state_.relations.push(relations);
    ++time_;
}

std::pair<Matrix, Matrix> Rollout::step_no_grad() {
    Tape tape(false);
    TimeFeatures x = features(tape, ForwardMode{});
    std::pair<Matrix, Matrix> out{x.entities.value(), x.relations.value()};
    advance(out.first, out.second);
    return out;
}

SnapshotGraph snapshot_graph(const SnapshotSequence& seq, int t, int entity_count,
                             int base_relation_count) {
    if (t < 0 || t >= seq.time_count()) {
        return SnapshotGraph::from_facts({}, entity_count, base_relation_count);
    }
    return SnapshotGraph::from_facts(seq.snapshots[static_cast<std::size_t>(t)], entity_count,
                                     base_relation_count);
}

}  // namespace amcen
