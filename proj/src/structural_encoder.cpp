#include "amcen/structural_encoder.hpp"

#include "amcen/errors.hpp"

namespace amcen {

Eigen::RowVectorXd compose(const Eigen::RowVectorXd& entity, const Eigen::RowVectorXd& relation,
                           Composition op) {
    if (entity.size() != relation.size()) {
        throw ValidationError("compose: dimension mismatch");
    }
    Tape tape(false);
    return compose(tape.constant(entity), tape.constant(relation), op).value().row(0);
}

Var compose(const Var& entities, const Var& relations, Composition op) {
    if (entities.rows() != relations.rows() || entities.cols() != relations.cols()) {
        throw ValidationError("compose: dimension mismatch");
    }
    switch (op) {
        case Composition::subtract: return ad::sub(entities, relations);
        case Composition::multiply: return ad::hadamard(entities, relations);
        case Composition::circular_correlation: return ad::circular_correlation(entities, relations);
    }
    throw ValidationError("compose: unknown operator");
}

SnapshotGraph SnapshotGraph::from_facts(std::span<const Quadruple> base_facts, int entity_count,
                                        int base_relation_count) {
    SnapshotGraph g;
    g.entity_count = entity_count;
    g.base_relation_count = base_relation_count;
    g.subjects.reserve(base_facts.size());
    g.relations.reserve(base_facts.size());
    g.objects.reserve(base_facts.size());
    for (const auto& q : base_facts) {
        if (q.subject < 0 || q.subject >= entity_count || q.object < 0 || q.object >= entity_count) {
            throw ValidationError("snapshot graph: entity id out of range");
        }
        if (q.relation < 0 || q.relation >= base_relation_count) {
            throw ValidationError("snapshot graph: expects base relation ids");
        }
        g.subjects.push_back(q.subject);
        g.relations.push_back(q.relation);
        g.objects.push_back(q.object);
    }
    return g;
}

StructuralEncoder::StructuralEncoder(const TrainConfig& config, int entity_count,
                                     int base_relation_count)
    : entity_count_(entity_count),
      base_relation_count_(base_relation_count),
      dim_(config.dim),
      layers_(config.layers),
      num_bases_(config.num_bases),
      dropout_(config.dropout),
      composition_(config.composition),
      softmax_activation_(config.ablation.softmax_activation) {}

void StructuralEncoder::init_params(ParameterStore& store, std::mt19937_64& rng) const {
    const int relation_rows = 2 * base_relation_count_ + 1;
    store.add_xavier("entity_embedding", entity_count_, dim_, rng);
    if (num_bases_ > 0) {
        store.add_xavier("relation_basis", num_bases_, dim_, rng);
        store.add_xavier("relation_coeff", relation_rows, num_bases_, rng);
    } else {
        store.add_xavier("relation_embedding", relation_rows, dim_, rng);
    }
    for (int l = 0; l < layers_; ++l) {
        const std::string prefix = "struct.layer" + std::to_string(l) + ".";
        store.add_xavier(prefix + "w_out", dim_, dim_, rng);
        store.add_xavier(prefix + "w_in", dim_, dim_, rng);
        store.add_xavier(prefix + "w_self", dim_, dim_, rng);
        store.add_xavier(prefix + "w_rel", dim_, dim_, rng);
    }
}

StructuralOutput StructuralEncoder::initial(Tape& tape, ParameterStore& store) const {
    StructuralOutput out;
    out.entities = tape.parameter(store.at("entity_embedding"));
    if (num_bases_ > 0) {
        out.relations = ad::matmul(tape.parameter(store.at("relation_coeff")),
                                   tape.parameter(store.at("relation_basis")));
    } else {
        out.relations = tape.parameter(store.at("relation_embedding"));
    }
    return out;
}

Var StructuralEncoder::dropout(const Var& x, ForwardMode mode) const {
    if (!mode.training || dropout_ <= 0.0 || mode.rng == nullptr) {
        return x;
    }
    std::bernoulli_distribution keep(1.0 - dropout_);
    Matrix mask(x.rows(), x.cols());
    const double scale = 1.0 / (1.0 - dropout_);
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
        for (Eigen::Index i = 0; i < mask.rows(); ++i) {
            mask(i, j) = keep(*mode.rng) ? scale : 0.0;
        }
    }
    return ad::mul_const(x, mask);
}

StructuralOutput StructuralEncoder::encode(Tape& tape, ParameterStore& store,
                                           const SnapshotGraph& graph, ForwardMode mode) const {
    if (graph.entity_count != entity_count_ || graph.base_relation_count != base_relation_count_) {
        throw ValidationError("encode: graph vocabulary does not match the encoder");
    }
    StructuralOutput h = initial(tape, store);
    if (layers_ == 0) {
        return h;
    }

    std::vector<int> inverse_relations(graph.relations.size());
    for (std::size_t i = 0; i < graph.relations.size(); ++i) {
        inverse_relations[i] = graph.relations[i] + base_relation_count_;
    }
    const std::vector<int> self_loops(static_cast<std::size_t>(entity_count_),
                                      graph.self_loop_relation());
    const bool has_edges = graph.edge_count() > 0;

    for (int l = 0; l < layers_; ++l) {
        const std::string prefix = "struct.layer" + std::to_string(l) + ".";
        Var w_out = tape.parameter(store.at(prefix + "w_out"));
        Var w_in = tape.parameter(store.at(prefix + "w_in"));
        Var w_self = tape.parameter(store.at(prefix + "w_self"));
        Var w_rel = tape.parameter(store.at(prefix + "w_rel"));

        // self-loop branch reaches every entity, so isolated nodes stay defined
        Var self_msg = ad::matmul(
            compose(h.entities, ad::gather_rows(h.relations, self_loops), composition_), w_self);
        Var total = dropout(self_msg, mode);

        if (has_edges) {
            // outgoing edge (s, r, o): s receives phi(h_o, h_r) W_O
            Var out_msg = ad::matmul(compose(ad::gather_rows(h.entities, graph.objects),
                                             ad::gather_rows(h.relations, graph.relations),
                                             composition_),
                                     w_out);
            // implied inverse edge (o, r^-1, s): o receives phi(h_s, h_{r^-1}) W_I
            Var in_msg = ad::matmul(compose(ad::gather_rows(h.entities, graph.subjects),
                                            ad::gather_rows(h.relations, inverse_relations),
                                            composition_),
                                    w_in);
            total = ad::add(total, ad::scatter_add_rows(dropout(out_msg, mode), graph.subjects,
                                                        entity_count_));
            total = ad::add(total, ad::scatter_add_rows(dropout(in_msg, mode), graph.objects,
                                                        entity_count_));
        }

        Var activated = ad::relu(total);
        if (softmax_activation_) {
            activated = ad::row_softmax(activated);
        }
        h.entities = activated;
        h.relations = ad::matmul(h.relations, w_rel);
    }
    return h;
}

}  // namespace amcen
