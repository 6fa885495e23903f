#pragma once

#include <random>
#include <span>
#include <vector>

#include "amcen/autograd.hpp"
#include "amcen/config.hpp"
#include "amcen/dataset.hpp"

namespace amcen {

/// Entity/relation combination used inside graph messages.
[[nodiscard]] Eigen::RowVectorXd compose(const Eigen::RowVectorXd& entity,
                                         const Eigen::RowVectorXd& relation, Composition op);

/// Batched, differentiable variant over matching rows.
[[nodiscard]] Var compose(const Var& entities, const Var& relations, Composition op);

/// Base edges of one snapshot. Inverse edges (o, r + |R|, s) and one self-loop
/// per entity (relation id 2|R|) are implied.
struct SnapshotGraph {
    int entity_count = 0;
    int base_relation_count = 0;
    std::vector<int> subjects;
    std::vector<int> relations;
    std::vector<int> objects;

    [[nodiscard]] static SnapshotGraph from_facts(std::span<const Quadruple> base_facts,
                                                  int entity_count, int base_relation_count);
    [[nodiscard]] std::size_t edge_count() const { return subjects.size(); }
    [[nodiscard]] int self_loop_relation() const { return 2 * base_relation_count; }
};

/// Dropout switch for a forward pass. rng may be null when training is false.
struct ForwardMode {
    bool training = false;
    std::mt19937_64* rng = nullptr;
};

struct StructuralOutput {
    Var entities;   // |E| x d
    Var relations;  // (2|R| + 1) x d, last row is the self-loop relation
};

/// Multi-relational graph convolution with composition (CompGCN-style).
/// Parameters live in a ParameterStore under the "struct." prefix:
///   entity_embedding, relation_embedding (or relation_basis/relation_coeff),
///   struct.layer<l>.{w_out, w_in, w_self, w_rel}.
class StructuralEncoder {
public:
    StructuralEncoder(const TrainConfig& config, int entity_count, int base_relation_count);

    void init_params(ParameterStore& store, std::mt19937_64& rng) const;

    /// Layer-0 tables h^0 (no propagation).
    [[nodiscard]] StructuralOutput initial(Tape& tape, ParameterStore& store) const;

    /// L rounds of relation-typed message passing over one snapshot.
    [[nodiscard]] StructuralOutput encode(Tape& tape, ParameterStore& store,
                                          const SnapshotGraph& graph, ForwardMode mode) const;

    [[nodiscard]] int layers() const { return layers_; }

private:
    Var dropout(const Var& x, ForwardMode mode) const;

    int entity_count_;
    int base_relation_count_;
    int dim_;
    int layers_;
    int num_bases_;
    double dropout_;
    Composition composition_;
    bool softmax_activation_;
};

}  // namespace amcen
