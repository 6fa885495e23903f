#include <doctest.h>

#include <numeric>
#include <random>

#include "amcen/errors.hpp"
#include "amcen/structural_encoder.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace amcen;

namespace {

TrainConfig encoder_config(int dim, int layers, Composition op = Composition::multiply) {
    TrainConfig c = testing::tiny_config();
    c.dim = dim;
    c.layers = layers;
    c.composition = op;
    return c;
}

struct Encoded {
    Matrix entities;
    Matrix relations;
};

Encoded run(const StructuralEncoder& enc, ParameterStore& store, const SnapshotGraph& g) {
    Tape tape(false);
    const StructuralOutput out = enc.encode(tape, store, g, ForwardMode{});
    return {out.entities.value(), out.relations.value()};
}

SnapshotGraph graph(int entities, int relations, const std::vector<Quadruple>& facts) {
    return SnapshotGraph::from_facts(facts, entities, relations);
}

}  // namespace

TEST_SUITE("structural_encoder") {

TEST_CASE("composition identities") {
    const Eigen::RowVectorXd h = (Eigen::RowVectorXd(4) << 0.5, -1.0, 2.0, 0.25).finished();
    CHECK(compose(h, Eigen::RowVectorXd::Zero(4), Composition::subtract) == h);
    CHECK(compose(h, Eigen::RowVectorXd::Ones(4), Composition::multiply) == h);
    const Eigen::RowVectorXd r = (Eigen::RowVectorXd(4) << 1.0, 2.0, 3.0, 4.0).finished();
    CHECK(compose(h, r, Composition::subtract).isApprox(h - r));
    CHECK(compose(h, r, Composition::multiply).isApprox(h.cwiseProduct(r)));
    CHECK_THROWS_AS((void)compose(h, Eigen::RowVectorXd::Ones(3), Composition::multiply), ValidationError);
}

TEST_CASE("circular correlation agrees with the double loop") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int d : {1, 2, 3, 5, 8}) {
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::RowVectorXd a(d);
            Eigen::RowVectorXd b(d);
            for (int i = 0; i < d; ++i) {
                a(i) = n(rng);
                b(i) = n(rng);
            }
            const auto got = compose(a, b, Composition::circular_correlation);
            CHECK((got - oracle::circular_correlation(a, b)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    const Eigen::RowVectorXd a = (Eigen::RowVectorXd(3) << 1.0, 2.0, 3.0).finished();
    const Eigen::RowVectorXd b = (Eigen::RowVectorXd(3) << 4.0, 5.0, 6.0).finished();
    // k = 0: 1*4 + 2*5 + 3*6, k = 1: 1*5 + 2*6 + 3*4, k = 2: 1*6 + 2*4 + 3*5
    CHECK(compose(a, b, Composition::circular_correlation) ==
          (Eigen::RowVectorXd(3) << 32.0, 29.0, 29.0).finished());
}

TEST_CASE("zero layers return the embedding tables") {
    StructuralEncoder enc(encoder_config(4, 0), 5, 2);
    ParameterStore store;
    std::mt19937_64 rng(1);
    enc.init_params(store, rng);
    const Encoded out = run(enc, store, graph(5, 2, {{0, 0, 1, 0}, {2, 1, 3, 0}}));
    CHECK(out.entities == store.at("entity_embedding").value);
    CHECK(out.relations == store.at("relation_embedding").value);
}

TEST_CASE("a lone self-loop with identity weights is a fixed point") {
    StructuralEncoder enc(encoder_config(3, 1, Composition::subtract), 1, 1);
    ParameterStore store;
    std::mt19937_64 rng(2);
    enc.init_params(store, rng);
    store.at("entity_embedding").value = (Matrix(1, 3) << 0.3, 1.2, 0.7).finished();
    store.at("relation_embedding").value.setRandom();
    store.at("relation_embedding").value.row(2).setZero();  // self-loop relation
    store.at("struct.layer0.w_self").value.setIdentity();
    const Encoded out = run(enc, store, graph(1, 1, {}));
    CHECK(out.entities.isApprox(store.at("entity_embedding").value, 1e-15));
}

TEST_CASE("three nodes and two edges against a hand computation") {
    // edges 0 -r0-> 1 and 1 -r0-> 2, d = 2, multiply composition, one layer
    StructuralEncoder enc(encoder_config(2, 1), 3, 1);
    ParameterStore store;
    std::mt19937_64 rng(3);
    enc.init_params(store, rng);
    const Matrix h = (Matrix(3, 2) << 1.0, 2.0, -1.0, 0.5, 0.5, -0.5).finished();
    const Matrix rel = (Matrix(3, 2) << 2.0, 1.0, -1.0, 3.0, 1.0, 1.0).finished();  // r0, r0^-1, self
    const Matrix wo = (Matrix(2, 2) << 1.0, 0.0, 1.0, 1.0).finished();
    const Matrix wi = (Matrix(2, 2) << 0.0, 1.0, 1.0, 0.0).finished();
    const Matrix ws = (Matrix(2, 2) << 2.0, 0.0, 0.0, 0.5).finished();
    const Matrix wr = (Matrix(2, 2) << 1.0, -1.0, 0.0, 2.0).finished();
    store.at("entity_embedding").value = h;
    store.at("relation_embedding").value = rel;
    store.at("struct.layer0.w_out").value = wo;
    store.at("struct.layer0.w_in").value = wi;
    store.at("struct.layer0.w_self").value = ws;
    store.at("struct.layer0.w_rel").value = wr;

    // node 0: self (1*1, 2*1) ws = (2, 1); out via 1: (-1*2, 0.5*1) wo = (-2+0.5, 0.5) = (-1.5, 0.5)
    //   -> relu(0.5, 1.5)
    // node 1: self (-1, 0.5) ws = (-2, 0.25); out via 2: (1, -0.5) wo = (0.5, -0.5);
    //   in from 0: (1*-1, 2*3) wi = (6, -1) -> relu(4.5, -1.25) = (4.5, 0)
    // node 2: self (0.5, -0.5) ws = (1, -0.25); in from 1: (1, 1.5) wi = (1.5, 1)
    //   -> relu(2.5, 0.75)
    const Matrix expected = (Matrix(3, 2) << 0.5, 1.5, 4.5, 0.0, 2.5, 0.75).finished();
    const Encoded out = run(enc, store, graph(3, 1, {{0, 0, 1, 0}, {1, 0, 2, 0}}));
    CHECK((out.entities - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.relations - rel * wr).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("isolated entities only see their self-loop") {
    StructuralEncoder enc(encoder_config(4, 1), 4, 1);
    ParameterStore store;
    std::mt19937_64 rng(4);
    enc.init_params(store, rng);
    const Encoded with_edge = run(enc, store, graph(4, 1, {{0, 0, 1, 0}}));
    const Encoded empty = run(enc, store, graph(4, 1, {}));
    CHECK(with_edge.entities.row(3) == empty.entities.row(3));
    CHECK(with_edge.entities.row(2) == empty.entities.row(2));
    CHECK(with_edge.entities.row(0) != empty.entities.row(0));
    CHECK(empty.entities.allFinite());
}

TEST_CASE("relabeling entities permutes the output rows") {
    std::mt19937_64 rng(43);
    for (Composition op : {Composition::subtract, Composition::multiply, Composition::circular_correlation}) {
        StructuralEncoder enc(encoder_config(4, 2, op), 7, 3);
        ParameterStore store;
        enc.init_params(store, rng);
        const auto facts = testing::random_facts(rng, 7, 3, 1, 12);
        const Encoded base = run(enc, store, graph(7, 3, facts));

        std::vector<int> perm(7);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Quadruple> relabeled;
        for (const auto& q : facts) {
            relabeled.push_back({perm[static_cast<std::size_t>(q.subject)], q.relation,
                                 perm[static_cast<std::size_t>(q.object)], 0});
        }
        Matrix& emb = store.at("entity_embedding").value;
        const Matrix original = emb;
        for (int e = 0; e < 7; ++e) {
            emb.row(perm[static_cast<std::size_t>(e)]) = original.row(e);
        }
        const Encoded permuted = run(enc, store, graph(7, 3, relabeled));
        for (int e = 0; e < 7; ++e) {
            CHECK((permuted.entities.row(perm[static_cast<std::size_t>(e)]) - base.entities.row(e))
                      .cwiseAbs()
                      .maxCoeff() < 1e-12);
        }
        CHECK(permuted.relations == base.relations);
    }
}

TEST_CASE("entities beyond L hops do not influence a node") {
    // path 0 - 1 - 2 - 3 - 4 - 5
    std::vector<Quadruple> path;
    for (int i = 0; i < 5; ++i) {
        path.push_back({i, 0, i + 1, 0});
    }
    for (int layers : {1, 2, 3}) {
        StructuralEncoder enc(encoder_config(4, layers), 6, 1);
        ParameterStore store;
        std::mt19937_64 rng(static_cast<std::uint64_t>(layers));
        enc.init_params(store, rng);
        const Encoded before = run(enc, store, graph(6, 1, path));
        store.at("entity_embedding").value.row(5).array() += 3.0;
        const Encoded after = run(enc, store, graph(6, 1, path));
        for (int node = 0; node < 6; ++node) {
            if (5 - node > layers) {
                CHECK(after.entities.row(node) == before.entities.row(node));
            }
        }
    }
}

TEST_CASE("gradients of every structural parameter match finite differences") {
    std::mt19937_64 rng(47);
    for (Composition op : {Composition::subtract, Composition::multiply, Composition::circular_correlation}) {
        for (int bases : {0, 2}) {
            TrainConfig c = encoder_config(4, 2, op);
            c.num_bases = bases;
            c.ablation.softmax_activation = bases > 0;
            StructuralEncoder enc(c, 5, 2);
            ParameterStore store;
            enc.init_params(store, rng);
            const SnapshotGraph g = graph(5, 2, {{0, 0, 1, 0}, {1, 1, 2, 0}, {3, 0, 1, 0}, {4, 1, 0, 0}});
            const Matrix ce = Matrix::Random(5, 4);
            const Matrix cr = Matrix::Random(5, 4);
            auto loss = [&](bool backprop) {
                Tape tape(backprop);
                const StructuralOutput out = enc.encode(tape, store, g, ForwardMode{});
                Var l = ad::add(ad::sum(ad::mul_const(out.entities, ce)),
                                ad::sum(ad::mul_const(out.relations, cr)));
                if (backprop) {
                    store.zero_grad();
                    tape.backward(l);
                }
                return l.scalar();
            };
            loss(true);
            for (const auto& name : store.names()) {
                const auto r = oracle::check_gradient(store, name, [&] { return loss(false); });
                INFO(to_string(op) << " bases " << bases << " " << name);
                CHECK(r.relative_error < 1e-4);
            }
        }
    }
}

TEST_CASE("dropout only acts in training mode") {
    TrainConfig c = encoder_config(8, 1);
    c.dropout = 0.5;
    StructuralEncoder enc(c, 4, 1);
    ParameterStore store;
    std::mt19937_64 rng(5);
    enc.init_params(store, rng);
    const SnapshotGraph g = graph(4, 1, {{0, 0, 1, 0}});
    const Encoded eval_a = run(enc, store, g);
    const Encoded eval_b = run(enc, store, g);
    CHECK(eval_a.entities == eval_b.entities);
    Tape tape(false);
    std::mt19937_64 drop(9);
    const StructuralOutput trained = enc.encode(tape, store, g, ForwardMode{true, &drop});
    CHECK(trained.entities.value() != eval_a.entities);
}

TEST_CASE("graph construction validates ids") {
    CHECK_THROWS_AS((void)SnapshotGraph::from_facts(std::vector<Quadruple>{{0, 0, 5, 0}}, 3, 1),
                    ValidationError);
    CHECK_THROWS_AS((void)SnapshotGraph::from_facts(std::vector<Quadruple>{{0, 1, 2, 0}}, 3, 1),
                    ValidationError);
    const SnapshotGraph g = SnapshotGraph::from_facts(std::vector<Quadruple>{{0, 0, 2, 0}}, 3, 1);
    CHECK(g.edge_count() == 1);
    CHECK(g.self_loop_relation() == 2);
}

}  // TEST_SUITE
