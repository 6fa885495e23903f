#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation applied to Vars. Calling backward() on a 1x1
// result walks the records in reverse and accumulates gradients; parameter
// leaves then add their gradient into Parameter::grad. All tensors are 2-D and
// use the row convention (one sample or entity per row).

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "amcen/parameters.hpp"

namespace amcen {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
    [[nodiscard]] double scalar() const { return value()(0, 0); }
    [[nodiscard]] bool requires_grad() const;
    [[nodiscard]] bool valid() const { return tape_ != nullptr; }
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] int id() const { return id_; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix&)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] bool grad_enabled() const { return grad_enabled_; }

    Var constant(Matrix value);
    /// Leaf bound to a parameter. Frozen parameters enter as constants.
    Var parameter(Parameter& p);

    /// Record an op result. `backward` receives the gradient w.r.t. this node.
    Var record(Matrix value, bool requires_grad, Backward backward);

    /// Gradient of a 1x1 root; parameter gradients are added to Parameter::grad.
    void backward(const Var& root);

    [[nodiscard]] const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    [[nodiscard]] bool requires_grad(int id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }
    /// Add `delta` into the gradient of node `id` (no-op for constants).
    void accumulate(int id, const Matrix& delta);
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool requires_grad = false;
        Parameter* param = nullptr;
    };

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_ids_;
    bool grad_enabled_;
};

namespace ad {

bool any_requires_grad(std::initializer_list<Var> vars);

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_bt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double c);
/// Adds a 1 x cols row to every row of `a`.
Var add_row(const Var& a, const Var& row);
/// Elementwise product with a constant matrix (dropout masks, indicator weights).
Var mul_const(const Var& a, const Matrix& c);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var row_softmax(const Var& a);
Var hcat(std::span<const Var> parts);
Var col_slice(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, std::span<const int> rows);
/// out(rows[i]) += a(i); out has `out_rows` rows.
Var scatter_add_rows(const Var& a, std::span<const int> rows, Eigen::Index out_rows);
/// Row-wise circular correlation: out(i,k) = sum_j a(i,j) * b(i,(j+k) mod d).
Var circular_correlation(const Var& a, const Var& b);
/// Constant sparse matrix times a variable.
Var sparse_matmul(const SparseMatrix& s, const Var& b);
Var sum(const Var& a);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(double c, const Var& a);

}  // namespace ad
}  // namespace amcen
