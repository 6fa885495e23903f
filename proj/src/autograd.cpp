#include "amcen/autograd.hpp"

#include <cmath>

#include "amcen/errors.hpp"

namespace amcen {

const Matrix& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::parameter(Parameter& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) {
        return {this, it->second};
    }
    const bool trainable = grad_enabled_ && !p.frozen;
    Node node;
    node.value = p.value;
    node.requires_grad = trainable;
    node.param = trainable ? &p : nullptr;
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(&p, id);
    return {this, id};
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad && grad_enabled_;
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Matrix& delta) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) {
        return;
    }
    if (node.grad.size() == 0) {
        node.grad = delta;
    } else {
        node.grad += delta;
    }
}

void Tape::backward(const Var& root) {
    if (root.rows() != 1 || root.cols() != 1) {
        throw ValidationError("backward() needs a scalar root");
    }
    if (!root.requires_grad()) {
        return;
    }
    accumulate(root.id(), Matrix::Ones(1, 1));
    for (int id = root.id(); id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.grad.size() == 0) {
            continue;
        }
        if (node.backward) {
            node.backward(*this, node.grad);
        }
        if (node.param != nullptr) {
            node.param->grad += node.grad;
        }
    }
}

namespace ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ValidationError(std::string(op) + ": shape mismatch");
    }
}

}  // namespace

bool any_requires_grad(std::initializer_list<Var> vars) {
    for (const auto& v : vars) {
        if (v.requires_grad()) {
            return true;
        }
    }
    return false;
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        throw ValidationError("matmul: inner dimension mismatch");
    }
    Tape& tape = a.tape();
    const int ia = a.id();
    const int ib = b.id();
    return tape.record(a.value() * b.value(), any_requires_grad({a, b}),
                       [ia, ib](Tape& t, const Matrix& g) {
                           if (t.requires_grad(ia)) {
                               t.accumulate(ia, g * t.value(ib).transpose());
                           }
                           if (t.requires_grad(ib)) {
                               t.accumulate(ib, t.value(ia).transpose() * g);
                           }
                       });
}

Var matmul_bt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) {
        throw ValidationError("matmul_bt: inner dimension mismatch");
    }
    Tape& tape = a.tape();
    const int ia = a.id();
    const int ib = b.id();
    return tape.record(a.value() * b.value().transpose(), any_requires_grad({a, b}),
                       [ia, ib](Tape& t, const Matrix& g) {
                           if (t.requires_grad(ia)) {
                               t.accumulate(ia, g * t.value(ib));
                           }
                           if (t.requires_grad(ib)) {
                               t.accumulate(ib, g.transpose() * t.value(ia));
                           }
                       });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    const int ia = a.id();
    const int ib = b.id();
    return a.tape().record(a.value() + b.value(), any_requires_grad({a, b}),
                           [ia, ib](Tape& t, const Matrix& g) {
                               t.accumulate(ia, g);
                               t.accumulate(ib, g);
                           });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    const int ia = a.id();
    const int ib = b.id();
    return a.tape().record(a.value() - b.value(), any_requires_grad({a, b}),
                           [ia, ib](Tape& t, const Matrix& g) {
                               t.accumulate(ia, g);
                               if (t.requires_grad(ib)) {
                                   t.accumulate(ib, -g);
                               }
                           });
}

Var hadamard(const Var& a, const Var& b) {
    require_same_shape(a, b, "hadamard");
    const int ia = a.id();
    const int ib = b.id();
    return a.tape().record(a.value().cwiseProduct(b.value()), any_requires_grad({a, b}),
                           [ia, ib](Tape& t, const Matrix& g) {
                               if (t.requires_grad(ia)) {
                                   t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                               }
                               if (t.requires_grad(ib)) {
                                   t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                               }
                           });
}

Var scale(const Var& a, double c) {
    const int ia = a.id();
    return a.tape().record(c * a.value(), a.requires_grad(),
                           [ia, c](Tape& t, const Matrix& g) { t.accumulate(ia, c * g); });
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ValidationError("add_row: bias must be 1 x cols");
    }
    const int ia = a.id();
    const int ir = row.id();
    Matrix out = a.value().rowwise() + row.value().row(0);
    return a.tape().record(std::move(out), any_requires_grad({a, row}),
                           [ia, ir](Tape& t, const Matrix& g) {
                               t.accumulate(ia, g);
                               if (t.requires_grad(ir)) {
                                   t.accumulate(ir, g.colwise().sum());
                               }
                           });
}

Var mul_const(const Var& a, const Matrix& c) {
    if (a.rows() != c.rows() || a.cols() != c.cols()) {
        throw ValidationError("mul_const: shape mismatch");
    }
    const int ia = a.id();
    return a.tape().record(a.value().cwiseProduct(c), a.requires_grad(),
                           [ia, c](Tape& t, const Matrix& g) {
                               t.accumulate(ia, g.cwiseProduct(c));
                           });
}

Var relu(const Var& a) {
    const int ia = a.id();
    Matrix out = a.value().cwiseMax(0.0);
    return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(ia);
        t.accumulate(ia, (x.array() > 0.0).select(g, 0.0));
    });
}

Var tanh(const Var& a) {
    Matrix out = a.value().array().tanh().matrix();
    const int ia = a.id();
    Tape& tape = a.tape();
    const int out_id = static_cast<int>(tape.size());
    return tape.record(std::move(out), a.requires_grad(),
                       [ia, out_id](Tape& t, const Matrix& g) {
                           const Matrix& y = t.value(out_id);
                           t.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
                       });
}

Var sigmoid(const Var& a) {
    Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    const int ia = a.id();
    Tape& tape = a.tape();
    const int out_id = static_cast<int>(tape.size());
    return tape.record(std::move(out), a.requires_grad(),
                       [ia, out_id](Tape& t, const Matrix& g) {
                           const Matrix& y = t.value(out_id);
                           t.accumulate(ia, g.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
                       });
}

Var row_softmax(const Var& a) {
    Matrix out = a.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double m = out.row(i).maxCoeff();
        out.row(i) = (out.row(i).array() - m).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    const int ia = a.id();
    Tape& tape = a.tape();
    const int out_id = static_cast<int>(tape.size());
    return tape.record(std::move(out), a.requires_grad(),
                       [ia, out_id](Tape& t, const Matrix& g) {
                           const Matrix& y = t.value(out_id);
                           Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
                           Matrix dx = y.cwiseProduct(g - dots.replicate(1, g.cols()));
                           t.accumulate(ia, dx);
                       });
}

Var hcat(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ValidationError("hcat: no inputs");
    }
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            throw ValidationError("hcat: row count mismatch");
        }
        cols += p.cols();
        needs_grad = needs_grad || p.requires_grad();
    }
    Matrix out(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> layout;
    Eigen::Index offset = 0;
    for (const auto& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        layout.emplace_back(p.id(), p.cols());
        offset += p.cols();
    }
    return parts.front().tape().record(std::move(out), needs_grad,
                                       [layout](Tape& t, const Matrix& g) {
                                           Eigen::Index off = 0;
                                           for (const auto& [id, c] : layout) {
                                               if (t.requires_grad(id)) {
                                                   t.accumulate(id, g.middleCols(off, c));
                                               }
                                               off += c;
                                           }
                                       });
}

Var col_slice(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw ValidationError("col_slice: range out of bounds");
    }
    const int ia = a.id();
    const Eigen::Index rows = a.rows();
    const Eigen::Index cols = a.cols();
    return a.tape().record(a.value().middleCols(start, count), a.requires_grad(),
                           [ia, rows, cols, start, count](Tape& t, const Matrix& g) {
                               Matrix full = Matrix::Zero(rows, cols);
                               full.middleCols(start, count) = g;
                               t.accumulate(ia, full);
                           });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
    const Matrix& src = a.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= src.rows()) {
            throw ValidationError("gather_rows: index out of range");
        }
        out.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
    }
    const int ia = a.id();
    const Eigen::Index src_rows = src.rows();
    std::vector<int> idx(rows.begin(), rows.end());
    return a.tape().record(std::move(out), a.requires_grad(),
                           [ia, src_rows, idx = std::move(idx)](Tape& t, const Matrix& g) {
                               Matrix dx = Matrix::Zero(src_rows, g.cols());
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                   dx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                               }
                               t.accumulate(ia, dx);
                           });
}

Var scatter_add_rows(const Var& a, std::span<const int> rows, Eigen::Index out_rows) {
    if (static_cast<Eigen::Index>(rows.size()) != a.rows()) {
        throw ValidationError("scatter_add_rows: one target row per input row required");
    }
    const Matrix& src = a.value();
    Matrix out = Matrix::Zero(out_rows, src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= out_rows) {
            throw ValidationError("scatter_add_rows: index out of range");
        }
        out.row(rows[i]) += src.row(static_cast<Eigen::Index>(i));
    }
    const int ia = a.id();
    std::vector<int> idx(rows.begin(), rows.end());
    return a.tape().record(std::move(out), a.requires_grad(),
                           [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
                               Matrix dx(static_cast<Eigen::Index>(idx.size()), g.cols());
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                   dx.row(static_cast<Eigen::Index>(i)) = g.row(idx[i]);
                               }
                               t.accumulate(ia, dx);
                           });
}

Var circular_correlation(const Var& a, const Var& b) {
    require_same_shape(a, b, "circular_correlation");
    const Matrix& x = a.value();
    const Matrix& y = b.value();
    const Eigen::Index d = x.cols();
    Matrix out = Matrix::Zero(x.rows(), d);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index k = 0; k < d; ++k) {
            double acc = 0.0;
            for (Eigen::Index i = 0; i < d; ++i) {
                acc += x(r, i) * y(r, (i + k) % d);
            }
            out(r, k) = acc;
        }
    }
    const int ia = a.id();
    const int ib = b.id();
    return a.tape().record(std::move(out), any_requires_grad({a, b}),
                           [ia, ib, d](Tape& t, const Matrix& g) {
                               const Matrix& xv = t.value(ia);
                               const Matrix& yv = t.value(ib);
                               Matrix dx = Matrix::Zero(xv.rows(), d);
                               Matrix dy = Matrix::Zero(yv.rows(), d);
                               for (Eigen::Index r = 0; r < xv.rows(); ++r) {
                                   for (Eigen::Index k = 0; k < d; ++k) {
                                       const double gk = g(r, k);
                                       for (Eigen::Index i = 0; i < d; ++i) {
                                           const Eigen::Index j = (i + k) % d;
                                           dx(r, i) += gk * yv(r, j);
                                           dy(r, j) += gk * xv(r, i);
                                       }
                                   }
                               }
                               t.accumulate(ia, dx);
                               t.accumulate(ib, dy);
                           });
}

Var sparse_matmul(const SparseMatrix& s, const Var& b) {
    if (s.cols() != b.rows()) {
        throw ValidationError("sparse_matmul: inner dimension mismatch");
    }
    const int ib = b.id();
    Matrix out = s * b.value();
    return b.tape().record(std::move(out), b.requires_grad(),
                           [ib, s](Tape& t, const Matrix& g) {
                               t.accumulate(ib, s.transpose() * g);
                           });
}

Var sum(const Var& a) {
    const int ia = a.id();
    const Eigen::Index rows = a.rows();
    const Eigen::Index cols = a.cols();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape().record(std::move(out), a.requires_grad(),
                           [ia, rows, cols](Tape& t, const Matrix& g) {
                               t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
                           });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(double c, const Var& a) { return scale(a, c); }

}  // namespace ad
}  // namespace amcen
