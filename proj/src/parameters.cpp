#include "amcen/parameters.hpp"

#include <cmath>
#include <cstring>

#include "amcen/errors.hpp"

namespace amcen {

Parameter& ParameterStore::add(const std::string& name, Matrix value) {
    if (params_.count(name) != 0) {
        throw ValidationError("duplicate parameter name: " + name);
    }
    Parameter p;
    p.name = name;
    p.value = std::move(value);
    p.zero_grad();
    return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParameterStore::add_xavier(const std::string& name, Eigen::Index rows,
                                      Eigen::Index cols, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix value(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            value(i, j) = dist(rng);
        }
    }
    return add(name, std::move(value));
}

Parameter& ParameterStore::add_zeros(const std::string& name, Eigen::Index rows,
                                     Eigen::Index cols) {
    return add(name, Matrix::Zero(rows, cols));
}

bool ParameterStore::contains(const std::string& name) const {
    return params_.count(name) != 0;
}

Parameter& ParameterStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw ValidationError("unknown parameter: " + name);
    }
    return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw ValidationError("unknown parameter: " + name);
    }
    return it->second;
}

Matrix& ParameterStore::mutable_value(const std::string& name) {
    Parameter& p = at(name);
    if (p.frozen) {
        throw ContractViolation("attempt to modify frozen parameter " + name);
    }
    return p.value;
}

void ParameterStore::zero_grad() {
    for (auto& [name, p] : params_) {
        p.zero_grad();
    }
}

void ParameterStore::freeze_all_except(const std::vector<std::string>& prefixes) {
    for (auto& [name, p] : params_) {
        bool keep = false;
        for (const auto& prefix : prefixes) {
            if (name.rfind(prefix, 0) == 0) {
                keep = true;
                break;
            }
        }
        p.frozen = !keep;
    }
}

void ParameterStore::unfreeze_all() {
    for (auto& [name, p] : params_) {
        p.frozen = false;
    }
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, p] : params_) {
        out.push_back(name);
    }
    return out;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t total = 0;
    for (const auto& [name, p] : params_) {
        total += static_cast<std::size_t>(p.value.size());
    }
    return total;
}

bool ParameterStore::bitwise_equal(const ParameterStore& other) const {
    if (params_.size() != other.params_.size()) {
        return false;
    }
    auto a = params_.begin();
    auto b = other.params_.begin();
    for (; a != params_.end(); ++a, ++b) {
        const Matrix& x = a->second.value;
        const Matrix& y = b->second.value;
        if (a->first != b->first || x.rows() != y.rows() || x.cols() != y.cols()) {
            return false;
        }
        if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0) {
            return false;
        }
    }
    return true;
}

}  // namespace amcen
