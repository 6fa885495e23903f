#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace amcen {

using Matrix = Eigen::MatrixXd;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool frozen = false;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Named collection of learnable tensors. Iteration order is the name order,
/// which keeps checkpoints and optimizer state stable across runs.
class ParameterStore {
public:
    Parameter& add(const std::string& name, Matrix value);
    Parameter& add_xavier(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                          std::mt19937_64& rng);
    Parameter& add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);

    [[nodiscard]] bool contains(const std::string& name) const;
    Parameter& at(const std::string& name);
    [[nodiscard]] const Parameter& at(const std::string& name) const;

    /// Mutable access to a value. Throws ContractViolation for frozen entries.
    Matrix& mutable_value(const std::string& name);

    void zero_grad();
    /// Freeze every parameter whose name does not start with one of `prefixes`.
    void freeze_all_except(const std::vector<std::string>& prefixes);
    void unfreeze_all();

    [[nodiscard]] std::vector<std::string> names() const;
    [[nodiscard]] std::size_t size() const { return params_.size(); }
    [[nodiscard]] std::size_t scalar_count() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    [[nodiscard]] auto begin() const { return params_.begin(); }
    [[nodiscard]] auto end() const { return params_.end(); }

    /// Exact equality of every value (names, shapes and bits).
    [[nodiscard]] bool bitwise_equal(const ParameterStore& other) const;

private:
    std::map<std::string, Parameter> params_;
};

}  // namespace amcen
