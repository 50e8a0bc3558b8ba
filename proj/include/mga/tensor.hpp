#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mga/errors.hpp"

namespace mga::nn {

// Dense row-major tensor of 64-bit reals. Value-semantic handle over shared
// storage: copies alias the same buffer, so tapes can capture inputs cheaply.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, bool requires_grad = false);

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return data_ != nullptr; }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_ ? data_->size() : 0; }

    // 2-D accessors (1-D tensors behave as a single column)
    int rows() const { return shape_.empty() ? 0 : shape_[0]; }
    int cols() const { return shape_.size() >= 2 ? shape_[1] : 1; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }
    double* grad() { return grad_ ? grad_->data() : nullptr; }
    const double* grad() const { return grad_ ? grad_->data() : nullptr; }

    double at(int i) const { return (*data_)[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const {
        return (*data_)[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) +
                        static_cast<std::size_t>(j)];
    }
    double& at(int i) { return (*data_)[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) {
        return (*data_)[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) +
                        static_cast<std::size_t>(j)];
    }

    double value() const;  // scalar convenience, throws unless size()==1

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on);
    void zero_grad();

    std::vector<double> to_vector() const { return *data_; }
    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<std::vector<double>> grad_;
    bool requires_grad_ = false;
};

// Reverse-mode tape. Ops append backward closures in forward order; backward
// replays them in reverse, which is a valid topological order by construction.
// Gradient accumulation is additive over fan-out.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    void record(std::function<void()> fn) {
        if (grad_enabled_) nodes_.push_back(std::move(fn));
    }

    void backward(Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }

    // Kinked ops (relu) report how close any input came to their
    // non-differentiable point; finite-difference harnesses use this to
    // reject draws that violate grad_check's smoothness precondition.
    void note_kink_margin(double m) {
        if (m < kink_margin_) kink_margin_ = m;
    }
    double kink_margin() const { return kink_margin_; }

private:
    bool grad_enabled_;
    std::vector<std::function<void()>> nodes_;
    double kink_margin_ = std::numeric_limits<double>::infinity();
};

struct Param {
    std::string name;
    Tensor tensor;
    bool trainable = true;
    bool decay = false;  // weight matrices only; biases/norm/token params are not decayed
};

// Named trainable tensors for one model component. Deque keeps references
// stable across create() calls.
class ParamStore {
public:
    Tensor& create(const std::string& name, std::vector<int> shape, bool decay = false);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    Tensor& tensor(const std::string& name);

    std::deque<Param>& all() { return params_; }
    const std::deque<Param>& all() const { return params_; }

    void zero_grad();
    void set_trainable(bool on);
    bool any_trainable() const;
    std::size_t scalar_count() const;

private:
    std::deque<Param> params_;
};

}  // namespace mga::nn
