#include "mga/tensor.hpp"

#include <numeric>
#include <sstream>

namespace mga::nn {

namespace {

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, bool requires_grad) : shape_(std::move(shape)) {
    std::size_t n = shape_product(shape_);
    data_ = std::make_shared<std::vector<double>>(n, 0.0);
    if (requires_grad) set_requires_grad(true);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    Tensor t;
    std::size_t n = shape_product(shape);
    if (n != values.size()) {
        std::ostringstream os;
        os << "Tensor::from: shape wants " << n << " values, got " << values.size();
        throw ShapeError(os.str());
    }
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(std::move(values));
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

double Tensor::value() const {
    if (!data_ || data_->size() != 1) {
        throw ShapeError("Tensor::value: not a scalar (" + shape_str() + ")");
    }
    return (*data_)[0];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_) {
        grad_ = std::make_shared<std::vector<double>>(data_ ? data_->size() : 0, 0.0);
    }
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ',';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

void Tape::backward(Tensor& loss) {
    if (!grad_enabled_) throw NumericError("Tape::backward on a no-grad tape");
    if (loss.size() != 1) {
        throw ShapeError("Tape::backward: loss must be scalar, got " + loss.shape_str());
    }
    if (!loss.requires_grad()) {
        throw NumericError("Tape::backward: loss does not depend on any trainable input");
    }
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape, bool decay) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(Param{name, Tensor(std::move(shape), true), true, decay});
    return params_.back().tensor;
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

Tensor& ParamStore::tensor(const std::string& name) {
    Param* p = find(name);
    if (!p) throw ConfigError("unknown parameter: " + name);
    return p->tensor;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void ParamStore::set_trainable(bool on) {
    for (auto& p : params_) {
        p.trainable = on;
        p.tensor.set_requires_grad(on);
    }
}

bool ParamStore::any_trainable() const {
    for (const auto& p : params_)
        if (p.trainable) return true;
    return false;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

}  // namespace mga::nn
