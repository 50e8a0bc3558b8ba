#include "mga/optim.hpp"

#include <cmath>

#include "mga/errors.hpp"

namespace mga::nn {

Adam::Adam(std::vector<ParamStore*> stores, AdamConfig cfg)
    : stores_(std::move(stores)), cfg_(cfg) {}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (ParamStore* store : stores_) {
        for (Param& p : store->all()) {
            if (!p.trainable) continue;
            State& st = state_[p.name];
            if (st.m.empty()) {
                st.m.assign(p.tensor.size(), 0.0);
                st.v.assign(p.tensor.size(), 0.0);
            }
            double* x = p.tensor.data();
            const double* g = p.tensor.grad();
            for (std::size_t i = 0; i < p.tensor.size(); ++i) {
                double gi = g[i];
                if (p.decay && cfg_.weight_decay != 0.0) gi += cfg_.weight_decay * x[i];
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
                double mhat = st.m[i] / bc1;
                double vhat = st.v[i] / bc2;
                x[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }
}

void Adam::zero_grad() {
    for (ParamStore* store : stores_) store->zero_grad();
}

void init_xavier(Tensor& w, Rng& rng) {
    if (w.ndim() != 2) throw ShapeError("init_xavier: expected 2-D weight");
    double a = std::sqrt(6.0 / (w.dim(0) + w.dim(1)));
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
}

void init_normal(Tensor& w, Rng& rng, double sigma) {
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, sigma);
}

void init_linear_default(Tensor& w, Tensor& b, Rng& rng) {
    if (w.ndim() != 2) throw ShapeError("init_linear_default: expected 2-D weight");
    double bound = 1.0 / std::sqrt(static_cast<double>(w.dim(0)));
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-bound, bound);
}

}  // namespace mga::nn
