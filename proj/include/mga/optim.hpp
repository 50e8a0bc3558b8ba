#pragma once

#include <unordered_map>
#include <vector>

#include "mga/rng.hpp"
#include "mga/tensor.hpp"

namespace mga::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // L2 added to the gradient, applied to decay-flagged params
};

class Adam {
public:
    Adam(std::vector<ParamStore*> stores, AdamConfig cfg);

    void step();
    void zero_grad();

    AdamConfig& config() { return cfg_; }

private:
    struct State {
        std::vector<double> m, v;
    };
    std::vector<ParamStore*> stores_;
    AdamConfig cfg_;
    long t_ = 0;
    std::unordered_map<std::string, State> state_;
};

// Xavier-uniform init for a [fan_in, fan_out] weight matrix.
void init_xavier(Tensor& w, Rng& rng);
void init_normal(Tensor& w, Rng& rng, double sigma);
// Framework-default linear init: weight and bias uniform in +-1/sqrt(fan_in).
void init_linear_default(Tensor& w, Tensor& b, Rng& rng);

}  // namespace mga::nn
