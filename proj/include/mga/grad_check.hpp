#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mga/tensor.hpp"

namespace mga::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    int worst_index = -1;
};

// Central-difference verification of the tape's analytic gradients.
//
// loss_fn must rebuild the forward pass from the current parameter values on
// the given tape and return the scalar loss. It has to be deterministic
// (fix dropout masks / run eval mode) and twice differentiable at the current
// point; callers can consult Tape::kink_margin() to reject draws that land
// too close to a relu kink.
//
// Returns max over parameter coordinates of
//   |analytic - central_difference| / max(1, |central_difference|).
GradCheckResult grad_check(const std::function<Tensor(Tape&)>& loss_fn,
                           std::vector<ParamStore*> stores, double h);

}  // namespace mga::nn
