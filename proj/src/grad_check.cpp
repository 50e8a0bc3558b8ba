#include "mga/grad_check.hpp"

#include <cmath>
#include <sstream>

#include "mga/errors.hpp"

namespace mga::nn {

GradCheckResult grad_check(const std::function<Tensor(Tape&)>& loss_fn,
                           std::vector<ParamStore*> stores, double h) {
    if (!(h >= 1e-6 && h <= 1e-3)) {
        throw ConfigError("grad_check: h must lie in [1e-6, 1e-3]");
    }

    // analytic pass
    for (ParamStore* s : stores) s->zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape tape(true);
        Tensor loss = loss_fn(tape);
        if (!std::isfinite(loss.value())) throw NumericError("grad_check: non-finite loss");
        tape.backward(loss);
    }
    for (ParamStore* s : stores) {
        for (Param& p : s->all()) {
            if (!p.trainable) continue;
            analytic.emplace_back(p.tensor.grad(), p.tensor.grad() + p.tensor.size());
        }
    }

    auto eval = [&]() {
        Tape tape(false);
        return loss_fn(tape).value();
    };

    GradCheckResult res;
    std::size_t pi = 0;
    for (ParamStore* s : stores) {
        for (Param& p : s->all()) {
            if (!p.trainable) continue;
            double* x = p.tensor.data();
            for (std::size_t i = 0; i < p.tensor.size(); ++i) {
                double saved = x[i];
                x[i] = saved + h;
                double fp = eval();
                x[i] = saved - h;
                double fm = eval();
                x[i] = saved;
                if (!std::isfinite(fp) || !std::isfinite(fm)) {
                    std::ostringstream os;
                    os << "grad_check: non-finite loss at " << p.name << "[" << i << "]";
                    throw NumericError(os.str());
                }
                double numeric = (fp - fm) / (2.0 * h);
                double rel = std::abs(analytic[pi][i] - numeric) /
                             std::max(1.0, std::abs(numeric));
                if (rel > res.max_rel_error) {
                    res.max_rel_error = rel;
                    res.worst_param = p.name;
                    res.worst_index = static_cast<int>(i);
                }
            }
            ++pi;
        }
    }
    return res;
}

}  // namespace mga::nn
