#include "mga/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mga::nn {

namespace {

using usize = std::size_t;

void require(bool ok, const std::string& op, Tensor a, Tensor b) {
    if (!ok) {
        throw ShapeError(op + ": incompatible shapes " + a.shape_str() + " and " +
                         b.shape_str());
    }
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

bool wants_grad(Tape& tp, Tensor a) { return tp.grad_enabled() && a.requires_grad(); }
bool wants_grad(Tape& tp, Tensor a, Tensor b) {
    return tp.grad_enabled() && (a.requires_grad() || b.requires_grad());
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<usize>(i) * static_cast<usize>(k);
        double* c = C + static_cast<usize>(i) * static_cast<usize>(n);
        for (int p = 0; p < k; ++p) {
            double av = a[p];
            const double* b = B + static_cast<usize>(p) * static_cast<usize>(n);
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<usize>(i) * static_cast<usize>(k);
        double* c = C + static_cast<usize>(i) * static_cast<usize>(n);
        for (int j = 0; j < n; ++j) {
            const double* b = B + static_cast<usize>(j) * static_cast<usize>(k);
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[p] * b[p];
            c[j] += s;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
void mm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double* a = A + static_cast<usize>(p) * static_cast<usize>(m);
        const double* b = B + static_cast<usize>(p) * static_cast<usize>(n);
        for (int i = 0; i < m; ++i) {
            double av = a[i];
            double* c = C + static_cast<usize>(i) * static_cast<usize>(n);
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

Tensor make_out(Tape& tp, std::vector<int> shape, bool grad) {
    return Tensor(std::move(shape), tp.grad_enabled() && grad);
}

}  // namespace

Tensor matmul(Tape& tp, Tensor a, Tensor b) {
    require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul", a, b);
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_out(tp, {m, n}, a.requires_grad() || b.requires_grad());
    mm_nn_acc(a.data(), b.data(), out.data(), m, k, n);
    if (out.requires_grad()) {
        tp.record([a, b, out, m, k, n]() mutable {
            if (a.requires_grad()) mm_nt_acc(out.grad(), b.data(), a.grad(), m, n, k);
            if (b.requires_grad()) mm_tn_acc(a.data(), out.grad(), b.grad(), k, m, n);
        });
    }
    return out;
}

Tensor matmul_nt(Tape& tp, Tensor a, Tensor b) {
    require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(1), "matmul_nt", a, b);
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out = make_out(tp, {m, n}, a.requires_grad() || b.requires_grad());
    mm_nt_acc(a.data(), b.data(), out.data(), m, k, n);
    if (out.requires_grad()) {
        tp.record([a, b, out, m, k, n]() mutable {
            // dA += dC * B ; dB += dC^T * A
            if (a.requires_grad()) mm_nn_acc(out.grad(), b.data(), a.grad(), m, n, k);
            if (b.requires_grad()) mm_tn_acc(out.grad(), a.data(), b.grad(), n, m, k);
        });
    }
    return out;
}

Tensor add(Tape& tp, Tensor a, Tensor b) {
    require(a.shape() == b.shape(), "add", a, b);
    Tensor out = make_out(tp, a.shape(), a.requires_grad() || b.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.requires_grad()) {
        tp.record([a, b, out]() mutable {
            for (usize i = 0; i < out.size(); ++i) {
                double g = out.grad()[i];
                if (a.requires_grad()) a.grad()[i] += g;
                if (b.requires_grad()) b.grad()[i] += g;
            }
        });
    }
    return out;
}

Tensor sub(Tape& tp, Tensor a, Tensor b) {
    require(a.shape() == b.shape(), "sub", a, b);
    Tensor out = make_out(tp, a.shape(), a.requires_grad() || b.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (out.requires_grad()) {
        tp.record([a, b, out]() mutable {
            for (usize i = 0; i < out.size(); ++i) {
                double g = out.grad()[i];
                if (a.requires_grad()) a.grad()[i] += g;
                if (b.requires_grad()) b.grad()[i] -= g;
            }
        });
    }
    return out;
}

Tensor mul(Tape& tp, Tensor a, Tensor b) {
    require(a.shape() == b.shape(), "mul", a, b);
    Tensor out = make_out(tp, a.shape(), a.requires_grad() || b.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.requires_grad()) {
        tp.record([a, b, out]() mutable {
            for (usize i = 0; i < out.size(); ++i) {
                double g = out.grad()[i];
                if (a.requires_grad()) a.grad()[i] += g * b.data()[i];
                if (b.requires_grad()) b.grad()[i] += g * a.data()[i];
            }
        });
    }
    return out;
}

Tensor add_rowvec(Tape& tp, Tensor a, Tensor b) {
    require(a.ndim() == 2 && b.ndim() == 1 && a.dim(1) == b.dim(0), "add_rowvec", a, b);
    int m = a.dim(0), n = a.dim(1);
    Tensor out = make_out(tp, {m, n}, a.requires_grad() || b.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.at(i, j) = a.at(i, j) + b.at(j);
    if (out.requires_grad()) {
        tp.record([a, b, out, m, n]() mutable {
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    double g = out.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                                          static_cast<usize>(j)];
                    if (a.requires_grad())
                        a.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                                 static_cast<usize>(j)] += g;
                    if (b.requires_grad()) b.grad()[j] += g;
                }
            }
        });
    }
    return out;
}

Tensor scale(Tape& tp, Tensor a, double c) {
    Tensor out = make_out(tp, a.shape(), a.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
    if (out.requires_grad()) {
        tp.record([a, out, c]() mutable {
            for (usize i = 0; i < out.size(); ++i) a.grad()[i] += out.grad()[i] * c;
        });
    }
    return out;
}

Tensor add_const(Tape& tp, Tensor a, double c) {
    Tensor out = make_out(tp, a.shape(), a.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c;
    if (out.requires_grad()) {
        tp.record([a, out]() mutable {
            for (usize i = 0; i < out.size(); ++i) a.grad()[i] += out.grad()[i];
        });
    }
    return out;
}

Tensor mul_scalar(Tape& tp, Tensor a, Tensor s) {
    require(s.size() == 1, "mul_scalar: scalar operand must have size 1, got " + s.shape_str());
    double sv = s.data()[0];
    Tensor out = make_out(tp, a.shape(), a.requires_grad() || s.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * sv;
    if (out.requires_grad()) {
        tp.record([a, s, out, sv]() mutable {
            double ds = 0.0;
            for (usize i = 0; i < out.size(); ++i) {
                double g = out.grad()[i];
                if (a.requires_grad()) a.grad()[i] += g * sv;
                ds += g * a.data()[i];
            }
            if (s.requires_grad()) s.grad()[0] += ds;
        });
    }
    return out;
}

Tensor relu(Tape& tp, Tensor a) {
    Tensor out = make_out(tp, a.shape(), a.requires_grad());
    double margin = std::numeric_limits<double>::infinity();
    for (usize i = 0; i < a.size(); ++i) {
        double v = a.data()[i];
        margin = std::min(margin, std::abs(v));
        out.data()[i] = v > 0.0 ? v : 0.0;
    }
    if (a.size() > 0) tp.note_kink_margin(margin);
    if (out.requires_grad()) {
        tp.record([a, out]() mutable {
            for (usize i = 0; i < out.size(); ++i)
                if (a.data()[i] > 0.0) a.grad()[i] += out.grad()[i];
        });
    }
    return out;
}

Tensor exp_elem(Tape& tp, Tensor a) {
    Tensor out = make_out(tp, a.shape(), a.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = std::exp(a.data()[i]);
    if (out.requires_grad()) {
        tp.record([a, out]() mutable {
            for (usize i = 0; i < out.size(); ++i)
                a.grad()[i] += out.grad()[i] * out.data()[i];
        });
    }
    return out;
}

Tensor softplus(Tape& tp, Tensor a) {
    Tensor out = make_out(tp, a.shape(), a.requires_grad());
    for (usize i = 0; i < a.size(); ++i) {
        double x = a.data()[i];
        out.data()[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    if (out.requires_grad()) {
        tp.record([a, out]() mutable {
            for (usize i = 0; i < out.size(); ++i) {
                double x = a.data()[i];
                double sig = 1.0 / (1.0 + std::exp(-x));
                a.grad()[i] += out.grad()[i] * sig;
            }
        });
    }
    return out;
}

Tensor square(Tape& tp, Tensor a) {
    Tensor out = make_out(tp, a.shape(), a.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * a.data()[i];
    if (out.requires_grad()) {
        tp.record([a, out]() mutable {
            for (usize i = 0; i < out.size(); ++i)
                a.grad()[i] += 2.0 * out.grad()[i] * a.data()[i];
        });
    }
    return out;
}

Tensor dropout(Tape& tp, Tensor a, const std::vector<double>& mask) {
    require(mask.size() == a.size(), "dropout: mask size mismatch");
    Tensor out = make_out(tp, a.shape(), a.requires_grad());
    for (usize i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * mask[i];
    if (out.requires_grad()) {
        tp.record([a, out, mask]() mutable {
            for (usize i = 0; i < out.size(); ++i) a.grad()[i] += out.grad()[i] * mask[i];
        });
    }
    return out;
}

Tensor layer_norm(Tape& tp, Tensor x, Tensor gamma, Tensor beta,
                  double eps) {
    require(x.ndim() == 2, "layer_norm: x must be 2-D, got " + x.shape_str());
    require(gamma.ndim() == 1 && gamma.dim(0) == x.dim(1), "layer_norm", x, gamma);
    require(beta.ndim() == 1 && beta.dim(0) == x.dim(1), "layer_norm", x, beta);
    require(eps > 0.0, "layer_norm: eps must be positive");
    int m = x.dim(0), n = x.dim(1);
    bool grad = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor out = make_out(tp, {m, n}, grad);
    // keep normalized activations and inv-std for the backward pass
    auto xhat = std::make_shared<std::vector<double>>(static_cast<usize>(m) *
                                                      static_cast<usize>(n));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<usize>(m));
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x.at(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= n;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<usize>(i)] = is;
        for (int j = 0; j < n; ++j) {
            double h = (x.at(i, j) - mean) * is;
            (*xhat)[static_cast<usize>(i) * static_cast<usize>(n) + static_cast<usize>(j)] = h;
            out.at(i, j) = gamma.at(j) * h + beta.at(j);
        }
    }
    if (out.requires_grad()) {
        tp.record([x, gamma, beta, out, xhat, inv_std, m, n]() mutable {
            for (int i = 0; i < m; ++i) {
                const double* h = xhat->data() + static_cast<usize>(i) * static_cast<usize>(n);
                const double* go = out.grad() + static_cast<usize>(i) * static_cast<usize>(n);
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (int j = 0; j < n; ++j) {
                    double dh = go[j] * gamma.at(j);
                    sum_dh += dh;
                    sum_dh_h += dh * h[j];
                    if (gamma.requires_grad()) gamma.grad()[j] += go[j] * h[j];
                    if (beta.requires_grad()) beta.grad()[j] += go[j];
                }
                if (x.requires_grad()) {
                    double is = (*inv_std)[static_cast<usize>(i)];
                    for (int j = 0; j < n; ++j) {
                        double dh = go[j] * gamma.at(j);
                        x.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                                 static_cast<usize>(j)] +=
                            is * (dh - sum_dh / n - h[j] * sum_dh_h / n);
                    }
                }
            }
        });
    }
    return out;
}

Tensor l2_normalize_rows(Tape& tp, Tensor x, double eps) {
    require(x.ndim() == 2, "l2_normalize_rows: x must be 2-D, got " + x.shape_str());
    int m = x.dim(0), n = x.dim(1);
    Tensor out = make_out(tp, {m, n}, x.requires_grad());
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<usize>(m));
    for (int i = 0; i < m; ++i) {
        double ss = 0.0;
        for (int j = 0; j < n; ++j) ss += x.at(i, j) * x.at(i, j);
        // smooth guard: sqrt(ss + eps^2) so the zero row maps to zero
        double inv = 1.0 / std::sqrt(ss + eps * eps);
        (*inv_norm)[static_cast<usize>(i)] = inv;
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) * inv;
    }
    if (out.requires_grad()) {
        tp.record([x, out, inv_norm, m, n]() mutable {
            for (int i = 0; i < m; ++i) {
                double inv = (*inv_norm)[static_cast<usize>(i)];
                const double* go = out.grad() + static_cast<usize>(i) * static_cast<usize>(n);
                const double* y = out.data() + static_cast<usize>(i) * static_cast<usize>(n);
                double dot_gy = 0.0;
                for (int j = 0; j < n; ++j) dot_gy += go[j] * y[j];
                for (int j = 0; j < n; ++j) {
                    x.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                             static_cast<usize>(j)] += inv * (go[j] - y[j] * dot_gy);
                }
            }
        });
    }
    return out;
}

Tensor rowwise_dot(Tape& tp, Tensor a, Tensor b) {
    require(a.ndim() == 2 && a.shape() == b.shape(), "rowwise_dot", a, b);
    int m = a.dim(0), n = a.dim(1);
    Tensor out = make_out(tp, {m}, a.requires_grad() || b.requires_grad());
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += a.at(i, j) * b.at(i, j);
        out.at(i) = s;
    }
    if (out.requires_grad()) {
        tp.record([a, b, out, m, n]() mutable {
            for (int i = 0; i < m; ++i) {
                double g = out.grad()[i];
                for (int j = 0; j < n; ++j) {
                    usize idx = static_cast<usize>(i) * static_cast<usize>(n) +
                                static_cast<usize>(j);
                    if (a.requires_grad()) a.grad()[idx] += g * b.data()[idx];
                    if (b.requires_grad()) b.grad()[idx] += g * a.data()[idx];
                }
            }
        });
    }
    return out;
}

Tensor logsumexp_rows(Tape& tp, Tensor x) {
    require(x.ndim() == 2, "logsumexp_rows: x must be 2-D, got " + x.shape_str());
    int m = x.dim(0), n = x.dim(1);
    Tensor out = make_out(tp, {m}, x.requires_grad());
    for (int i = 0; i < m; ++i) {
        double mx = x.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += std::exp(x.at(i, j) - mx);
        out.at(i) = mx + std::log(s);
    }
    if (out.requires_grad()) {
        tp.record([x, out, m, n]() mutable {
            for (int i = 0; i < m; ++i) {
                double g = out.grad()[i];
                double lse = out.data()[i];
                for (int j = 0; j < n; ++j) {
                    x.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                             static_cast<usize>(j)] += g * std::exp(x.at(i, j) - lse);
                }
            }
        });
    }
    return out;
}

Tensor take_diag(Tape& tp, Tensor x) {
    require(x.ndim() == 2 && x.dim(0) == x.dim(1),
            "take_diag: x must be square, got " + x.shape_str());
    int n = x.dim(0);
    Tensor out = make_out(tp, {n}, x.requires_grad());
    for (int i = 0; i < n; ++i) out.at(i) = x.at(i, i);
    if (out.requires_grad()) {
        tp.record([x, out, n]() mutable {
            for (int i = 0; i < n; ++i)
                x.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                         static_cast<usize>(i)] += out.grad()[i];
        });
    }
    return out;
}

Tensor set_diag(Tape& tp, Tensor x, Tensor d) {
    require(x.ndim() == 2 && x.dim(0) == x.dim(1),
            "set_diag: x must be square, got " + x.shape_str());
    require(d.ndim() == 1 && d.dim(0) == x.dim(0), "set_diag", x, d);
    int n = x.dim(0);
    Tensor out = make_out(tp, {n, n}, x.requires_grad() || d.requires_grad());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.at(i, j) = (i == j) ? d.at(i) : x.at(i, j);
    if (out.requires_grad()) {
        tp.record([x, d, out, n]() mutable {
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    double g = out.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                                          static_cast<usize>(j)];
                    if (i == j) {
                        if (d.requires_grad()) d.grad()[i] += g;
                    } else if (x.requires_grad()) {
                        x.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                                 static_cast<usize>(j)] += g;
                    }
                }
            }
        });
    }
    return out;
}

Tensor row_scale(Tape& tp, Tensor x, Tensor s) {
    require(x.ndim() == 2 && s.ndim() == 1 && s.dim(0) == x.dim(0), "row_scale", x, s);
    int m = x.dim(0), n = x.dim(1);
    Tensor out = make_out(tp, {m, n}, x.requires_grad() || s.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.at(i, j) = x.at(i, j) * s.at(i);
    if (out.requires_grad()) {
        tp.record([x, s, out, m, n]() mutable {
            for (int i = 0; i < m; ++i) {
                double ds = 0.0;
                for (int j = 0; j < n; ++j) {
                    usize idx = static_cast<usize>(i) * static_cast<usize>(n) +
                                static_cast<usize>(j);
                    double g = out.grad()[idx];
                    if (x.requires_grad()) x.grad()[idx] += g * s.data()[i];
                    ds += g * x.data()[idx];
                }
                if (s.requires_grad()) s.grad()[i] += ds;
            }
        });
    }
    return out;
}

Tensor scatter_rows(Tape& tp, Tensor src, const std::vector<int>& rows, int m) {
    require(src.ndim() == 2, "scatter_rows: src must be 2-D, got " + src.shape_str());
    require(static_cast<int>(rows.size()) == src.dim(0),
            "scatter_rows: row index count does not match src rows");
    int n = src.dim(1);
    for (int r : rows) require(r >= 0 && r < m, "scatter_rows: row index out of range");
    Tensor out = make_out(tp, {m, n}, src.requires_grad());
    for (usize p = 0; p < rows.size(); ++p)
        for (int j = 0; j < n; ++j)
            out.at(rows[p], j) = src.at(static_cast<int>(p), j);
    if (out.requires_grad()) {
        tp.record([src, out, rows, n]() mutable {
            for (usize p = 0; p < rows.size(); ++p)
                for (int j = 0; j < n; ++j)
                    src.grad()[p * static_cast<usize>(n) + static_cast<usize>(j)] +=
                        out.grad()[static_cast<usize>(rows[p]) * static_cast<usize>(n) +
                                   static_cast<usize>(j)];
        });
    }
    return out;
}

Tensor gather_rows(Tape& tp, Tensor x, const std::vector<int>& rows) {
    require(x.ndim() == 2, "gather_rows: x must be 2-D, got " + x.shape_str());
    int n = x.dim(1);
    for (int r : rows) require(r >= 0 && r < x.dim(0), "gather_rows: row index out of range");
    Tensor out = make_out(tp, {static_cast<int>(rows.size()), n}, x.requires_grad());
    for (usize p = 0; p < rows.size(); ++p)
        for (int j = 0; j < n; ++j)
            out.at(static_cast<int>(p), j) = x.at(rows[p], j);
    if (out.requires_grad()) {
        tp.record([x, out, rows, n]() mutable {
            for (usize p = 0; p < rows.size(); ++p)
                for (int j = 0; j < n; ++j)
                    x.grad()[static_cast<usize>(rows[p]) * static_cast<usize>(n) +
                             static_cast<usize>(j)] +=
                        out.grad()[p * static_cast<usize>(n) + static_cast<usize>(j)];
        });
    }
    return out;
}

Tensor broadcast_row(Tape& tp, Tensor v, int m) {
    require(v.ndim() == 1, "broadcast_row: v must be 1-D, got " + v.shape_str());
    int n = v.dim(0);
    Tensor out = make_out(tp, {m, n}, v.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.at(i, j) = v.at(j);
    if (out.requires_grad()) {
        tp.record([v, out, m, n]() mutable {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    v.grad()[j] += out.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                                              static_cast<usize>(j)];
        });
    }
    return out;
}

Tensor concat_cols(Tape& tp, Tensor a, Tensor b) {
    require(a.ndim() == 2 && b.ndim() == 2 && a.dim(0) == b.dim(0), "concat_cols", a, b);
    int m = a.dim(0), p = a.dim(1), q = b.dim(1);
    Tensor out = make_out(tp, {m, p + q}, a.requires_grad() || b.requires_grad());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < p; ++j) out.at(i, j) = a.at(i, j);
        for (int j = 0; j < q; ++j) out.at(i, p + j) = b.at(i, j);
    }
    if (out.requires_grad()) {
        tp.record([a, b, out, m, p, q]() mutable {
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < p; ++j) {
                    if (a.requires_grad())
                        a.grad()[static_cast<usize>(i) * static_cast<usize>(p) +
                                 static_cast<usize>(j)] +=
                            out.grad()[static_cast<usize>(i) * static_cast<usize>(p + q) +
                                       static_cast<usize>(j)];
                }
                for (int j = 0; j < q; ++j) {
                    if (b.requires_grad())
                        b.grad()[static_cast<usize>(i) * static_cast<usize>(q) +
                                 static_cast<usize>(j)] +=
                            out.grad()[static_cast<usize>(i) * static_cast<usize>(p + q) +
                                       static_cast<usize>(p + j)];
                }
            }
        });
    }
    return out;
}

Tensor slice_cols(Tape& tp, Tensor x, int from, int count) {
    require(x.ndim() == 2, "slice_cols: x must be 2-D, got " + x.shape_str());
    require(from >= 0 && count > 0 && from + count <= x.dim(1),
            "slice_cols: range out of bounds");
    int m = x.dim(0), n = x.dim(1);
    Tensor out = make_out(tp, {m, count}, x.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
            out.at(i, j) = x.at(i, from + j);
    if (out.requires_grad()) {
        tp.record([x, out, from, count, m, n]() mutable {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < count; ++j)
                    x.grad()[static_cast<usize>(i) * static_cast<usize>(n) +
                             static_cast<usize>(from + j)] +=
                        out.grad()[static_cast<usize>(i) * static_cast<usize>(count) +
                                   static_cast<usize>(j)];
        });
    }
    return out;
}

Tensor causal_softmax(Tape& tp, Tensor scores) {
    require(scores.ndim() == 2 && scores.dim(0) == scores.dim(1),
            "causal_softmax: scores must be square, got " + scores.shape_str());
    int t = scores.dim(0);
    Tensor out = make_out(tp, {t, t}, scores.requires_grad());
    for (int i = 0; i < t; ++i) {
        double mx = scores.at(i, 0);
        for (int j = 1; j <= i; ++j) mx = std::max(mx, scores.at(i, j));
        double z = 0.0;
        for (int j = 0; j <= i; ++j) z += std::exp(scores.at(i, j) - mx);
        for (int j = 0; j <= i; ++j) out.at(i, j) = std::exp(scores.at(i, j) - mx) / z;
        // j > i stays exactly 0.0 from the zero-initialized buffer
    }
    if (out.requires_grad()) {
        tp.record([scores, out, t]() mutable {
            for (int i = 0; i < t; ++i) {
                double acc = 0.0;
                for (int j = 0; j <= i; ++j)
                    acc += out.grad()[static_cast<usize>(i) * static_cast<usize>(t) +
                                      static_cast<usize>(j)] *
                           out.at(i, j);
                for (int j = 0; j <= i; ++j) {
                    usize idx = static_cast<usize>(i) * static_cast<usize>(t) +
                                static_cast<usize>(j);
                    scores.grad()[idx] += out.at(i, j) * (out.grad()[idx] - acc);
                }
            }
        });
    }
    return out;
}

Tensor sum_all(Tape& tp, Tensor x) {
    Tensor out = make_out(tp, {1}, x.requires_grad());
    double s = 0.0;
    for (usize i = 0; i < x.size(); ++i) s += x.data()[i];
    out.data()[0] = s;
    if (out.requires_grad()) {
        tp.record([x, out]() mutable {
            double g = out.grad()[0];
            for (usize i = 0; i < x.size(); ++i) x.grad()[i] += g;
        });
    }
    return out;
}

Tensor mean_all(Tape& tp, Tensor x) {
    require(x.size() > 0, "mean_all: empty tensor");
    return scale(tp, sum_all(tp, x), 1.0 / static_cast<double>(x.size()));
}

Tensor dot(Tape& tp, Tensor a, Tensor b) {
    require(a.ndim() == 1 && b.ndim() == 1 && a.dim(0) == b.dim(0), "dot", a, b);
    Tensor out = make_out(tp, {1}, a.requires_grad() || b.requires_grad());
    double s = 0.0;
    for (usize i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    out.data()[0] = s;
    if (out.requires_grad()) {
        tp.record([a, b, out]() mutable {
            double g = out.grad()[0];
            for (usize i = 0; i < a.size(); ++i) {
                if (a.requires_grad()) a.grad()[i] += g * b.data()[i];
                if (b.requires_grad()) b.grad()[i] += g * a.data()[i];
            }
        });
    }
    return out;
}

Tensor dense(Tape& tp, Tensor x, Tensor w, Tensor b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0)) {
        std::ostringstream os;
        os << "dense: x" << x.shape_str() << " incompatible with W" << w.shape_str();
        throw ShapeError(os.str());
    }
    if (b.ndim() != 1 || b.dim(0) != w.dim(1)) {
        std::ostringstream os;
        os << "dense: b" << b.shape_str() << " incompatible with W" << w.shape_str();
        throw ShapeError(os.str());
    }
    return add_rowvec(tp, matmul(tp, x, w), b);
}

bool all_finite(const Tensor& t) {
    for (usize i = 0; i < t.size(); ++i)
        if (!std::isfinite(t.data()[i])) return false;
    return true;
}

Tensor sinusoidal_positions(int len, int dim) {
    Tensor pe({len, dim});
    for (int p = 0; p < len; ++p) {
        for (int j = 0; j < dim; j += 2) {
            double freq = std::pow(10000.0, -static_cast<double>(j) / dim);
            pe.at(p, j) = std::sin(p * freq);
            if (j + 1 < dim) pe.at(p, j + 1) = std::cos(p * freq);
        }
    }
    return pe;
}

}  // namespace mga::nn
