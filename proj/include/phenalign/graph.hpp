#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "phenalign/error.hpp"
#include "phenalign/tensor.hpp"

namespace phenalign {

namespace detail {

// Guard below which norms are treated as degenerate: cosine and
// normalization return 0 there and their gradient is taken as 0.
constexpr double kNormGuard = 1e-12;

// out = (ta ? A^T : A) * (tb ? B^T : B), optionally accumulating.
// ar/ac are the physical dimensions of the stored row-major buffers.
inline void gemm(const double* a, std::size_t ar, std::size_t ac, bool ta,
                 const double* b, std::size_t br, std::size_t bc, bool tb,
                 double* out, bool accumulate) {
    const std::size_t m = ta ? ac : ar;
    const std::size_t k = ta ? ar : ac;
    const std::size_t n = tb ? br : bc;
    if (!accumulate)
        for (std::size_t i = 0; i < m * n; ++i) out[i] = 0.0;
    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* orow = out + i * n;
            const double* arow = a + i * k;
            for (std::size_t l = 0; l < k; ++l) {
                const double av = arow[l];
                const double* brow = b + l * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* orow = out + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                double acc = 0.0;
                for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
                orow[j] += acc;
            }
        }
    } else if (ta && !tb) {
        for (std::size_t l = 0; l < k; ++l) {
            const double* arow = a + l * m;
            const double* brow = b + l * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = arow[i];
                double* orow = out + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t l = 0; l < k; ++l) acc += a[l * m + i] * b[j * bc + l];
                out[i * n + j] += acc;
            }
    }
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double stable_log_sigmoid(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

}  // namespace detail

class Graph;

// Opaque handle to a node on a Graph's tape.
class Value {
public:
    Value() = default;
    bool valid() const { return idx_ != static_cast<std::size_t>(-1); }

private:
    friend class Graph;
    explicit Value(std::size_t i) : idx_(i) {}
    std::size_t idx_ = static_cast<std::size_t>(-1);
};

using GradientMap = std::map<std::string, Tensor>;

// Define-by-run tape over dense double tensors. Every operation records a
// forward closure (so the whole graph can be re-evaluated in place after a
// leaf is perturbed) and a backward closure. Gradients accumulate by
// summation when a value feeds several consumers, and the reverse sweep
// visits nodes in fixed reverse insertion order, so backward() is
// deterministic down to the bit.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // ---- leaves ------------------------------------------------------

    Value input(Tensor t) { return Value(new_leaf(std::move(t), false)); }

    Value param(const std::string& name, const Tensor& t) {
        if (params_.count(name))
            throw ContractError("graph: parameter registered twice: " + name);
        std::size_t i = new_leaf(t, true);
        params_.emplace(name, i);
        return Value(i);
    }

    // ---- access ------------------------------------------------------

    const Tensor& value(Value v) const { return nodes_[v.idx_].value; }
    Tensor& mutable_value(Value v) { return nodes_[v.idx_].value; }

    const Tensor& grad(Value v) const {
        const Node& n = nodes_[v.idx_];
        if (!n.requires_grad || n.grad.size() == 0)
            throw ContractError("graph: no gradient recorded for this value");
        return n.grad;
    }

    std::map<std::string, Value> parameters() const {
        std::map<std::string, Value> out;
        for (const auto& [name, idx] : params_) out.emplace(name, Value(idx));
        return out;
    }

    GradientMap parameter_gradients() const {
        GradientMap out;
        for (const auto& [name, idx] : params_) {
            const Node& n = nodes_[idx];
            out.emplace(name, n.grad.size() ? n.grad : Tensor(n.value.shape()));
        }
        return out;
    }

    const Tensor& parameter_gradient(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw LookupError("graph: unknown parameter " + name);
        const Node& n = nodes_[it->second];
        if (n.grad.size() == 0)
            throw ContractError("graph: backward() has not run");
        return n.grad;
    }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- elementwise binary ------------------------------------------

    Value add(Value a, Value b) { return ew2(a, b, Ew2::Add); }
    Value sub(Value a, Value b) { return ew2(a, b, Ew2::Sub); }
    Value mul(Value a, Value b) { return ew2(a, b, Ew2::Mul); }
    Value div(Value a, Value b) { return ew2(a, b, Ew2::Div); }

    // ---- elementwise unary -------------------------------------------

    Value scalar_mul(Value a, double c) {
        return ew1(a, [c](double x) { return c * x; },
                   [c](double, double) { return c; });
    }

    Value scalar_add(Value a, double c) {
        return ew1(a, [c](double x) { return x + c; },
                   [](double, double) { return 1.0; });
    }

    Value exp(Value a) {
        return ew1(a, [](double x) { return std::exp(x); },
                   [](double, double y) { return y; });
    }

    Value log(Value a) {
        return ew1(a, [](double x) { return std::log(x); },
                   [](double x, double) { return 1.0 / x; });
    }

    Value sigmoid(Value a) {
        return ew1(a, detail::stable_sigmoid,
                   [](double, double y) { return y * (1.0 - y); });
    }

    Value log_sigmoid(Value a) {
        return ew1(a, detail::stable_log_sigmoid,
                   [](double x, double) { return detail::stable_sigmoid(-x); });
    }

    Value tanh(Value a) {
        return ew1(a, [](double x) { return std::tanh(x); },
                   [](double, double y) { return 1.0 - y * y; });
    }

    Value sqrt(Value a) {
        return ew1(a, [](double x) { return std::sqrt(x); },
                   [](double, double y) {
                       return y < detail::kNormGuard ? 0.0 : 0.5 / y;
                   });
    }

    Value reciprocal(Value a) {
        return ew1(a, [](double x) { return 1.0 / x; },
                   [](double, double y) { return -y * y; });
    }

    // y = s * x with scalar node s.
    Value scale_by(Value x, Value s) {
        check_scalar(s, "scale_by");
        std::size_t ix = x.idx_, is = s.idx_;
        std::size_t out = new_node(Tensor(vals(ix).shape()),
                                   needs_grad(ix) || needs_grad(is), "scale_by");
        nodes_[out].forward = [ix, is, out](Graph& g) {
            const double c = g.vals(is)[0];
            const Tensor& xv = g.vals(ix);
            Tensor& o = g.vals(out);
            for (std::size_t i = 0; i < xv.size(); ++i) o[i] = c * xv[i];
        };
        nodes_[out].backward = [ix, is, out](Graph& g) {
            const Tensor& dy = g.grads(out);
            const double c = g.vals(is)[0];
            const Tensor& xv = g.vals(ix);
            if (g.needs_grad(ix)) {
                Tensor& dx = g.grads(ix);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += c * dy[i];
            }
            if (g.needs_grad(is)) {
                double acc = 0.0;
                for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * xv[i];
                g.grads(is)[0] += acc;
            }
        };
        run_forward(out);
        return Value(out);
    }

    // y = x + s with scalar node s.
    Value shift_by(Value x, Value s) {
        check_scalar(s, "shift_by");
        std::size_t ix = x.idx_, is = s.idx_;
        std::size_t out = new_node(Tensor(vals(ix).shape()),
                                   needs_grad(ix) || needs_grad(is), "shift_by");
        nodes_[out].forward = [ix, is, out](Graph& g) {
            const double c = g.vals(is)[0];
            const Tensor& xv = g.vals(ix);
            Tensor& o = g.vals(out);
            for (std::size_t i = 0; i < xv.size(); ++i) o[i] = xv[i] + c;
        };
        nodes_[out].backward = [ix, is, out](Graph& g) {
            const Tensor& dy = g.grads(out);
            if (g.needs_grad(ix)) {
                Tensor& dx = g.grads(ix);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
            }
            if (g.needs_grad(is)) {
                double acc = 0.0;
                for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i];
                g.grads(is)[0] += acc;
            }
        };
        run_forward(out);
        return Value(out);
    }

    // ---- linear algebra ----------------------------------------------

    Value matmul(Value a, Value b) {
        const Tensor& av = vals(a.idx_);
        const Tensor& bv = vals(b.idx_);
        if (av.cols() != bv.rows())
            throw DimensionError("matmul: inner dimensions " + shape_str(av.shape()) +
                                 " vs " + shape_str(bv.shape()));
        const std::size_t m = av.rows(), n = bv.cols();
        Shape oshape = (av.ndim() == 1) ? Shape{n} : Shape{m, n};
        std::size_t ia = a.idx_, ib = b.idx_;
        std::size_t out = new_node(Tensor(std::move(oshape)),
                                   needs_grad(ia) || needs_grad(ib), "matmul");
        nodes_[out].forward = [ia, ib, out](Graph& g) {
            const Tensor& A = g.vals(ia);
            const Tensor& B = g.vals(ib);
            detail::gemm(A.data(), A.rows(), A.cols(), false, B.data(), B.rows(),
                         B.cols(), false, g.vals(out).data(), false);
        };
        nodes_[out].backward = [ia, ib, out](Graph& g) {
            const Tensor& A = g.vals(ia);
            const Tensor& B = g.vals(ib);
            const Tensor& dC = g.grads(out);
            const std::size_t m = A.rows(), n = B.cols();
            if (g.needs_grad(ia))
                detail::gemm(dC.data(), m, n, false, B.data(), B.rows(), B.cols(),
                             true, g.grads(ia).data(), true);
            if (g.needs_grad(ib))
                detail::gemm(A.data(), A.rows(), A.cols(), true, dC.data(), m, n,
                             false, g.grads(ib).data(), true);
        };
        run_forward(out);
        return Value(out);
    }

    // y = a * b^T (saves materializing the transpose in attention logits).
    Value matmul_nt(Value a, Value b) {
        const Tensor& av = vals(a.idx_);
        const Tensor& bv = vals(b.idx_);
        if (av.cols() != bv.cols())
            throw DimensionError("matmul_nt: inner dimensions " + shape_str(av.shape()) +
                                 " vs " + shape_str(bv.shape()));
        const std::size_t m = av.rows(), n = bv.rows();
        Shape oshape = (av.ndim() == 1) ? Shape{n} : Shape{m, n};
        std::size_t ia = a.idx_, ib = b.idx_;
        std::size_t out = new_node(Tensor(std::move(oshape)),
                                   needs_grad(ia) || needs_grad(ib), "matmul_nt");
        nodes_[out].forward = [ia, ib, out](Graph& g) {
            const Tensor& A = g.vals(ia);
            const Tensor& B = g.vals(ib);
            detail::gemm(A.data(), A.rows(), A.cols(), false, B.data(), B.rows(),
                         B.cols(), true, g.vals(out).data(), false);
        };
        nodes_[out].backward = [ia, ib, out](Graph& g) {
            const Tensor& A = g.vals(ia);
            const Tensor& B = g.vals(ib);
            const Tensor& dC = g.grads(out);
            const std::size_t m = A.rows(), n = B.rows();
            // dA += dC * B ; dB += dC^T * A
            if (g.needs_grad(ia))
                detail::gemm(dC.data(), m, n, false, B.data(), B.rows(), B.cols(),
                             false, g.grads(ia).data(), true);
            if (g.needs_grad(ib))
                detail::gemm(dC.data(), m, n, true, A.data(), A.rows(), A.cols(),
                             false, g.grads(ib).data(), true);
        };
        run_forward(out);
        return Value(out);
    }

    Value transpose(Value a) {
        const Tensor& av = vals(a.idx_);
        const std::size_t r = av.rows(), c = av.cols();
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(Shape{c, r}), needs_grad(ia), "transpose");
        nodes_[out].forward = [ia, out](Graph& g) {
            const Tensor& A = g.vals(ia);
            Tensor& O = g.vals(out);
            const std::size_t r = A.rows(), c = A.cols();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) O[j * r + i] = A[i * c + j];
        };
        nodes_[out].backward = [ia, out, r, c](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dX[i * c + j] += dY[j * r + i];
        };
        run_forward(out);
        return Value(out);
    }

    // ---- softmax / normalization -------------------------------------

    Value softmax_rows(Value a) {
        const Tensor& av = vals(a.idx_);
        if (av.cols() < 1) throw ContractError("softmax_rows: empty rows");
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(av.shape()), needs_grad(ia), "softmax_rows");
        nodes_[out].forward = [ia, out](Graph& g) {
            const Tensor& X = g.vals(ia);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                double* yr = Y.data() + i * c;
                double mx = xr[0];
                for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    yr[j] = std::exp(xr[j] - mx);
                    sum += yr[j];
                }
                for (std::size_t j = 0; j < c; ++j) yr[j] /= sum;
            }
        };
        nodes_[out].backward = [ia, out](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& Y = g.vals(out);
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            const std::size_t r = Y.rows(), c = Y.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* yr = Y.data() + i * c;
                const double* dyr = dY.data() + i * c;
                double* dxr = dX.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += yr[j] * dyr[j];
                for (std::size_t j = 0; j < c; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
            }
        };
        run_forward(out);
        return Value(out);
    }

    // Rows scaled to unit L2 norm; degenerate rows (norm < guard) map to 0.
    Value normalize_rows(Value a) {
        const Tensor& av = vals(a.idx_);
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(av.shape()), needs_grad(ia), "normalize_rows");
        nodes_[out].forward = [ia, out](Graph& g) {
            const Tensor& X = g.vals(ia);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                double* yr = Y.data() + i * c;
                double n2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) n2 += xr[j] * xr[j];
                const double n = std::sqrt(n2);
                if (n < detail::kNormGuard) {
                    for (std::size_t j = 0; j < c; ++j) yr[j] = 0.0;
                } else {
                    for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] / n;
                }
            }
        };
        nodes_[out].backward = [ia, out](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& X = g.vals(ia);
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                const double* dyr = dY.data() + i * c;
                double* dxr = dX.data() + i * c;
                double n2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) n2 += xr[j] * xr[j];
                const double n = std::sqrt(n2);
                if (n < detail::kNormGuard) continue;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += dyr[j] * xr[j];
                const double n3 = n * n * n;
                for (std::size_t j = 0; j < c; ++j)
                    dxr[j] += dyr[j] / n - xr[j] * dot / n3;
            }
        };
        run_forward(out);
        return Value(out);
    }

    Value layer_norm_rows(Value a, double eps = 1e-5) {
        const Tensor& av = vals(a.idx_);
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(av.shape()), needs_grad(ia), "layer_norm_rows");
        nodes_[out].forward = [ia, out, eps](Graph& g) {
            const Tensor& X = g.vals(ia);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                double* yr = Y.data() + i * c;
                double mu = 0.0;
                for (std::size_t j = 0; j < c; ++j) mu += xr[j];
                mu /= static_cast<double>(c);
                double var = 0.0;
                for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
                var /= static_cast<double>(c);
                const double s = std::sqrt(var + eps);
                for (std::size_t j = 0; j < c; ++j) yr[j] = (xr[j] - mu) / s;
            }
        };
        nodes_[out].backward = [ia, out, eps](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& X = g.vals(ia);
            const Tensor& Y = g.vals(out);
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                const double* yr = Y.data() + i * c;
                const double* dyr = dY.data() + i * c;
                double* dxr = dX.data() + i * c;
                double mu = 0.0;
                for (std::size_t j = 0; j < c; ++j) mu += xr[j];
                mu /= static_cast<double>(c);
                double var = 0.0;
                for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
                var /= static_cast<double>(c);
                const double s = std::sqrt(var + eps);
                double mean_dy = 0.0, mean_dyy = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    mean_dy += dyr[j];
                    mean_dyy += dyr[j] * yr[j];
                }
                mean_dy /= static_cast<double>(c);
                mean_dyy /= static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j)
                    dxr[j] += (dyr[j] - mean_dy - yr[j] * mean_dyy) / s;
            }
        };
        run_forward(out);
        return Value(out);
    }

    // ---- reductions --------------------------------------------------

    Value sum(Value a) { return reduce(a, false); }
    Value mean(Value a) { return reduce(a, true); }

    Value row_sum(Value a) {
        const Tensor& av = vals(a.idx_);
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(Shape{av.rows()}), needs_grad(ia), "row_sum");
        nodes_[out].forward = [ia, out](Graph& g) {
            const Tensor& X = g.vals(ia);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                double acc = 0.0;
                const double* xr = X.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) acc += xr[j];
                Y[i] = acc;
            }
        };
        nodes_[out].backward = [ia, out](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            const std::size_t r = dX.rows(), c = dX.cols();
            for (std::size_t i = 0; i < r; ++i) {
                double* dxr = dX.data() + i * c;
                const double d = dY[i];
                for (std::size_t j = 0; j < c; ++j) dxr[j] += d;
            }
        };
        run_forward(out);
        return Value(out);
    }

    Value col_mean(Value a) {
        const Tensor& av = vals(a.idx_);
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(Shape{av.cols()}), needs_grad(ia), "col_mean");
        nodes_[out].forward = [ia, out](Graph& g) {
            const Tensor& X = g.vals(ia);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t j = 0; j < c; ++j) Y[j] = 0.0;
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) Y[j] += xr[j];
            }
            for (std::size_t j = 0; j < c; ++j) Y[j] /= static_cast<double>(r);
        };
        nodes_[out].backward = [ia, out](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            const std::size_t r = dX.rows(), c = dX.cols();
            const double inv = 1.0 / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i) {
                double* dxr = dX.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) dxr[j] += dY[j] * inv;
            }
        };
        run_forward(out);
        return Value(out);
    }

    Value l2_norm(Value a) {
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(Shape{}), needs_grad(ia), "l2_norm");
        nodes_[out].forward = [ia, out](Graph& g) {
            const Tensor& X = g.vals(ia);
            double n2 = 0.0;
            for (std::size_t i = 0; i < X.size(); ++i) n2 += X[i] * X[i];
            g.vals(out)[0] = std::sqrt(n2);
        };
        nodes_[out].backward = [ia, out](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const double n = g.vals(out)[0];
            if (n < detail::kNormGuard) return;
            const double d = g.grads(out)[0] / n;
            const Tensor& X = g.vals(ia);
            Tensor& dX = g.grads(ia);
            for (std::size_t i = 0; i < X.size(); ++i) dX[i] += d * X[i];
        };
        run_forward(out);
        return Value(out);
    }

    Value l2_norm_rows(Value a) {
        const Tensor& av = vals(a.idx_);
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(Shape{av.rows()}), needs_grad(ia), "l2_norm_rows");
        nodes_[out].forward = [ia, out](Graph& g) {
            const Tensor& X = g.vals(ia);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                double n2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) n2 += xr[j] * xr[j];
                Y[i] = std::sqrt(n2);
            }
        };
        nodes_[out].backward = [ia, out](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& X = g.vals(ia);
            const Tensor& Y = g.vals(out);
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                if (Y[i] < detail::kNormGuard) continue;
                const double d = dY[i] / Y[i];
                const double* xr = X.data() + i * c;
                double* dxr = dX.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) dxr[j] += d * xr[j];
            }
        };
        run_forward(out);
        return Value(out);
    }

    // Cosine similarity of paired rows; 0 (with zero gradient) when either
    // row's norm falls below the guard.
    Value cosine_rows(Value a, Value b) {
        const Tensor& av = vals(a.idx_);
        const Tensor& bv = vals(b.idx_);
        if (!av.same_shape(bv))
            throw DimensionError("cosine_rows: shape mismatch " + shape_str(av.shape()) +
                                 " vs " + shape_str(bv.shape()));
        std::size_t ia = a.idx_, ib = b.idx_;
        std::size_t out = new_node(Tensor(Shape{av.rows()}),
                                   needs_grad(ia) || needs_grad(ib), "cosine_rows");
        nodes_[out].forward = [ia, ib, out](Graph& g) {
            const Tensor& U = g.vals(ia);
            const Tensor& V = g.vals(ib);
            Tensor& Y = g.vals(out);
            const std::size_t r = U.rows(), c = U.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* u = U.data() + i * c;
                const double* v = V.data() + i * c;
                double nu = 0.0, nv = 0.0, dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    nu += u[j] * u[j];
                    nv += v[j] * v[j];
                    dot += u[j] * v[j];
                }
                nu = std::sqrt(nu);
                nv = std::sqrt(nv);
                Y[i] = (nu < detail::kNormGuard || nv < detail::kNormGuard)
                           ? 0.0
                           : dot / (nu * nv);
            }
        };
        nodes_[out].backward = [ia, ib, out](Graph& g) {
            const Tensor& U = g.vals(ia);
            const Tensor& V = g.vals(ib);
            const Tensor& Y = g.vals(out);
            const Tensor& dY = g.grads(out);
            const std::size_t r = U.rows(), c = U.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* u = U.data() + i * c;
                const double* v = V.data() + i * c;
                double nu = 0.0, nv = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    nu += u[j] * u[j];
                    nv += v[j] * v[j];
                }
                nu = std::sqrt(nu);
                nv = std::sqrt(nv);
                if (nu < detail::kNormGuard || nv < detail::kNormGuard) continue;
                const double cosv = Y[i];
                const double d = dY[i];
                if (g.needs_grad(ia)) {
                    double* du = g.grads(ia).data() + i * c;
                    for (std::size_t j = 0; j < c; ++j)
                        du[j] += d * (v[j] / (nu * nv) - cosv * u[j] / (nu * nu));
                }
                if (g.needs_grad(ib)) {
                    double* dv = g.grads(ib).data() + i * c;
                    for (std::size_t j = 0; j < c; ++j)
                        dv[j] += d * (u[j] / (nu * nv) - cosv * v[j] / (nv * nv));
                }
            }
        };
        run_forward(out);
        return Value(out);
    }

    // ---- broadcast helpers -------------------------------------------

    // y[r, c] = x[r, c] / d[r]
    Value rows_div(Value x, Value d) {
        const Tensor& xv = vals(x.idx_);
        const Tensor& dv = vals(d.idx_);
        if (dv.size() != xv.rows())
            throw DimensionError("rows_div: divisor length " + std::to_string(dv.size()) +
                                 " vs rows " + std::to_string(xv.rows()));
        std::size_t ix = x.idx_, id = d.idx_;
        std::size_t out = new_node(Tensor(xv.shape()),
                                   needs_grad(ix) || needs_grad(id), "rows_div");
        nodes_[out].forward = [ix, id, out](Graph& g) {
            const Tensor& X = g.vals(ix);
            const Tensor& D = g.vals(id);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double inv = 1.0 / D[i];
                const double* xr = X.data() + i * c;
                double* yr = Y.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] * inv;
            }
        };
        nodes_[out].backward = [ix, id, out](Graph& g) {
            const Tensor& X = g.vals(ix);
            const Tensor& D = g.vals(id);
            const Tensor& dY = g.grads(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double inv = 1.0 / D[i];
                const double* xr = X.data() + i * c;
                const double* dyr = dY.data() + i * c;
                if (g.needs_grad(ix)) {
                    double* dxr = g.grads(ix).data() + i * c;
                    for (std::size_t j = 0; j < c; ++j) dxr[j] += dyr[j] * inv;
                }
                if (g.needs_grad(id)) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < c; ++j) acc += dyr[j] * xr[j];
                    g.grads(id)[i] += -acc * inv * inv;
                }
            }
        };
        run_forward(out);
        return Value(out);
    }

    // y[r, c] = x[r, c] + v[r]
    Value rows_add(Value x, Value v) {
        const Tensor& xv = vals(x.idx_);
        const Tensor& vv = vals(v.idx_);
        if (vv.size() != xv.rows())
            throw DimensionError("rows_add: vector length " + std::to_string(vv.size()) +
                                 " vs rows " + std::to_string(xv.rows()));
        std::size_t ix = x.idx_, iv = v.idx_;
        std::size_t out = new_node(Tensor(xv.shape()),
                                   needs_grad(ix) || needs_grad(iv), "rows_add");
        nodes_[out].forward = [ix, iv, out](Graph& g) {
            const Tensor& X = g.vals(ix);
            const Tensor& V = g.vals(iv);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                double* yr = Y.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] + V[i];
            }
        };
        nodes_[out].backward = [ix, iv, out](Graph& g) {
            const Tensor& dY = g.grads(out);
            const std::size_t r = g.vals(ix).rows(), c = g.vals(ix).cols();
            if (g.needs_grad(ix)) {
                Tensor& dX = g.grads(ix);
                for (std::size_t k = 0; k < r * c; ++k) dX[k] += dY[k];
            }
            if (g.needs_grad(iv)) {
                Tensor& dV = g.grads(iv);
                for (std::size_t i = 0; i < r; ++i) {
                    double acc = 0.0;
                    const double* dyr = dY.data() + i * c;
                    for (std::size_t j = 0; j < c; ++j) acc += dyr[j];
                    dV[i] += acc;
                }
            }
        };
        run_forward(out);
        return Value(out);
    }

    // y[r, c] = x[r, c] * g[c]
    Value cols_mul(Value x, Value gvec) { return colwise(x, gvec, true); }

    // y[r, c] = x[r, c] + b[c]
    Value cols_add(Value x, Value bvec) { return colwise(x, bvec, false); }

    // ---- structure ----------------------------------------------------

    Value concat(const std::vector<Value>& parts, int axis) {
        if (parts.empty()) throw ContractError("concat: no inputs");
        std::vector<std::size_t> idx;
        idx.reserve(parts.size());
        bool req = false;
        for (Value p : parts) {
            idx.push_back(p.idx_);
            req = req || needs_grad(p.idx_);
        }
        if (axis == 0) {
            const std::size_t c = vals(idx[0]).cols();
            std::size_t rtot = 0;
            for (std::size_t i : idx) {
                if (vals(i).cols() != c)
                    throw DimensionError("concat axis 0: column mismatch");
                rtot += vals(i).rows();
            }
            std::size_t out = new_node(Tensor(Shape{rtot, c}), req, "concat0");
            nodes_[out].forward = [idx, out](Graph& g) {
                Tensor& Y = g.vals(out);
                std::size_t off = 0;
                for (std::size_t i : idx) {
                    const Tensor& X = g.vals(i);
                    std::copy(X.data(), X.data() + X.size(), Y.data() + off);
                    off += X.size();
                }
            };
            nodes_[out].backward = [idx, out](Graph& g) {
                const Tensor& dY = g.grads(out);
                std::size_t off = 0;
                for (std::size_t i : idx) {
                    const std::size_t n = g.vals(i).size();
                    if (g.needs_grad(i)) {
                        Tensor& dX = g.grads(i);
                        for (std::size_t k = 0; k < n; ++k) dX[k] += dY[off + k];
                    }
                    off += n;
                }
            };
            run_forward(out);
            return Value(out);
        }
        if (axis != 1) throw ContractError("concat: axis must be 0 or 1");
        const std::size_t r = vals(idx[0]).rows();
        std::size_t ctot = 0;
        bool all_vec = true;
        for (std::size_t i : idx) {
            if (vals(i).rows() != r) throw DimensionError("concat axis 1: row mismatch");
            all_vec = all_vec && vals(i).ndim() <= 1;
            ctot += vals(i).cols();
        }
        Shape oshape = (all_vec && r == 1) ? Shape{ctot} : Shape{r, ctot};
        std::size_t out = new_node(Tensor(std::move(oshape)), req, "concat1");
        nodes_[out].forward = [idx, out, r, ctot](Graph& g) {
            Tensor& Y = g.vals(out);
            std::size_t coff = 0;
            for (std::size_t i : idx) {
                const Tensor& X = g.vals(i);
                const std::size_t c = X.cols();
                for (std::size_t row = 0; row < r; ++row)
                    std::copy(X.data() + row * c, X.data() + (row + 1) * c,
                              Y.data() + row * ctot + coff);
                coff += c;
            }
        };
        nodes_[out].backward = [idx, out, r, ctot](Graph& g) {
            const Tensor& dY = g.grads(out);
            std::size_t coff = 0;
            for (std::size_t i : idx) {
                const std::size_t c = g.vals(i).cols();
                if (g.needs_grad(i)) {
                    Tensor& dX = g.grads(i);
                    for (std::size_t row = 0; row < r; ++row)
                        for (std::size_t j = 0; j < c; ++j)
                            dX[row * c + j] += dY[row * ctot + coff + j];
                }
                coff += c;
            }
        };
        run_forward(out);
        return Value(out);
    }

    Value slice_rows(Value a, std::size_t r0, std::size_t r1) {
        const Tensor& av = vals(a.idx_);
        if (r0 >= r1 || r1 > av.rows())
            throw IndexError("slice_rows: range [" + std::to_string(r0) + ", " +
                             std::to_string(r1) + ") out of " + std::to_string(av.rows()));
        const std::size_t c = av.cols();
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(Shape{r1 - r0, c}), needs_grad(ia), "slice_rows");
        nodes_[out].forward = [ia, out, r0, r1, c](Graph& g) {
            const Tensor& X = g.vals(ia);
            std::copy(X.data() + r0 * c, X.data() + r1 * c, g.vals(out).data());
        };
        nodes_[out].backward = [ia, out, r0, r1, c](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            const std::size_t n = (r1 - r0) * c;
            for (std::size_t k = 0; k < n; ++k) dX[r0 * c + k] += dY[k];
        };
        run_forward(out);
        return Value(out);
    }

    Value slice_cols(Value a, std::size_t c0, std::size_t c1) {
        const Tensor& av = vals(a.idx_);
        if (c0 >= c1 || c1 > av.cols())
            throw IndexError("slice_cols: range [" + std::to_string(c0) + ", " +
                             std::to_string(c1) + ") out of " + std::to_string(av.cols()));
        const std::size_t r = av.rows(), c = av.cols(), w = c1 - c0;
        std::size_t ia = a.idx_;
        Shape oshape = (av.ndim() == 1) ? Shape{w} : Shape{r, w};
        std::size_t out = new_node(Tensor(std::move(oshape)), needs_grad(ia), "slice_cols");
        nodes_[out].forward = [ia, out, c0, c, w, r](Graph& g) {
            const Tensor& X = g.vals(ia);
            Tensor& Y = g.vals(out);
            for (std::size_t i = 0; i < r; ++i)
                std::copy(X.data() + i * c + c0, X.data() + i * c + c0 + w,
                          Y.data() + i * w);
        };
        nodes_[out].backward = [ia, out, c0, c, w, r](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    dX[i * c + c0 + j] += dY[i * w + j];
        };
        run_forward(out);
        return Value(out);
    }

    // Row gather from an embedding table; gradient scatter-adds.
    Value embed(Value table, std::vector<std::size_t> ids) {
        const Tensor& tv = vals(table.idx_);
        const std::size_t v = tv.rows(), e = tv.cols();
        for (std::size_t id : ids)
            if (id >= v)
                throw LookupError("embed: token id " + std::to_string(id) +
                                  " out of range " + std::to_string(v));
        std::size_t it = table.idx_;
        std::size_t out = new_node(Tensor(Shape{ids.size(), e}), needs_grad(it), "embed");
        nodes_[out].forward = [it, out, ids, e](Graph& g) {
            const Tensor& T = g.vals(it);
            Tensor& Y = g.vals(out);
            for (std::size_t k = 0; k < ids.size(); ++k)
                std::copy(T.data() + ids[k] * e, T.data() + (ids[k] + 1) * e,
                          Y.data() + k * e);
        };
        nodes_[out].backward = [it, out, ids, e](Graph& g) {
            if (!g.needs_grad(it)) return;
            const Tensor& dY = g.grads(out);
            Tensor& dT = g.grads(it);
            for (std::size_t k = 0; k < ids.size(); ++k)
                for (std::size_t j = 0; j < e; ++j)
                    dT[ids[k] * e + j] += dY[k * e + j];
        };
        run_forward(out);
        return Value(out);
    }

    // ---- autodiff ----------------------------------------------------

    // Reverse sweep from a scalar loss. Gradients land on every parameter;
    // parameters the loss does not reach keep zero gradients.
    void backward(Value loss) {
        const Tensor& lv = vals(loss.idx_);
        if (lv.size() != 1)
            throw ContractError("backward: loss must be scalar, got " +
                                shape_str(lv.shape()));
        for (Node& n : nodes_) {
            if (!n.requires_grad) continue;
            if (n.grad.size() == 0)
                n.grad = Tensor(n.value.shape());
            else
                n.grad.fill(0.0);
        }
        if (!nodes_[loss.idx_].requires_grad) return;
        nodes_[loss.idx_].grad[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backward) n.backward(*this);
        }
    }

    // Re-run every recorded forward in insertion order (leaves keep their
    // current values). Used by grad_check after perturbing a parameter.
    void recompute() {
        for (Node& n : nodes_)
            if (n.forward) n.forward(*this);
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Graph&)> forward;
        std::function<void(Graph&)> backward;
        const char* op = "leaf";
    };

    enum class Ew2 { Add, Sub, Mul, Div };

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> params_;

    friend double grad_check(Graph& g, Value loss, double eps);

    std::size_t new_leaf(Tensor t, bool req) {
        Node n;
        n.value = std::move(t);
        n.requires_grad = req;
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    std::size_t new_node(Tensor t, bool req, const char* op) {
        Node n;
        n.value = std::move(t);
        n.requires_grad = req;
        n.op = op;
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    Tensor& vals(std::size_t i) { return nodes_[i].value; }
    const Tensor& vals(std::size_t i) const { return nodes_[i].value; }
    Tensor& grads(std::size_t i) { return nodes_[i].grad; }
    bool needs_grad(std::size_t i) const { return nodes_[i].requires_grad; }

    void run_forward(std::size_t i) { nodes_[i].forward(*this); }

    void check_scalar(Value s, const char* op) {
        if (vals(s.idx_).size() != 1)
            throw ContractError(std::string(op) + ": scale must be scalar");
    }

    Value ew2(Value a, Value b, Ew2 kind) {
        const Tensor& av = vals(a.idx_);
        const Tensor& bv = vals(b.idx_);
        if (!av.same_shape(bv))
            throw DimensionError("elementwise: shape mismatch " + shape_str(av.shape()) +
                                 " vs " + shape_str(bv.shape()));
        std::size_t ia = a.idx_, ib = b.idx_;
        std::size_t out = new_node(Tensor(av.shape()),
                                   needs_grad(ia) || needs_grad(ib), "ew2");
        nodes_[out].forward = [ia, ib, out, kind](Graph& g) {
            const Tensor& A = g.vals(ia);
            const Tensor& B = g.vals(ib);
            Tensor& Y = g.vals(out);
            switch (kind) {
                case Ew2::Add:
                    for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] + B[i];
                    break;
                case Ew2::Sub:
                    for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] - B[i];
                    break;
                case Ew2::Mul:
                    for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] * B[i];
                    break;
                case Ew2::Div:
                    for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] / B[i];
                    break;
            }
        };
        nodes_[out].backward = [ia, ib, out, kind](Graph& g) {
            const Tensor& A = g.vals(ia);
            const Tensor& B = g.vals(ib);
            const Tensor& dY = g.grads(out);
            const bool ra = g.needs_grad(ia), rb = g.needs_grad(ib);
            switch (kind) {
                case Ew2::Add:
                    if (ra) {
                        Tensor& dA = g.grads(ia);
                        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i];
                    }
                    if (rb) {
                        Tensor& dB = g.grads(ib);
                        for (std::size_t i = 0; i < dY.size(); ++i) dB[i] += dY[i];
                    }
                    break;
                case Ew2::Sub:
                    if (ra) {
                        Tensor& dA = g.grads(ia);
                        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i];
                    }
                    if (rb) {
                        Tensor& dB = g.grads(ib);
                        for (std::size_t i = 0; i < dY.size(); ++i) dB[i] -= dY[i];
                    }
                    break;
                case Ew2::Mul:
                    if (ra) {
                        Tensor& dA = g.grads(ia);
                        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i] * B[i];
                    }
                    if (rb) {
                        Tensor& dB = g.grads(ib);
                        for (std::size_t i = 0; i < dY.size(); ++i) dB[i] += dY[i] * A[i];
                    }
                    break;
                case Ew2::Div:
                    if (ra) {
                        Tensor& dA = g.grads(ia);
                        for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i] / B[i];
                    }
                    if (rb) {
                        Tensor& dB = g.grads(ib);
                        for (std::size_t i = 0; i < dY.size(); ++i)
                            dB[i] += -dY[i] * A[i] / (B[i] * B[i]);
                    }
                    break;
            }
        };
        run_forward(out);
        return Value(out);
    }

    template <typename F, typename DF>
    Value ew1(Value a, F f, DF df) {
        std::size_t ia = a.idx_;
        std::size_t out = new_node(Tensor(vals(ia).shape()), needs_grad(ia), "ew1");
        nodes_[out].forward = [ia, out, f](Graph& g) {
            const Tensor& X = g.vals(ia);
            Tensor& Y = g.vals(out);
            for (std::size_t i = 0; i < X.size(); ++i) Y[i] = f(X[i]);
        };
        nodes_[out].backward = [ia, out, df](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const Tensor& X = g.vals(ia);
            const Tensor& Y = g.vals(out);
            const Tensor& dY = g.grads(out);
            Tensor& dX = g.grads(ia);
            for (std::size_t i = 0; i < X.size(); ++i) dX[i] += dY[i] * df(X[i], Y[i]);
        };
        run_forward(out);
        return Value(out);
    }

    Value reduce(Value a, bool take_mean) {
        std::size_t ia = a.idx_;
        const double inv = take_mean ? 1.0 / static_cast<double>(vals(ia).size()) : 1.0;
        std::size_t out = new_node(Tensor(Shape{}), needs_grad(ia),
                                   take_mean ? "mean" : "sum");
        nodes_[out].forward = [ia, out, inv](Graph& g) {
            const Tensor& X = g.vals(ia);
            double acc = 0.0;
            for (std::size_t i = 0; i < X.size(); ++i) acc += X[i];
            g.vals(out)[0] = acc * inv;
        };
        nodes_[out].backward = [ia, out, inv](Graph& g) {
            if (!g.needs_grad(ia)) return;
            const double d = g.grads(out)[0] * inv;
            Tensor& dX = g.grads(ia);
            for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += d;
        };
        run_forward(out);
        return Value(out);
    }

    Value colwise(Value x, Value v, bool multiply) {
        const Tensor& xv = vals(x.idx_);
        const Tensor& vv = vals(v.idx_);
        if (vv.size() != xv.cols())
            throw DimensionError("colwise: vector length " + std::to_string(vv.size()) +
                                 " vs cols " + std::to_string(xv.cols()));
        std::size_t ix = x.idx_, iv = v.idx_;
        std::size_t out = new_node(Tensor(xv.shape()),
                                   needs_grad(ix) || needs_grad(iv),
                                   multiply ? "cols_mul" : "cols_add");
        nodes_[out].forward = [ix, iv, out, multiply](Graph& g) {
            const Tensor& X = g.vals(ix);
            const Tensor& V = g.vals(iv);
            Tensor& Y = g.vals(out);
            const std::size_t r = X.rows(), c = X.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* xr = X.data() + i * c;
                double* yr = Y.data() + i * c;
                if (multiply)
                    for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] * V[j];
                else
                    for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] + V[j];
            }
        };
        nodes_[out].backward = [ix, iv, out, multiply](Graph& g) {
            const Tensor& X = g.vals(ix);
            const Tensor& V = g.vals(iv);
            const Tensor& dY = g.grads(out);
            const std::size_t r = X.rows(), c = X.cols();
            if (g.needs_grad(ix)) {
                Tensor& dX = g.grads(ix);
                for (std::size_t i = 0; i < r; ++i) {
                    const double* dyr = dY.data() + i * c;
                    double* dxr = dX.data() + i * c;
                    if (multiply)
                        for (std::size_t j = 0; j < c; ++j) dxr[j] += dyr[j] * V[j];
                    else
                        for (std::size_t j = 0; j < c; ++j) dxr[j] += dyr[j];
                }
            }
            if (g.needs_grad(iv)) {
                Tensor& dV = g.grads(iv);
                for (std::size_t i = 0; i < r; ++i) {
                    const double* xr = X.data() + i * c;
                    const double* dyr = dY.data() + i * c;
                    if (multiply)
                        for (std::size_t j = 0; j < c; ++j) dV[j] += dyr[j] * xr[j];
                    else
                        for (std::size_t j = 0; j < c; ++j) dV[j] += dyr[j];
                }
            }
        };
        run_forward(out);
        return Value(out);
    }
};

// Central-difference validation of backward(). For every registered
// parameter entry: perturb by +/- eps, re-run the recorded forwards, and
// compare (f+ - f-) / (2 eps) against the analytic gradient. Returns the
// maximum relative error, with denominator max(1, |analytic|, |numeric|).
inline double grad_check(Graph& g, Value loss, double eps) {
    if (!(eps > 0.0 && eps <= 1e-3))
        throw ContractError("grad_check: eps must be in (0, 1e-3]");
    g.backward(loss);
    GradientMap analytic = g.parameter_gradients();
    double worst = 0.0;
    for (const auto& [name, idx] : g.params_) {
        Tensor& p = g.nodes_[idx].value;
        const Tensor& ga = analytic.at(name);
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double orig = p[k];
            p[k] = orig + eps;
            g.recompute();
            const double fp = g.value(loss)[0];
            p[k] = orig - eps;
            g.recompute();
            const double fm = g.value(loss)[0];
            p[k] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double denom =
                std::max(1.0, std::max(std::abs(ga[k]), std::abs(numeric)));
            worst = std::max(worst, std::abs(ga[k] - numeric) / denom);
        }
    }
    g.recompute();
    return worst;
}

}  // namespace phenalign
