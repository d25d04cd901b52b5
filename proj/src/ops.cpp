// SPDX-License-Identifier: Apache-2.0
#include "mcevae/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace mcevae::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b, const std::string& why = "") {
    throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b) + (why.empty() ? "" : " (" + why + ")"));
}

void same_tape(const std::string& op, const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw Error(op + ": operands recorded on different tapes");
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Output shape for a broadcasting binary op; throws on mismatch.
Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
    if (a == b) return a;
    if (numel(b) == 1 || is_suffix(b, a)) return a;
    if (numel(a) == 1 || is_suffix(a, b)) return b;
    shape_fail(op, a, b, "broadcast requires one shape to be a suffix of the other");
}

template <class Fwd, class Bwd>
Var unary(const char* op, const Var& a, Fwd fwd, Bwd dfdx) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
    int ia = a.id();
    return a.tape().record(op, std::move(out), {ia}, [ia, dfdx](graph::Tape& t, int self) {
        auto sink = t.grad_sink(ia);
        if (sink.empty()) return;
        const auto& x = t.value(ia);
        const auto& y = t.value(self);
        auto g = t.out_grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i] * dfdx(x[i], y[i]);
    });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    same_tape("matmul", a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) shape_fail("matmul", A.shape(), B.shape());
    const auto m = static_cast<Eigen::Index>(A.dim(0));
    const auto k = static_cast<Eigen::Index>(A.dim(1));
    const auto n = static_cast<Eigen::Index>(B.dim(1));
    Tensor out({A.dim(0), B.dim(1)});
    MapMat(out.storage().data(), m, n).noalias() =
        ConstMapMat(A.storage().data(), m, k) * ConstMapMat(B.storage().data(), k, n);
    int ia = a.id(), ib = b.id();
    return a.tape().record("matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n](graph::Tape& t, int self) {
        ConstMapMat G(t.out_grad(self).data(), m, n);
        if (auto sa = t.grad_sink(ia); !sa.empty()) {
            MapMat(sa.data(), m, k).noalias() += G * ConstMapMat(t.value(ib).storage().data(), k, n).transpose();
        }
        if (auto sb = t.grad_sink(ib); !sb.empty()) {
            MapMat(sb.data(), k, n).noalias() += ConstMapMat(t.value(ia).storage().data(), m, k).transpose() * G;
        }
    });
}

namespace {

enum class BinKind { Add, Sub, Mul };

Var binary(const char* op, BinKind kind, const Var& a, const Var& b) {
    same_tape(op, a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    Shape shape = broadcast_shape(op, A.shape(), B.shape());
    Tensor out(shape);
    const std::size_t na = A.size(), nb = B.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = A[i % na], y = B[i % nb];
        out[i] = kind == BinKind::Add ? x + y : kind == BinKind::Sub ? x - y : x * y;
    }
    int ia = a.id(), ib = b.id();
    return a.tape().record(op, std::move(out), {ia, ib}, [ia, ib, kind](graph::Tape& t, int self) {
        auto g = t.out_grad(self);
        const auto& A = t.value(ia);
        const auto& B = t.value(ib);
        const std::size_t na = A.size(), nb = B.size();
        if (auto sa = t.grad_sink(ia); !sa.empty()) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                sa[i % na] += kind == BinKind::Mul ? g[i] * B[i % nb] : g[i];
            }
        }
        if (auto sb = t.grad_sink(ib); !sb.empty()) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                double d = kind == BinKind::Add ? g[i] : kind == BinKind::Sub ? -g[i] : g[i] * A[i % na];
                sb[i % nb] += d;
            }
        }
    });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary("add", BinKind::Add, a, b); }
Var sub(const Var& a, const Var& b) { return binary("sub", BinKind::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary("mul", BinKind::Mul, a, b); }

Var scale(const Var& a, double s) {
    return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
    return unary(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(const Var& a, double lo, double hi) {
    if (!(lo <= hi)) throw Error("clamp: lo > hi");
    return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                 [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
    const auto& x = a.value();
    double s = 0.0;
    for (double v : x.storage()) s += v;
    int ia = a.id();
    return a.tape().record("sum", Tensor::scalar(s), {ia}, [ia](graph::Tape& t, int self) {
        auto sink = t.grad_sink(ia);
        double g = t.out_grad(self)[0];
        for (double& v : sink) v += g;
    });
}

Var mean(const Var& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var reshape(const Var& a, Shape shape) {
    if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
    Tensor out = a.value().reshaped(std::move(shape));
    int ia = a.id();
    return a.tape().record("reshape", std::move(out), {ia}, [ia](graph::Tape& t, int self) {
        auto sink = t.grad_sink(ia);
        auto g = t.out_grad(self);
        for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += g[i];
    });
}

namespace {

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<int> ids;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        same_tape("concat", parts.front(), p);
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
        if (!ok) shape_fail("concat", first, s);
        out_shape[axis] += s[axis];
        ids.push_back(p.id());
        lens.push_back(s[axis]);
    }
    Tensor out(out_shape);
    const AxisSplit os = split_axis(out_shape, axis);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].value();
        for (std::size_t o = 0; o < os.outer; ++o) {
            std::copy_n(v.storage().begin() + static_cast<std::ptrdiff_t>(o * lens[k] * os.inner), lens[k] * os.inner,
                        out.storage().begin() + static_cast<std::ptrdiff_t>((o * os.len + offset) * os.inner));
        }
        offset += lens[k];
    }
    return parts.front().tape().record("concat", std::move(out), ids, [ids, lens, os](graph::Tape& t, int self) {
        auto g = t.out_grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (auto sink = t.grad_sink(ids[k]); !sink.empty()) {
                for (std::size_t o = 0; o < os.outer; ++o) {
                    for (std::size_t i = 0; i < lens[k] * os.inner; ++i) {
                        sink[o * lens[k] * os.inner + i] += g[(o * os.len + offset) * os.inner + i];
                    }
                }
            }
            offset += lens[k];
        }
    });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (axis >= s.size() || begin >= end || end > s[axis]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for shape " + shape_str(s));
    }
    const AxisSplit as = split_axis(s, axis);
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    Tensor out(out_shape);
    const std::size_t run = (end - begin) * as.inner;
    const auto& v = a.value().storage();
    for (std::size_t o = 0; o < as.outer; ++o) {
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o * as.len + begin) * as.inner), run,
                    out.storage().begin() + static_cast<std::ptrdiff_t>(o * run));
    }
    int ia = a.id();
    return a.tape().record("slice", std::move(out), {ia}, [ia, as, begin, run](graph::Tape& t, int self) {
        auto sink = t.grad_sink(ia);
        if (sink.empty()) return;
        auto g = t.out_grad(self);
        for (std::size_t o = 0; o < as.outer; ++o) {
            for (std::size_t i = 0; i < run; ++i) sink[(o * as.len + begin) * as.inner + i] += g[o * run + i];
        }
    });
}

Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dConfig cfg) {
    same_tape("conv2d", x, weight);
    same_tape("conv2d", x, bias);
    const auto& X = x.value();
    const auto& W = weight.value();
    if (X.rank() != 4 || W.rank() != 4 || W.dim(1) != X.dim(1) || W.dim(2) != W.dim(3)) {
        shape_fail("conv2d", X.shape(), W.shape(), "expected x (B,C,H,W) and weight (O,C,K,K)");
    }
    if (bias.shape() != Shape{W.dim(0)}) shape_fail("conv2d", W.shape(), bias.shape(), "bias must be (O)");
    if (cfg.stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const std::size_t O = W.dim(0), K = W.dim(2), s = cfg.stride, p = cfg.padding;
    if (H + 2 * p < K || Wd + 2 * p < K) shape_fail("conv2d", X.shape(), W.shape(), "kernel larger than padded input");
    const std::size_t OH = (H + 2 * p - K) / s + 1, OW = (Wd + 2 * p - K) / s + 1;
    const std::size_t P = OH * OW, rows = C * K * K, cols_n = B * P;

    auto cols = std::make_shared<std::vector<double>>(rows * cols_n, 0.0);
    const auto& xs = X.storage();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < K; ++ki) {
            for (std::size_t kj = 0; kj < K; ++kj) {
                double* row = cols->data() + ((c * K + ki) * K + kj) * cols_n;
                for (std::size_t b = 0; b < B; ++b) {
                    const double* img = xs.data() + (b * C + c) * H * Wd;
                    for (std::size_t oy = 0; oy < OH; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ki) - static_cast<std::ptrdiff_t>(p);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t ox = 0; ox < OW; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kj) - static_cast<std::ptrdiff_t>(p);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(Wd)) continue;
                            row[b * P + oy * OW + ox] = img[static_cast<std::size_t>(iy) * Wd + static_cast<std::size_t>(ix)];
                        }
                    }
                }
            }
        }
    }
    const auto eO = static_cast<Eigen::Index>(O), eR = static_cast<Eigen::Index>(rows),
               eN = static_cast<Eigen::Index>(cols_n);
    RowMat prod = ConstMapMat(W.storage().data(), eO, eR) * ConstMapMat(cols->data(), eR, eN);
    Tensor out({B, O, OH, OW});
    const auto& bv = bias.value().storage();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < O; ++o) {
            double* dst = out.storage().data() + (b * O + o) * P;
            const double* src = prod.data() + o * cols_n + b * P;
            for (std::size_t q = 0; q < P; ++q) dst[q] = src[q] + bv[o];
        }
    }
    int ix = x.id(), iw = weight.id(), ib = bias.id();
    return x.tape().record(
        "conv2d", std::move(out), {ix, iw, ib},
        [=](graph::Tape& t, int self) {
            auto g = t.out_grad(self);
            RowMat G(eO, eN);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t o = 0; o < O; ++o) {
                    std::copy_n(g.data() + (b * O + o) * P, P, G.data() + o * cols_n + b * P);
                }
            }
            if (auto sb = t.grad_sink(ib); !sb.empty()) {
                for (std::size_t o = 0; o < O; ++o) sb[o] += G.row(static_cast<Eigen::Index>(o)).sum();
            }
            if (auto sw = t.grad_sink(iw); !sw.empty()) {
                MapMat(sw.data(), eO, eR).noalias() += G * ConstMapMat(cols->data(), eR, eN).transpose();
            }
            if (auto sx = t.grad_sink(ix); !sx.empty()) {
                RowMat dcols = ConstMapMat(t.value(iw).storage().data(), eO, eR).transpose() * G;
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t ki = 0; ki < K; ++ki) {
                        for (std::size_t kj = 0; kj < K; ++kj) {
                            const double* row = dcols.data() + ((c * K + ki) * K + kj) * cols_n;
                            for (std::size_t b = 0; b < B; ++b) {
                                double* img = sx.data() + (b * C + c) * H * Wd;
                                for (std::size_t oy = 0; oy < OH; ++oy) {
                                    const std::ptrdiff_t iy =
                                        static_cast<std::ptrdiff_t>(oy * s + ki) - static_cast<std::ptrdiff_t>(p);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                    for (std::size_t ox = 0; ox < OW; ++ox) {
                                        const std::ptrdiff_t jx =
                                            static_cast<std::ptrdiff_t>(ox * s + kj) - static_cast<std::ptrdiff_t>(p);
                                        if (jx < 0 || jx >= static_cast<std::ptrdiff_t>(Wd)) continue;
                                        img[static_cast<std::size_t>(iy) * Wd + static_cast<std::size_t>(jx)] +=
                                            row[b * P + oy * OW + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, graph::Parameter& running_mean,
                graph::Parameter& running_var, const BatchNormConfig& cfg) {
    const auto& X = x.value();
    if (X.rank() != 4) throw ShapeError("batchnorm2d: expected (B,C,H,W), got " + shape_str(X.shape()));
    const std::size_t B = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
    const Shape cshape{C};
    if (gamma.shape() != cshape || beta.shape() != cshape || running_mean.value.shape() != cshape ||
        running_var.value.shape() != cshape) {
        shape_fail("batchnorm2d", X.shape(), gamma.shape(), "per-channel parameters must be (C)");
    }
    const std::size_t count = B * HW;
    const bool train = cfg.mode == BatchNormMode::Train;
    if (train && count < 2) throw ShapeError("batchnorm2d: train mode needs more than one value per channel");

    auto xhat = std::make_shared<std::vector<double>>(X.size());
    auto invstd = std::make_shared<std::vector<double>>(C);
    const auto& xs = X.storage();
    const auto& gs = gamma.value().storage();
    const auto& bs = beta.value().storage();
    Tensor out(X.shape());
    for (std::size_t c = 0; c < C; ++c) {
        double mu, var;
        if (train) {
            double acc = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < HW; ++i) acc += xs[(b * C + c) * HW + i];
            mu = acc / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < HW; ++i) {
                    double d = xs[(b * C + c) * HW + i] - mu;
                    sq += d * d;
                }
            var = sq / static_cast<double>(count);
            if (cfg.update_running) {
                double unbiased = sq / static_cast<double>(count - 1);
                running_mean.value[c] = (1.0 - cfg.momentum) * running_mean.value[c] + cfg.momentum * mu;
                running_var.value[c] = (1.0 - cfg.momentum) * running_var.value[c] + cfg.momentum * unbiased;
            }
        } else {
            mu = running_mean.value[c];
            var = running_var.value[c];
        }
        const double is = 1.0 / std::sqrt(var + cfg.eps);
        (*invstd)[c] = is;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t i = 0; i < HW; ++i) {
                const std::size_t k = (b * C + c) * HW + i;
                const double h = (xs[k] - mu) * is;
                (*xhat)[k] = h;
                out[k] = gs[c] * h + bs[c];
            }
        }
    }
    int ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().record("batchnorm2d", std::move(out), {ix, ig, ib}, [=](graph::Tape& t, int self) {
        auto g = t.out_grad(self);
        const auto& gam = t.value(ig).storage();
        auto sx = t.grad_sink(ix);
        auto sg = t.grad_sink(ig);
        auto sb = t.grad_sink(ib);
        for (std::size_t c = 0; c < C; ++c) {
            double sum_g = 0.0, sum_gh = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < HW; ++i) {
                    const std::size_t k = (b * C + c) * HW + i;
                    sum_g += g[k];
                    sum_gh += g[k] * (*xhat)[k];
                }
            if (!sb.empty()) sb[c] += sum_g;
            if (!sg.empty()) sg[c] += sum_gh;
            if (sx.empty()) continue;
            const double scale_c = gam[c] * (*invstd)[c];
            const double n = static_cast<double>(count);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < HW; ++i) {
                    const std::size_t k = (b * C + c) * HW + i;
                    if (train) {
                        sx[k] += scale_c * (g[k] - sum_g / n - (*xhat)[k] * sum_gh / n);
                    } else {
                        sx[k] += scale_c * g[k];
                    }
                }
        }
    });
}

}  // namespace mcevae::ops
