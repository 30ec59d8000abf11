#include "ciso/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numbers>

namespace ciso::num {

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (active_tape() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void record(const char* op, std::function<void()> fn) { active_tape()->record(op, std::move(fn)); }

enum class Broadcast { Same, Scalar, Suffix };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (b.size() == 1) return Broadcast::Scalar;
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
        return Broadcast::Suffix;
    }
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " +
                         shape_str(as));
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Dfdx dfdx) {
    const bool track = tracking({&x});
    Tensor out(x.shape(), 0.0, track);
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
    if (track) {
        record(op, [x, out, dfdx]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto xg = x.grad();
            auto xv = x.values();
            auto ov = out.values();
            for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * dfdx(xv[i], ov[i]);
        });
    }
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const bool track = tracking({&a, &b});
    Tensor out({m, n}, 0.0, track);
    auto A = a.values();
    auto B = b.values();
    auto C = out.values();
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = &C[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &B[p * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    if (track) {
        record("matmul", [a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            auto G = out.grad_view();
            auto A = a.values();
            auto B = b.values();
            if (a.requires_grad()) {
                auto dA = a.grad();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = &G[i * n];
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = &B[p * n];
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        dA[i * k + p] += acc;
                    }
                }
            }
            if (b.requires_grad()) {
                auto dB = b.grad();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = &G[i * n];
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = A[i * k + p];
                        if (aip == 0.0) continue;
                        double* drow = &dB[p * n];
                        for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                    a.dim(2) == (transpose_b ? b.dim(2) : b.dim(1));
    if (!ok) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
    }
    const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    const bool track = tracking({&a, &b});
    Tensor out({g, m, n}, 0.0, track);
    auto A = a.values();
    auto B = b.values();
    auto C = out.values();
    for (std::size_t q = 0; q < g; ++q) {
        const double* Aq = &A[q * m * k];
        const double* Bq = &B[q * k * n];
        double* Cq = &C[q * m * n];
        if (transpose_b) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < k; ++p) acc += Aq[i * k + p] * Bq[j * k + p];
                    Cq[i * n + j] = acc;
                }
            }
        } else {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = Aq[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) Cq[i * n + j] += aip * Bq[p * n + j];
                }
            }
        }
    }
    if (track) {
        record("bmm", [a, b, out, g, m, k, n, transpose_b]() mutable {
            if (!out.has_grad()) return;
            auto G = out.grad_view();
            auto A = a.values();
            auto B = b.values();
            std::span<double> dA, dB;
            if (a.requires_grad()) dA = a.grad();
            if (b.requires_grad()) dB = b.grad();
            for (std::size_t q = 0; q < g; ++q) {
                const double* Gq = &G[q * m * n];
                const double* Aq = &A[q * m * k];
                const double* Bq = &B[q * k * n];
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gij = Gq[i * n + j];
                        if (gij == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) {
                            const std::size_t bidx = transpose_b ? j * k + p : p * n + j;
                            if (!dA.empty()) dA[q * m * k + i * k + p] += gij * Bq[bidx];
                            if (!dB.empty()) dB[q * k * n + bidx] += gij * Aq[i * k + p];
                        }
                    }
                }
            }
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
    const Broadcast kind = broadcast_kind(a, b, op);
    const bool track = tracking({&a, &b});
    Tensor out(a.shape(), 0.0, track);
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    const std::size_t bn = b.size();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double bi = kind == Broadcast::Same ? bv[i] : (kind == Broadcast::Scalar ? bv[0] : bv[i % bn]);
        ov[i] = fwd(av[i], bi);
    }
    if (track) {
        record(op, [a, b, out, kind, bn, da, db]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto av = a.values();
            auto bv = b.values();
            std::span<double> ag, bg;
            if (a.requires_grad()) ag = a.grad();
            if (b.requires_grad()) bg = b.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t bi = kind == Broadcast::Same ? i : (kind == Broadcast::Scalar ? 0 : i % bn);
                if (!ag.empty()) ag[i] += g[i] * da(av[i], bv[bi]);
                if (!bg.empty()) bg[bi] += g[i] * db(av[i], bv[bi]);
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
    return unary(
        a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid",
        [](double v) {
            const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            return std::clamp(s, kProbEps, 1.0 - kProbEps);
        },
        [](double, double s) { return s * (1.0 - s); });
}

Tensor log(const Tensor& x) {
    static std::once_flag warned;
    bool clamped = false;
    for (double v : x.values()) clamped |= !(v >= kProbEps);
    if (clamped) {
        std::call_once(warned, [] {
            std::cerr << "warning: log() input below " << kProbEps << " clamped\n";
        });
    }
    return unary(
        x, "log", [](double v) { return std::log(std::max(v, kProbEps)); },
        [](double v, double) { return v >= kProbEps ? 1.0 / v : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](double v, double) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Tensor sin(const Tensor& x) {
    return unary(
        x, "sin", [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
    return unary(
        x, "cos", [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor square(const Tensor& x) {
    return unary(
        x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() == 0) throw DimensionError("softmax_rows on a scalar");
    const std::size_t n = x.shape().back();
    const std::size_t rows = n == 0 ? 0 : x.size() / n;
    const bool track = tracking({&x});
    Tensor out(x.shape(), 0.0, track);
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &xv[r * n];
        double* o = &ov[r * n];
        const double mx = *std::max_element(in, in + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            z += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= z;
    }
    if (track) {
        record("softmax_rows", [x, out, rows, n]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto y = out.values();
            auto xg = x.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                for (std::size_t j = 0; j < n; ++j) xg[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t n = x.shape().back();
    if (gamma.size() != n || beta.size() != n) {
        throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match last axis of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.size() / n;
    const bool track = tracking({&x, &gamma, &beta});
    Tensor out(x.shape(), 0.0, track);
    std::vector<double> xhat(x.size());
    std::vector<double> rstd(rows);
    auto xv = x.values();
    auto ov = out.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xv[r * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xv[r * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (xv[r * n + j] - mu) * rstd[r];
            ov[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
        }
    }
    if (track) {
        record("layer_norm", [x, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd), rows,
                              n]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto gv = gamma.values();
            std::span<double> dx, dg, db;
            if (x.requires_grad()) dx = x.grad();
            if (gamma.requires_grad()) dg = gamma.grad();
            if (beta.requires_grad()) db = beta.grad();
            std::vector<double> dxhat(n);
            for (std::size_t r = 0; r < rows; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gj = g[r * n + j];
                    if (!dg.empty()) dg[j] += gj * xhat[r * n + j];
                    if (!db.empty()) db[j] += gj;
                    dxhat[j] = gj * gv[j];
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat[r * n + j];
                }
                if (dx.empty()) continue;
                m1 /= static_cast<double>(n);
                m2 /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    dx[r * n + j] += rstd[r] * (dxhat[j] - m1 - xhat[r * n + j] * m2);
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    const bool track = tracking({&x});
    Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), track);
    if (track) {
        record("reshape", [x, out]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto xg = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
        });
    }
    return out;
}

Tensor swap_axes12(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("swap_axes12 expects rank 4, got " + shape_str(x.shape()));
    const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
    const bool track = tracking({&x});
    Tensor out({a, c, b, d}, 0.0, track);
    auto xv = x.values();
    auto ov = out.values();
    auto src = [=](std::size_t i, std::size_t j, std::size_t k) { return ((i * b + j) * c + k) * d; };
    auto dst = [=](std::size_t i, std::size_t j, std::size_t k) { return ((i * c + k) * b + j) * d; };
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t k = 0; k < c; ++k)
                std::copy_n(&xv[src(i, j, k)], d, &ov[dst(i, j, k)]);
    if (track) {
        record("swap_axes12", [x, out, a, b, c, d, src, dst]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto xg = x.grad();
            for (std::size_t i = 0; i < a; ++i)
                for (std::size_t j = 0; j < b; ++j)
                    for (std::size_t k = 0; k < c; ++k)
                        for (std::size_t l = 0; l < d; ++l) xg[src(i, j, k) + l] += g[dst(i, j, k) + l];
        });
    }
    return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() == 0 ||
        !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
        throw DimensionError("concat_last: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t na = a.shape().back(), nb = b.shape().back();
    const std::size_t rows = shape_size(Shape(a.shape().begin(), a.shape().end() - 1));
    Shape shape = a.shape();
    shape.back() = na + nb;
    const bool track = tracking({&a, &b});
    Tensor out(shape, 0.0, track);
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(&av[r * na], na, &ov[r * (na + nb)]);
        std::copy_n(&bv[r * nb], nb, &ov[r * (na + nb) + na]);
    }
    if (track) {
        record("concat_last", [a, b, out, rows, na, nb]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            if (a.requires_grad()) {
                auto ag = a.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < na; ++j) ag[r * na + j] += g[r * (na + nb) + j];
            }
            if (b.requires_grad()) {
                auto bg = b.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < nb; ++j) bg[r * nb + j] += g[r * (na + nb) + na + j];
            }
        });
    }
    return out;
}

Tensor concat_axis1(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
        throw DimensionError("concat_axis1: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t B = a.dim(0), n1 = a.dim(1), n2 = b.dim(1), d = a.dim(2);
    const bool track = tracking({&a, &b});
    Tensor out({B, n1 + n2, d}, 0.0, track);
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < B; ++i) {
        std::copy_n(&av[i * n1 * d], n1 * d, &ov[i * (n1 + n2) * d]);
        std::copy_n(&bv[i * n2 * d], n2 * d, &ov[(i * (n1 + n2) + n1) * d]);
    }
    if (track) {
        record("concat_axis1", [a, b, out, B, n1, n2, d]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            if (a.requires_grad()) {
                auto ag = a.grad();
                for (std::size_t i = 0; i < B; ++i)
                    for (std::size_t j = 0; j < n1 * d; ++j) ag[i * n1 * d + j] += g[i * (n1 + n2) * d + j];
            }
            if (b.requires_grad()) {
                auto bg = b.grad();
                for (std::size_t i = 0; i < B; ++i)
                    for (std::size_t j = 0; j < n2 * d; ++j)
                        bg[i * n2 * d + j] += g[(i * (n1 + n2) + n1) * d + j];
            }
        });
    }
    return out;
}

Tensor slice_axis1(const Tensor& x, std::size_t start, std::size_t len) {
    if (x.rank() != 3 || start + len > x.dim(1)) {
        throw DimensionError("slice_axis1 [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
    const bool track = tracking({&x});
    Tensor out({B, len, d}, 0.0, track);
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < B; ++i) std::copy_n(&xv[(i * L + start) * d], len * d, &ov[i * len * d]);
    if (track) {
        record("slice_axis1", [x, out, B, L, d, start, len]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto xg = x.grad();
            for (std::size_t i = 0; i < B; ++i)
                for (std::size_t j = 0; j < len * d; ++j) xg[(i * L + start) * d + j] += g[i * len * d + j];
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
    if (table.rank() != 2) throw DimensionError("gather_rows expects a 2-D table, got " + shape_str(table.shape()));
    const std::size_t V = table.dim(0), d = table.dim(1);
    for (auto i : index) {
        if (i >= V) throw DimensionError("gather_rows: index " + std::to_string(i) + " >= " + std::to_string(V));
    }
    const bool track = tracking({&table});
    Tensor out({index.size(), d}, 0.0, track);
    auto tv = table.values();
    auto ov = out.values();
    for (std::size_t r = 0; r < index.size(); ++r) std::copy_n(&tv[index[r] * d], d, &ov[r * d]);
    if (track) {
        record("gather_rows", [table, out, idx = std::vector<std::size_t>(index.begin(), index.end()),
                               d]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto tg = table.grad();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < d; ++j) tg[idx[r] * d + j] += g[r * d + j];
        });
    }
    return out;
}

Tensor replace_rows(const Tensor& base, std::span<const std::size_t> rows, const Tensor& src) {
    if (base.rank() != 2 || src.rank() != 2 || src.dim(0) != rows.size() || src.dim(1) != base.dim(1)) {
        throw DimensionError("replace_rows: base " + shape_str(base.shape()) + ", src " + shape_str(src.shape()) +
                             ", " + std::to_string(rows.size()) + " rows");
    }
    const std::size_t N = base.dim(0), d = base.dim(1);
    std::vector<std::uint8_t> replaced(N, 0);
    for (auto r : rows) {
        if (r >= N || replaced[r]) throw DimensionError("replace_rows: invalid or repeated row " + std::to_string(r));
        replaced[r] = 1;
    }
    const bool track = tracking({&base, &src});
    Tensor out(base.shape(), std::vector<double>(base.values().begin(), base.values().end()), track);
    auto sv = src.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(&sv[i * d], d, &ov[rows[i] * d]);
    if (track) {
        record("replace_rows", [base, src, out, replaced = std::move(replaced),
                                idx = std::vector<std::size_t>(rows.begin(), rows.end()), N, d]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            if (base.requires_grad()) {
                auto bg = base.grad();
                for (std::size_t r = 0; r < N; ++r) {
                    if (replaced[r]) continue;
                    for (std::size_t j = 0; j < d; ++j) bg[r * d + j] += g[r * d + j];
                }
            }
            if (src.requires_grad()) {
                auto sg = src.grad();
                for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < d; ++j) sg[i * d + j] += g[idx[i] * d + j];
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    const bool track = tracking({&x});
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out(Shape{}, std::vector<double>{s}, track);
    if (track) {
        record("sum", [x, out]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad_view()[0];
            for (double& v : x.grad()) v += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(std::max<std::size_t>(x.size(), 1))); }

Tensor sum_last(const Tensor& x) {
    if (x.rank() == 0) throw DimensionError("sum_last on a scalar");
    const std::size_t n = x.shape().back();
    Shape shape(x.shape().begin(), x.shape().end() - 1);
    const std::size_t rows = shape_size(shape);
    const bool track = tracking({&x});
    Tensor out(shape, 0.0, track);
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j];
        ov[r] = s;
    }
    if (track) {
        record("sum_last", [x, out, rows, n]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad_view();
            auto xg = x.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) xg[r * n + j] += g[r];
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
    std::bernoulli_distribution keep(1.0 - p);
    Tensor mask(x.shape(), 0.0);
    const double s = 1.0 / (1.0 - p);
    for (double& m : mask.values()) m = keep(rng) ? s : 0.0;
    return mul(x, mask);
}

Tensor bce_masked(const Tensor& pred, const Tensor& target, std::span<const std::uint8_t> mask) {
    if (pred.rank() != 2 || pred.shape() != target.shape() || mask.size() != pred.size()) {
        throw DimensionError("bce_masked: pred " + shape_str(pred.shape()) + ", target " +
                             shape_str(target.shape()) + ", mask of " + std::to_string(mask.size()));
    }
    const double inv_rows = 1.0 / static_cast<double>(std::max<std::size_t>(pred.dim(0), 1));
    const bool track = tracking({&pred});
    auto p = pred.values();
    auto y = target.values();
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!mask[i]) continue;
        const double pi = std::clamp(p[i], kProbEps, 1.0 - kProbEps);
        loss -= y[i] * std::log(pi) + (1.0 - y[i]) * std::log(1.0 - pi);
    }
    Tensor out(Shape{}, std::vector<double>{loss * inv_rows}, track);
    if (track) {
        record("bce_masked", [pred, target, out, m = std::vector<std::uint8_t>(mask.begin(), mask.end()),
                              inv_rows]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad_view()[0] * inv_rows;
            auto p = pred.values();
            auto y = target.values();
            auto pg = pred.grad();
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (!m[i]) continue;
                const double pi = std::clamp(p[i], kProbEps, 1.0 - kProbEps);
                pg[i] += g * (pi - y[i]) / (pi * (1.0 - pi));
            }
        });
    }
    return out;
}

}  // namespace ciso::num
