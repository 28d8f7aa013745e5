#include "tikuda/autodiff.hpp"

#include "tikuda/errors.hpp"
#include "tikuda/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace tikuda::ad {

const Matrix& Value::data() const { return tape_->data(id_); }
const Matrix& Value::grad() const { return tape_->grad(id_); }
bool Value::requires_grad() const { return tape_->requires_grad(id_); }

double Value::item() const {
    const Matrix& m = data();
    if (m.rows() != 1 || m.cols() != 1) {
        throw NotScalar("item: value has shape " + m.shape_string());
    }
    return m(0, 0);
}

Value Tape::variable(Matrix m) {
    nodes_.push_back(Node{std::move(m), Matrix(), true, nullptr});
    return {this, nodes_.size() - 1};
}

Value Tape::constant(Matrix m) {
    nodes_.push_back(Node{std::move(m), Matrix(), false, nullptr});
    return {this, nodes_.size() - 1};
}

Value Tape::record(Matrix value, std::initializer_list<Value> inputs, Adjoint adjoint) {
    return record(std::move(value), std::span<const Value>(inputs.begin(), inputs.size()), std::move(adjoint));
}

Value Tape::record(Matrix value, std::span<const Value> inputs, Adjoint adjoint) {
    bool needs = false;
    for (const Value& v : inputs) {
        if (v.tape() != this) {
            throw Error("autodiff: operands belong to different tapes");
        }
        needs = needs || nodes_[v.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(adjoint) : nullptr});
    return {this, nodes_.size() - 1};
}

void Tape::backward(const Value& loss) {
    const Matrix& l = data(loss.id());
    if (l.rows() != 1 || l.cols() != 1) {
        throw NotScalar("backward: loss has shape " + l.shape_string() + ", expected 1x1");
    }
    grad_buffer(loss.id())(0, 0) += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.adjoint && !n.grad.empty()) {
            n.adjoint(*this, i);
        }
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_) {
        n.grad = Matrix();
    }
}

Matrix& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) {
        n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

const Matrix& Tape::grad(std::size_t id) { return grad_buffer(id); }

const Matrix* Tape::grad_if_any(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() ? nullptr : &n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    if (!nodes_[id].requires_grad) {
        return;
    }
    Matrix& buf = grad_buffer(id);
    require_same_shape(buf, g, "accumulate");
    buf += g;
}

namespace {

Tape& tape_of(const Value& a) {
    if (!a.valid()) {
        throw Error("autodiff: uninitialised value");
    }
    return *a.tape();
}

const Matrix& upstream(Tape& t, std::size_t self) { return *t.grad_if_any(self); }

// Broadcast geometry of a binary elementwise op.
struct Broadcast {
    std::size_t rows;
    std::size_t cols;

    static Broadcast of(const Matrix& a, const Matrix& b, const char* what) {
        auto dim = [&](std::size_t x, std::size_t y) {
            if (x == y || y == 1) {
                return x;
            }
            if (x == 1) {
                return y;
            }
            throw ShapeMismatch(std::string(what) + ": cannot broadcast " + a.shape_string() + " with " +
                                b.shape_string());
        };
        return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
    }
};

inline double at(const Matrix& m, std::size_t r, std::size_t c) {
    return m(m.rows() == 1 ? 0 : r, m.cols() == 1 ? 0 : c);
}

inline double& at(Matrix& m, std::size_t r, std::size_t c) {
    return m(m.rows() == 1 ? 0 : r, m.cols() == 1 ? 0 : c);
}

// f(x, y) forward; dfx, dfy partials given (x, y, out).
template <class F, class Dx, class Dy>
Value binary(const Value& a, const Value& b, const char* what, F f, Dx dfx, Dy dfy) {
    Tape& t = tape_of(a);
    const Matrix& x = a.data();
    const Matrix& y = b.data();
    const Broadcast bc = Broadcast::of(x, y, what);
    Matrix out(bc.rows, bc.cols);
    for (std::size_t r = 0; r < bc.rows; ++r) {
        for (std::size_t c = 0; c < bc.cols; ++c) {
            out(r, c) = f(at(x, r, c), at(y, r, c));
        }
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return t.record(std::move(out), {a, b}, [ia, ib, bc, dfx, dfy](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        const Matrix& x = tp.data(ia);
        const Matrix& y = tp.data(ib);
        const Matrix& o = tp.data(self);
        const bool need_a = tp.requires_grad(ia);
        const bool need_b = tp.requires_grad(ib);
        Matrix ga = need_a ? Matrix(x.rows(), x.cols()) : Matrix();
        Matrix gb = need_b ? Matrix(y.rows(), y.cols()) : Matrix();
        for (std::size_t r = 0; r < bc.rows; ++r) {
            for (std::size_t c = 0; c < bc.cols; ++c) {
                const double xv = at(x, r, c);
                const double yv = at(y, r, c);
                if (need_a) {
                    at(ga, r, c) += g(r, c) * dfx(xv, yv, o(r, c));
                }
                if (need_b) {
                    at(gb, r, c) += g(r, c) * dfy(xv, yv, o(r, c));
                }
            }
        }
        if (need_a) {
            tp.accumulate(ia, ga);
        }
        if (need_b) {
            tp.accumulate(ib, gb);
        }
    });
}

// Elementwise unary op; df(x, y) is the derivative given input and output.
template <class F, class D>
Value unary(const Value& a, F f, D df) {
    Tape& t = tape_of(a);
    Matrix out = a.data();
    for (double& v : out.flat()) {
        v = f(v);
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia, df](Tape& tp, std::size_t self) {
        const auto g = upstream(tp, self).flat();
        const auto x = tp.data(ia).flat();
        const auto y = tp.data(self).flat();
        Matrix& ga = tp.grad_buffer(ia);
        auto gf = ga.flat();
        for (std::size_t i = 0; i < gf.size(); ++i) {
            gf[i] += g[i] * df(x[i], y[i]);
        }
    });
}

Value scalar_result(Tape& t, double v, std::initializer_list<Value> in, Tape::Adjoint adj) {
    return t.record(Matrix(1, 1, v), in, std::move(adj));
}

}  // namespace

Value matmul(const Value& a, const Value& b) {
    Tape& t = tape_of(a);
    if (a.cols() != b.rows()) {
        throw ShapeMismatch("matmul: " + a.data().shape_string() + " x " + b.data().shape_string());
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return t.record(kernels::matmul(a.data(), b.data()), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        if (tp.requires_grad(ia)) {
            tp.accumulate(ia, kernels::matmul_nt(g, tp.data(ib)));
        }
        if (tp.requires_grad(ib)) {
            tp.accumulate(ib, kernels::matmul_tn(tp.data(ia), g));
        }
    });
}

Value add(const Value& a, const Value& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Value sub(const Value& a, const Value& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Value elementwise_mul(const Value& a, const Value& b) {
    return binary(
        a, b, "elementwise_mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Value div(const Value& a, const Value& b) {
    return binary(
        a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double o) { return -o / y; });
}

Value scalar_mul(const Value& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Value add_scalar(const Value& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Value concat_cols(std::span<const Value> parts) {
    if (parts.empty()) {
        throw ShapeMismatch("concat_cols: no operands");
    }
    Tape& t = tape_of(parts.front());
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const Value& p : parts) {
        if (p.rows() != rows) {
            throw ShapeMismatch("concat_cols: row counts differ (" + std::to_string(rows) + " vs " +
                                std::to_string(p.rows()) + ")");
        }
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<std::size_t> ids;
    std::size_t off = 0;
    for (const Value& p : parts) {
        const Matrix& m = p.data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(m.row(r).data(), m.cols(), &out(r, off));
        }
        off += m.cols();
        ids.push_back(p.id());
    }
    return t.record(std::move(out), parts, [ids](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        std::size_t off = 0;
        for (std::size_t id : ids) {
            const std::size_t w = tp.data(id).cols();
            if (tp.requires_grad(id)) {
                Matrix& gb = tp.grad_buffer(id);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < w; ++c) {
                        gb(r, c) += g(r, off + c);
                    }
                }
            }
            off += w;
        }
    });
}

Value slice_cols(const Value& a, std::size_t start, std::size_t count) {
    Tape& t = tape_of(a);
    const Matrix& m = a.data();
    if (start + count > m.cols()) {
        throw ShapeMismatch("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                            ") out of " + m.shape_string());
    }
    Matrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        std::copy_n(m.row(r).data() + start, count, &out(r, 0));
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia, start, count](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        Matrix& ga = tp.grad_buffer(ia);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < count; ++c) {
                ga(r, start + c) += g(r, c);
            }
        }
    });
}

Value transpose(const Value& a) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    return t.record(a.data().transposed(), {a},
                    [ia](Tape& tp, std::size_t self) { tp.accumulate(ia, upstream(tp, self).transposed()); });
}

Value reshape(const Value& a, std::size_t rows, std::size_t cols) {
    Tape& t = tape_of(a);
    if (rows * cols != a.data().size()) {
        throw ShapeMismatch("reshape: " + a.data().shape_string() + " to " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
    const std::size_t ia = a.id();
    Matrix out(rows, cols, std::vector<double>(a.data().flat().begin(), a.data().flat().end()));
    return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
        const auto g = upstream(tp, self).flat();
        auto ga = tp.grad_buffer(ia).flat();
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
        }
    });
}

Value sigmoid(const Value& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0.0) {
                return 1.0 / (1.0 + std::exp(-x));
            }
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Value gru_gates(const Value& gi, const Value& gh, const Value& h) {
    Tape& t = tape_of(gi);
    const std::size_t m = h.rows();
    const std::size_t d = h.cols();
    if (gi.rows() != m || gh.rows() != m || gi.cols() != 3 * d || gh.cols() != 3 * d) {
        throw ShapeMismatch("gru_gates: gi " + gi.data().shape_string() + ", gh " + gh.data().shape_string() +
                            ", h " + h.data().shape_string());
    }
    auto sigmoid_of = [](double x) {
        if (x >= 0.0) {
            return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
    };
    // gates holds r, z, n side by side for the adjoint.
    Matrix gates(m, 3 * d);
    Matrix out(m, d);
    const Matrix& a = gi.data();
    const Matrix& b = gh.data();
    const Matrix& hp = h.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a.row(i).data();
        const double* bi = b.row(i).data();
        const double* hi = hp.row(i).data();
        double* g = gates.row(i).data();
        double* o = out.row(i).data();
        for (std::size_t k = 0; k < d; ++k) {
            const double r = sigmoid_of(ai[k] + bi[k]);
            const double z = sigmoid_of(ai[d + k] + bi[d + k]);
            const double n = std::tanh(ai[2 * d + k] + r * bi[2 * d + k]);
            g[k] = r;
            g[d + k] = z;
            g[2 * d + k] = n;
            o[k] = n + z * (hi[k] - n);
        }
    }
    const std::size_t ia = gi.id();
    const std::size_t ib = gh.id();
    const std::size_t ih = h.id();
    return t.record(std::move(out), {gi, gh, h},
                    [ia, ib, ih, m, d, gates = std::move(gates)](Tape& tp, std::size_t self) {
                        const Matrix& up = upstream(tp, self);
                        const Matrix& b = tp.data(ib);
                        const Matrix& hp = tp.data(ih);
                        Matrix da(m, 3 * d);
                        Matrix db(m, 3 * d);
                        Matrix dh(m, d);
                        for (std::size_t i = 0; i < m; ++i) {
                            const double* u = up.row(i).data();
                            const double* g = gates.row(i).data();
                            const double* bi = b.row(i).data();
                            const double* hi = hp.row(i).data();
                            double* ga = da.row(i).data();
                            double* gb = db.row(i).data();
                            double* gh = dh.row(i).data();
                            for (std::size_t k = 0; k < d; ++k) {
                                const double r = g[k];
                                const double z = g[d + k];
                                const double n = g[2 * d + k];
                                const double pn = u[k] * (1.0 - z) * (1.0 - n * n);
                                const double pz = u[k] * (hi[k] - n) * z * (1.0 - z);
                                const double pr = pn * bi[2 * d + k] * r * (1.0 - r);
                                ga[k] = pr;
                                gb[k] = pr;
                                ga[d + k] = pz;
                                gb[d + k] = pz;
                                ga[2 * d + k] = pn;
                                gb[2 * d + k] = pn * r;
                                gh[k] = u[k] * z;
                            }
                        }
                        tp.accumulate(ia, da);
                        tp.accumulate(ib, db);
                        tp.accumulate(ih, dh);
                    });
}

Value tanh(const Value& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Value leaky_relu(const Value& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Value exp(const Value& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Value log(const Value& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Value sqrt(const Value& a) {
    return unary(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Value clamp(const Value& a, double lo, double hi) {
    return unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Value sum(const Value& a) {
    Tape& t = tape_of(a);
    double s = 0.0;
    for (double v : a.data().flat()) {
        s += v;
    }
    const std::size_t ia = a.id();
    return scalar_result(t, s, {a}, [ia](Tape& tp, std::size_t self) {
        const double g = upstream(tp, self)(0, 0);
        for (double& v : tp.grad_buffer(ia).flat()) {
            v += g;
        }
    });
}

Value mean(const Value& a) {
    const std::size_t n = a.data().size();
    if (n == 0) {
        throw ShapeMismatch("mean: empty operand");
    }
    return scalar_mul(sum(a), 1.0 / static_cast<double>(n));
}

Value l1_norm(const Value& a) {
    Tape& t = tape_of(a);
    double s = 0.0;
    for (double v : a.data().flat()) {
        s += std::abs(v);
    }
    const std::size_t ia = a.id();
    return scalar_result(t, s, {a}, [ia](Tape& tp, std::size_t self) {
        const double g = upstream(tp, self)(0, 0);
        const auto x = tp.data(ia).flat();
        auto ga = tp.grad_buffer(ia).flat();
        for (std::size_t i = 0; i < x.size(); ++i) {
            ga[i] += x[i] > 0.0 ? g : (x[i] < 0.0 ? -g : 0.0);
        }
    });
}

Value l2_norm_cols(const Value& a) {
    Tape& t = tape_of(a);
    const Matrix& m = a.data();
    Matrix out(1, m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(0, c) += m(r, c) * m(r, c);
        }
    }
    for (double& v : out.flat()) {
        v = std::sqrt(v);
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        const Matrix& n = tp.data(self);
        const Matrix& x = tp.data(ia);
        Matrix& ga = tp.grad_buffer(ia);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) {
                if (n(0, c) > 0.0) {
                    ga(r, c) += g(0, c) * x(r, c) / n(0, c);
                }
            }
        }
    });
}

Value sum_rows(const Value& a) {
    Tape& t = tape_of(a);
    const Matrix& m = a.data();
    Matrix out(1, m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(0, c) += m(r, c);
        }
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        Matrix& ga = tp.grad_buffer(ia);
        for (std::size_t r = 0; r < ga.rows(); ++r) {
            for (std::size_t c = 0; c < ga.cols(); ++c) {
                ga(r, c) += g(0, c);
            }
        }
    });
}

Value sum_cols(const Value& a) {
    Tape& t = tape_of(a);
    const Matrix& m = a.data();
    Matrix out(m.rows(), 1);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(r, 0) += m(r, c);
        }
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        Matrix& ga = tp.grad_buffer(ia);
        for (std::size_t r = 0; r < ga.rows(); ++r) {
            for (std::size_t c = 0; c < ga.cols(); ++c) {
                ga(r, c) += g(r, 0);
            }
        }
    });
}

Value softmax_over_group(const Value& scores, std::span<const std::size_t> group) {
    Tape& t = tape_of(scores);
    const Matrix& s = scores.data();
    if (s.cols() != 1 || s.rows() != group.size()) {
        throw ShapeMismatch("softmax_over_group: scores " + s.shape_string() + " with " +
                            std::to_string(group.size()) + " group ids");
    }
    std::size_t groups = 0;
    for (std::size_t g : group) {
        groups = std::max(groups, g + 1);
    }
    std::vector<double> mx(groups, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < group.size(); ++i) {
        mx[group[i]] = std::max(mx[group[i]], s(i, 0));
    }
    std::vector<double> den(groups, 0.0);
    Matrix out(s.rows(), 1);
    for (std::size_t i = 0; i < group.size(); ++i) {
        out(i, 0) = std::exp(s(i, 0) - mx[group[i]]);
        den[group[i]] += out(i, 0);
    }
    for (std::size_t i = 0; i < group.size(); ++i) {
        out(i, 0) /= den[group[i]];
    }
    std::vector<std::size_t> gid(group.begin(), group.end());
    const std::size_t is = scores.id();
    return t.record(std::move(out), {scores}, [is, gid, groups](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        const Matrix& y = tp.data(self);
        std::vector<double> dot(groups, 0.0);
        for (std::size_t i = 0; i < gid.size(); ++i) {
            dot[gid[i]] += y(i, 0) * g(i, 0);
        }
        Matrix& gs = tp.grad_buffer(is);
        for (std::size_t i = 0; i < gid.size(); ++i) {
            gs(i, 0) += y(i, 0) * (g(i, 0) - dot[gid[i]]);
        }
    });
}

Value gather_rows(const Value& a, std::span<const std::size_t> index) {
    Tape& t = tape_of(a);
    const Matrix& m = a.data();
    Matrix out(index.size(), m.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= m.rows()) {
            throw ShapeMismatch("gather_rows: index " + std::to_string(index[i]) + " out of " + m.shape_string());
        }
        std::copy_n(m.row(index[i]).data(), m.cols(), &out(i, 0));
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia, idx](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        Matrix& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(idx[i], c) += g(i, c);
            }
        }
    });
}

Value scatter_add_rows(const Value& a, std::span<const std::size_t> index, std::size_t out_rows) {
    Tape& t = tape_of(a);
    const Matrix& m = a.data();
    if (index.size() != m.rows()) {
        throw ShapeMismatch("scatter_add_rows: " + std::to_string(index.size()) + " indices for " +
                            m.shape_string());
    }
    Matrix out(out_rows, m.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= out_rows) {
            throw ShapeMismatch("scatter_add_rows: index " + std::to_string(index[i]) + " >= " +
                                std::to_string(out_rows));
        }
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(index[i], c) += m(i, c);
        }
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia, idx](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        Matrix& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(i, c) += g(idx[i], c);
            }
        }
    });
}

Value stop_gradient(const Value& a) { return tape_of(a).constant(a.data()); }

Value pairwise_sq_dist(const Value& x, const Value& y) {
    Tape& t = tape_of(x);
    const Matrix& a = x.data();
    const Matrix& b = y.data();
    if (a.cols() != b.cols()) {
        throw ShapeMismatch("pairwise_sq_dist: " + a.shape_string() + " vs " + b.shape_string());
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < a.cols(); ++c) {
                const double d = a(i, c) - b(j, c);
                s += d * d;
            }
            out(i, j) = s;
        }
    }
    const std::size_t ix = x.id();
    const std::size_t iy = y.id();
    return t.record(std::move(out), {x, y}, [ix, iy](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        const Matrix& a = tp.data(ix);
        const Matrix& b = tp.data(iy);
        const bool need_x = tp.requires_grad(ix);
        const bool need_y = tp.requires_grad(iy);
        Matrix gx = need_x ? Matrix(a.rows(), a.cols()) : Matrix();
        Matrix gy = need_y ? Matrix(b.rows(), b.cols()) : Matrix();
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < b.rows(); ++j) {
                const double w = 2.0 * g(i, j);
                if (w == 0.0) {
                    continue;
                }
                for (std::size_t c = 0; c < a.cols(); ++c) {
                    const double d = w * (a(i, c) - b(j, c));
                    if (need_x) {
                        gx(i, c) += d;
                    }
                    if (need_y) {
                        gy(j, c) -= d;
                    }
                }
            }
        }
        if (need_x) {
            tp.accumulate(ix, gx);
        }
        if (need_y) {
            tp.accumulate(iy, gy);
        }
    });
}

Value tikhonov(const Value& z, double alpha) {
    Tape& t = tape_of(z);
    const std::size_t iz = z.id();
    return t.record(kernels::gram(z.data(), alpha), {z}, [iz](Tape& tp, std::size_t self) {
        const Matrix& g = upstream(tp, self);
        tp.accumulate(iz, kernels::matmul(tp.data(iz), g + g.transposed()));
    });
}

Value spd_inverse(const Value& a) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    return t.record(tikuda::spd_inverse(SpdMatrix(a.data())), {a}, [ia](Tape& tp, std::size_t self) {
        const Matrix& x = tp.data(self);
        Matrix ga = kernels::matmul(kernels::matmul(x, upstream(tp, self)), x);
        ga *= -1.0;
        tp.accumulate(ia, ga);
    });
}

Value tikhonov_inverse(const Value& z, double alpha) {
    Tape& t = tape_of(z);
    const std::size_t iz = z.id();
    Matrix inv = tikuda::spd_inverse(SpdMatrix::tikhonov(z.data(), alpha));
    return t.record(std::move(inv), {z}, [iz](Tape& tp, std::size_t self) {
        // dZ = -Z·X·(M + Mᵀ)·X, evaluated left to right so every product is b×p by p×p.
        const Matrix& x = tp.data(self);
        const Matrix& m = upstream(tp, self);
        Matrix zx = kernels::matmul(tp.data(iz), x);
        Matrix gz = kernels::matmul(kernels::matmul(zx, m + m.transposed()), x);
        gz *= -1.0;
        tp.accumulate(iz, gz);
    });
}

Value lambda_max(const Value& a, const PowerIterationOptions& opts) {
    Tape& t = tape_of(a);
    PowerIterationResult r = power_iteration_full(SpdMatrix(a.data()), opts);
    const std::size_t ia = a.id();
    return scalar_result(t, r.eigenvalue, {a}, [ia, v = std::move(r.eigenvector)](Tape& tp, std::size_t self) {
        const double g = upstream(tp, self)(0, 0);
        Matrix& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < v.size(); ++i) {
            for (std::size_t j = 0; j < v.size(); ++j) {
                ga(i, j) += g * v[i] * v[j];
            }
        }
    });
}

namespace {

// First `count` columns of v starting at `start`.
Matrix columns(const Matrix& v, std::size_t start, std::size_t count) {
    Matrix out(v.rows(), count);
    for (std::size_t r = 0; r < v.rows(); ++r) {
        std::copy_n(v.row(r).data() + start, count, &out(r, 0));
    }
    return out;
}

void require_spectrum(const Matrix& g, const SharedSpectrum& s, std::size_t k, const char* what) {
    if (!s || s->eigenvalues.size() != g.rows() || s->eigenvectors.rows() != g.rows() || !g.is_square()) {
        throw ShapeMismatch(std::string(what) + ": spectrum does not match " + g.shape_string());
    }
    if (k > g.rows()) {
        throw OutOfRange(std::string(what) + ": k = " + std::to_string(k) + " exceeds " + std::to_string(g.rows()));
    }
}

}  // namespace

Value pinv_from_spectrum(const Value& g, SharedSpectrum spectrum, std::size_t kept) {
    Tape& t = tape_of(g);
    require_spectrum(g.data(), spectrum, kept, "pinv_from_spectrum");
    const std::size_t p = g.rows();
    const EigenResult& sp = *spectrum;
    for (std::size_t i = 0; i < kept; ++i) {
        if (!(sp.eigenvalues[i] > 0.0)) {
            throw NotPositiveDefinite("pinv_from_spectrum: kept eigenvalue " + std::to_string(i) + " is not positive");
        }
    }
    Matrix vk = columns(sp.eigenvectors, 0, kept);
    Matrix scaled = vk;
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < kept; ++c) {
            scaled(r, c) /= sp.eigenvalues[c];
        }
    }
    Matrix pinv = kept == 0 ? Matrix(p, p) : symmetrize(kernels::matmul_nt(scaled, vk));
    const std::size_t ig = g.id();
    return t.record(std::move(pinv), {g}, [ig, spectrum, kept, vk = std::move(vk)](Tape& tp, std::size_t self) {
        if (kept == 0) {
            return;
        }
        const EigenResult& sp = *spectrum;
        const std::vector<double>& lam = sp.eigenvalues;
        const std::size_t p = lam.size();
        const std::size_t rest = p - kept;
        const Matrix& up = upstream(tp, self);
        Matrix s = up + up.transposed();
        s *= 0.5;
        const double gap_floor = 1e-12 * std::max(1.0, std::abs(lam.front()));
        // Divided differences of f(λ) = 1/λ on the kept set and f = 0 elsewhere.
        auto divided = [&](std::size_t i, std::size_t j) {
            const double fi = 1.0 / lam[i];
            const double fj = j < kept ? 1.0 / lam[j] : 0.0;
            const double d = lam[i] - lam[j];
            if (std::abs(d) <= gap_floor) {
                return -fi * fi;
            }
            return (fi - fj) / d;
        };
        Matrix sv = kernels::matmul_tn(vk, s);  // k×p
        Matrix a = kernels::matmul(sv, vk);     // k×k
        for (std::size_t i = 0; i < kept; ++i) {
            for (std::size_t j = 0; j < kept; ++j) {
                a(i, j) *= i == j ? -1.0 / (lam[i] * lam[i]) : divided(i, j);
            }
        }
        // G = Vk·A·Vkᵀ + Vk·B·Vrᵀ + (Vk·B·Vrᵀ)ᵀ with B = F ∘ (Vkᵀ S Vr).
        Matrix gg = kernels::matmul_nt(kernels::matmul(vk, a), vk);
        if (rest > 0) {
            Matrix vr = columns(sp.eigenvectors, kept, rest);
            Matrix b = kernels::matmul(sv, vr);  // k×rest
            for (std::size_t i = 0; i < kept; ++i) {
                for (std::size_t j = 0; j < rest; ++j) {
                    b(i, j) *= divided(i, kept + j);
                }
            }
            Matrix cross = kernels::matmul(vk, kernels::matmul_nt(b, vr));
            gg += cross;
            gg += cross.transposed();
        }
        tp.accumulate(ig, gg);
    });
}

Value top_eigenvalues(const Value& g, SharedSpectrum spectrum, std::size_t k) {
    Tape& t = tape_of(g);
    require_spectrum(g.data(), spectrum, k, "top_eigenvalues");
    Matrix out(1, k);
    for (std::size_t i = 0; i < k; ++i) {
        out(0, i) = spectrum->eigenvalues[i];
    }
    const std::size_t ig = g.id();
    return t.record(std::move(out), {g}, [ig, spectrum, k](Tape& tp, std::size_t self) {
        const Matrix& up = upstream(tp, self);
        Matrix vk = columns(spectrum->eigenvectors, 0, k);
        Matrix scaled = vk;
        for (std::size_t r = 0; r < scaled.rows(); ++r) {
            for (std::size_t c = 0; c < k; ++c) {
                scaled(r, c) *= up(0, c);
            }
        }
        tp.accumulate(ig, kernels::matmul_nt(scaled, vk));
    });
}

}  // namespace tikuda::ad
