#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gatenet {

using Shape = std::vector<long>;

inline long numel_of(const Shape& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

// Parameter routing tag: gate raw weights live in the att group, everything
// else in main. Set at creation so optimizers can partition parameters
// without model introspection.
enum class Group { main, att };

inline const char* group_name(Group g) { return g == Group::att ? "att" : "main"; }

struct TensorImpl;
using TensorPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // allocated on demand, same length as data
    std::string name;         // nonempty for registered parameters
    Group group = Group::main;

    // Graph node record; op == nullptr for leaves.
    const char* op = nullptr;
    std::vector<TensorPtr> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorPtr p) : p_(std::move(p)) {}

    static Tensor from(std::vector<double> data, Shape shape) {
        if (static_cast<long>(data.size()) != numel_of(shape))
            throw std::invalid_argument("Tensor::from: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        auto p = std::make_shared<TensorImpl>();
        p->shape = std::move(shape);
        p->data = std::move(data);
        return Tensor(std::move(p));
    }

    static Tensor full(Shape shape, double v) {
        auto p = std::make_shared<TensorImpl>();
        p->data.assign(numel_of(shape), v);
        p->shape = std::move(shape);
        return Tensor(std::move(p));
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return from({v}, {}); }

    // A named, trainable leaf.
    static Tensor param(std::string name, std::vector<double> data, Shape shape,
                        Group group = Group::main) {
        Tensor t = from(std::move(data), std::move(shape));
        t.p_->requires_grad = true;
        t.p_->name = std::move(name);
        t.p_->group = group;
        return t;
    }

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int rank() const { return static_cast<int>(p_->shape.size()); }
    long dim(int i) const { return p_->shape[static_cast<std::size_t>(i)]; }
    long numel() const { return static_cast<long>(p_->data.size()); }

    std::vector<double>& data() { return p_->data; }
    const std::vector<double>& data() const { return p_->data; }
    bool has_grad() const { return !p_->grad.empty(); }
    std::vector<double>& grad() { p_->ensure_grad(); return p_->grad; }
    const std::vector<double>& grad() const { return p_->grad; }
    void zero_grad() { p_->grad.assign(p_->data.size(), 0.0); }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool b) { p_->requires_grad = b; }
    const std::string& name() const { return p_->name; }
    Group group() const { return p_->group; }
    bool is_leaf() const { return p_->op == nullptr; }

    double item() const {
        if (numel() != 1)
            throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) +
                                        " elements, expected 1");
        return p_->data[0];
    }

    double at(std::initializer_list<long> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw std::invalid_argument("Tensor::at: index rank mismatch for shape " + shape_str(shape()));
        long off = 0;
        int i = 0;
        for (long v : idx) {
            off = off * p_->shape[static_cast<std::size_t>(i)] + v;
            ++i;
        }
        return p_->data[static_cast<std::size_t>(off)];
    }

    TensorPtr impl() const { return p_; }

private:
    TensorPtr p_;
};

using ParamList = std::vector<Tensor>;

// Association parameter name -> gradient array, as produced by backward().
using GradientMap = std::map<std::string, std::vector<double>>;

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

// Builds an op node. The backward function is recorded only when some parent
// requires grad; otherwise the result is a constant and the graph is dropped,
// which keeps inference cheap.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(TensorImpl&)> backward) {
    auto p = std::make_shared<TensorImpl>();
    p->shape = std::move(shape);
    p->data = std::move(data);
    bool needs = false;
    for (const auto& t : parents)
        if (t.impl()->requires_grad) needs = true;
    if (needs) {
        p->requires_grad = true;
        p->op = op;
        p->parents.reserve(parents.size());
        for (auto& t : parents) p->parents.push_back(t.impl());
        p->backward_fn = std::move(backward);
    }
    return Tensor(std::move(p));
}

// ---------------------------------------------------------------------------
// Broadcasting (trailing-dimension alignment, NumPy semantics)
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    std::size_t ra = a.size(), rb = b.size();
    std::size_t r = std::max(ra, rb);
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        long da = i < ra ? a[ra - 1 - i] : 1;
        long db = i < rb ? b[rb - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument(std::string(op) + ": shapes not broadcastable: " +
                                        shape_str(a) + " vs " + shape_str(b));
        out[r - 1 - i] = std::max(da, db);
    }
    return out;
}

inline std::vector<long> contiguous_strides(const Shape& s) {
    std::vector<long> st(s.size());
    long acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Strides of `in` viewed through the broadcast shape `out` (0 on expanded axes).
inline std::vector<long> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<long> own = contiguous_strides(in);
    std::vector<long> st(out.size(), 0);
    std::size_t ri = in.size(), ro = out.size();
    for (std::size_t i = 0; i < ri; ++i) {
        long d = in[ri - 1 - i];
        st[ro - 1 - i] = (d == 1 && out[ro - 1 - i] != 1) ? 0 : own[ri - 1 - i];
    }
    return st;
}

// Odometer walk over `out`, yielding the linear offsets of two broadcast
// operands for every output element, in row-major order.
template <class Fn>
inline void for_each_bcast(const Shape& out, const std::vector<long>& sa,
                           const std::vector<long>& sb, Fn&& fn) {
    long n = numel_of(out);
    std::size_t r = out.size();
    std::vector<long> idx(r, 0);
    long ia = 0, ib = 0;
    for (long lin = 0; lin < n; ++lin) {
        fn(lin, ia, ib);
        for (std::size_t k = r; k-- > 0;) {
            ++idx[k];
            ia += sa[k];
            ib += sb[k];
            if (idx[k] < out[k]) break;
            idx[k] = 0;
            ia -= sa[k] * out[k];
            ib -= sb[k] * out[k];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

// df(x, y) -> dy/dx given input x and output y.
template <class F, class DF>
inline Tensor unary_map(const Tensor& a, const char* op, F f, DF df) {
    const auto& ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
    TensorPtr ap = a.impl();
    return make_op(op, a.shape(), std::move(out), {a}, [ap, df](TensorImpl& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i)
            ap->grad[i] += self.grad[i] * df(ap->data[i], self.data[i]);
    });
}

// dfa/dfb(a, b, y) -> partial derivative of y w.r.t. that operand.
template <class F, class DA, class DB>
inline Tensor binary_map(const Tensor& a, const Tensor& b, const char* op, F f, DA dfa, DB dfb) {
    TensorPtr ap = a.impl(), bp = b.impl();
    if (a.shape() == b.shape()) {
        const auto& ad = a.data();
        const auto& bd = b.data();
        std::vector<double> out(ad.size());
        for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i], bd[i]);
        return make_op(op, a.shape(), std::move(out), {a, b}, [ap, bp, dfa, dfb](TensorImpl& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t i = 0; i < self.data.size(); ++i)
                    ap->grad[i] += self.grad[i] * dfa(ap->data[i], bp->data[i], self.data[i]);
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < self.data.size(); ++i)
                    bp->grad[i] += self.grad[i] * dfb(ap->data[i], bp->data[i], self.data[i]);
            }
        });
    }
    Shape os = broadcast_shape(a.shape(), b.shape(), op);
    auto sa = bcast_strides(a.shape(), os);
    auto sb = bcast_strides(b.shape(), os);
    std::vector<double> out(static_cast<std::size_t>(numel_of(os)));
    for_each_bcast(os, sa, sb, [&](long lin, long ia, long ib) {
        out[static_cast<std::size_t>(lin)] = f(ap->data[static_cast<std::size_t>(ia)],
                                               bp->data[static_cast<std::size_t>(ib)]);
    });
    Shape osc = os;
    return make_op(op, std::move(osc), std::move(out), {a, b},
                   [ap, bp, os, sa, sb, dfa, dfb](TensorImpl& self) {
        if (ap->requires_grad) ap->ensure_grad();
        if (bp->requires_grad) bp->ensure_grad();
        for_each_bcast(os, sa, sb, [&](long lin, long ia, long ib) {
            double g = self.grad[static_cast<std::size_t>(lin)];
            double av = ap->data[static_cast<std::size_t>(ia)];
            double bv = bp->data[static_cast<std::size_t>(ib)];
            double y = self.data[static_cast<std::size_t>(lin)];
            if (ap->requires_grad) ap->grad[static_cast<std::size_t>(ia)] += g * dfa(av, bv, y);
            if (bp->requires_grad) bp->grad[static_cast<std::size_t>(ib)] += g * dfb(av, bv, y);
        });
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return binary_map(a, b, "add", [](double x, double y) { return x + y; },
                      [](double, double, double) { return 1.0; },
                      [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_map(a, b, "sub", [](double x, double y) { return x - y; },
                      [](double, double, double) { return 1.0; },
                      [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_map(a, b, "mul", [](double x, double y) { return x * y; },
                      [](double, double b2, double) { return b2; },
                      [](double a2, double, double) { return a2; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return binary_map(a, b, "div", [](double x, double y) { return x / y; },
                      [](double, double b2, double) { return 1.0 / b2; },
                      [](double, double b2, double y) { return -y / b2; });
}

inline Tensor neg(const Tensor& a) {
    return unary_map(a, "neg", [](double x) { return -x; },
                     [](double, double) { return -1.0; });
}

inline Tensor exp(const Tensor& a) {
    return unary_map(a, "exp", [](double x) { return std::exp(x); },
                     [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    for (double v : a.data())
        if (!(v > 0.0))
            throw std::domain_error("log: input must be positive, got " + std::to_string(v));
    return unary_map(a, "log", [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; });
}

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
    return unary_map(a, "sigmoid", [](double x) { return sigmoid_scalar(x); },
                     [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
    return unary_map(a, "tanh", [](double x) { return std::tanh(x); },
                     [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
    return unary_map(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// Tanh approximation, the standard ViT flavor.
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline Tensor gelu(const Tensor& a) {
    return unary_map(a, "gelu",
        [](double x) {
            return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
        },
        [](double x, double) {
            double u = kGeluC * (x + kGeluA * x * x * x);
            double t = std::tanh(u);
            double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

inline Tensor scale(const Tensor& a, double c) {
    return unary_map(a, "scale", [c](double x) { return c * x; },
                     [c](double, double) { return c; });
}

// Elementwise Huber of a residual tensor. Derivative is the residual clamped
// to [-delta, delta], continuous at |r| == delta.
inline Tensor huber_ew(const Tensor& r, double delta) {
    if (!(delta > 0.0))
        throw std::invalid_argument("huber_ew: delta must be positive, got " + std::to_string(delta));
    return unary_map(r, "huber",
        [delta](double x) {
            double a = std::abs(x);
            return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
        },
        [delta](double x, double) { return std::clamp(x, -delta, delta); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

// Supports [m,k]x[k,n], batched equal-leading-dims [...,m,k]x[...,k,n], and
// [...,m,k]x[k,n] with a shared right operand.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                    shape_str(as) + " and " + shape_str(bs));
    long m = as[as.size() - 2], k = as[as.size() - 1];
    long k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
    if (k != k2)
        throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(as) +
                                    " x " + shape_str(bs));
    bool shared_b = bs.size() == 2;
    if (!shared_b) {
        if (as.size() != bs.size() ||
            !std::equal(as.begin(), as.end() - 2, bs.begin()))
            throw std::invalid_argument("matmul: batch dimensions disagree: " + shape_str(as) +
                                        " x " + shape_str(bs));
    }
    long batch = 1;
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
    Shape os(as.begin(), as.end() - 2);
    os.push_back(m);
    os.push_back(n);

    TensorPtr ap = a.impl(), bp = b.impl();
    std::vector<double> out(static_cast<std::size_t>(batch * m * n), 0.0);
    const double* A = ap->data.data();
    const double* B = bp->data.data();
    for (long t = 0; t < batch; ++t) {
        const double* At = A + t * m * k;
        const double* Bt = shared_b ? B : B + t * k * n;
        double* Ot = out.data() + t * m * n;
        for (long i = 0; i < m; ++i)
            for (long kk = 0; kk < k; ++kk) {
                double av = At[i * k + kk];
                if (av == 0.0) continue;
                const double* Br = Bt + kk * n;
                double* Or = Ot + i * n;
                for (long j = 0; j < n; ++j) Or[j] += av * Br[j];
            }
    }
    return make_op("matmul", std::move(os), std::move(out), {a, b},
                   [ap, bp, batch, m, k, n, shared_b](TensorImpl& self) {
        const double* G = self.grad.data();
        if (ap->requires_grad) {
            ap->ensure_grad();
            double* GA = ap->grad.data();
            const double* B = bp->data.data();
            for (long t = 0; t < batch; ++t) {
                const double* Gt = G + t * m * n;
                const double* Bt = shared_b ? B : B + t * k * n;
                double* GAt = GA + t * m * k;
                // dA = G . B^T
                for (long i = 0; i < m; ++i)
                    for (long kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* Gr = Gt + i * n;
                        const double* Br = Bt + kk * n;
                        for (long j = 0; j < n; ++j) acc += Gr[j] * Br[j];
                        GAt[i * k + kk] += acc;
                    }
            }
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            double* GB = bp->grad.data();
            const double* A = ap->data.data();
            for (long t = 0; t < batch; ++t) {
                const double* Gt = G + t * m * n;
                const double* At = A + t * m * k;
                double* GBt = shared_b ? GB : GB + t * k * n;
                // dB = A^T . G
                for (long i = 0; i < m; ++i)
                    for (long kk = 0; kk < k; ++kk) {
                        double av = At[i * k + kk];
                        if (av == 0.0) continue;
                        const double* Gr = Gt + i * n;
                        double* GBr = GBt + kk * n;
                        for (long j = 0; j < n; ++j) GBr[j] += av * Gr[j];
                    }
            }
        }
    });
}

// Fused affine map y = x W^T + b with W stored [out, in]; x may have any
// rank >= 1 with trailing dim == in.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (ws.size() != 2)
        throw std::invalid_argument("linear: weight must be rank 2, got " + shape_str(ws));
    long out_f = ws[0], in_f = ws[1];
    if (xs.empty() || xs.back() != in_f)
        throw std::invalid_argument("linear: input " + shape_str(xs) +
                                    " incompatible with weight " + shape_str(ws));
    if (b.shape() != Shape{out_f})
        throw std::invalid_argument("linear: bias shape " + shape_str(b.shape()) +
                                    " must be [" + std::to_string(out_f) + "]");
    long rows = x.numel() / in_f;
    Shape os(xs.begin(), xs.end() - 1);
    os.push_back(out_f);

    TensorPtr xp = x.impl(), wp = w.impl(), bp = b.impl();
    std::vector<double> out(static_cast<std::size_t>(rows * out_f));
    const double* X = xp->data.data();
    const double* W = wp->data.data();
    const double* B = bp->data.data();
    for (long r = 0; r < rows; ++r) {
        const double* xr = X + r * in_f;
        double* orow = out.data() + r * out_f;
        for (long o = 0; o < out_f; ++o) {
            const double* wr = W + o * in_f;
            double acc = B[o];
            for (long i = 0; i < in_f; ++i) acc += xr[i] * wr[i];
            orow[o] = acc;
        }
    }
    return make_op("linear", std::move(os), std::move(out), {x, w, b},
                   [xp, wp, bp, rows, in_f, out_f](TensorImpl& self) {
        const double* G = self.grad.data();
        if (xp->requires_grad) {
            xp->ensure_grad();
            double* GX = xp->grad.data();
            const double* W = wp->data.data();
            for (long r = 0; r < rows; ++r)
                for (long o = 0; o < out_f; ++o) {
                    double g = G[r * out_f + o];
                    if (g == 0.0) continue;
                    const double* wr = W + o * in_f;
                    double* gx = GX + r * in_f;
                    for (long i = 0; i < in_f; ++i) gx[i] += g * wr[i];
                }
        }
        if (wp->requires_grad) {
            wp->ensure_grad();
            double* GW = wp->grad.data();
            const double* X = xp->data.data();
            for (long r = 0; r < rows; ++r)
                for (long o = 0; o < out_f; ++o) {
                    double g = G[r * out_f + o];
                    if (g == 0.0) continue;
                    const double* xr = X + r * in_f;
                    double* gw = GW + o * in_f;
                    for (long i = 0; i < in_f; ++i) gw[i] += g * xr[i];
                }
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            double* GB = bp->grad.data();
            for (long r = 0; r < rows; ++r)
                for (long o = 0; o < out_f; ++o) GB[o] += G[r * out_f + o];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class Reduce { sum, mean, max };

inline std::vector<int> normalize_axes(const std::vector<int>& axes, int rank) {
    std::vector<int> ax;
    if (axes.empty()) {
        ax.resize(static_cast<std::size_t>(rank));
        std::iota(ax.begin(), ax.end(), 0);
        return ax;
    }
    for (int a : axes) {
        int v = a < 0 ? a + rank : a;
        if (v < 0 || v >= rank)
            throw std::invalid_argument("reduce: axis " + std::to_string(a) +
                                        " invalid for rank " + std::to_string(rank));
        ax.push_back(v);
    }
    std::sort(ax.begin(), ax.end());
    ax.erase(std::unique(ax.begin(), ax.end()), ax.end());
    return ax;
}

inline Tensor reduce(Reduce op, const Tensor& a, const std::vector<int>& axes = {}) {
    std::vector<int> ax = normalize_axes(axes, a.rank());
    const Shape& s = a.shape();
    Shape os;
    std::vector<bool> reduced(s.size(), false);
    for (int v : ax) reduced[static_cast<std::size_t>(v)] = true;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (!reduced[i]) os.push_back(s[i]);

    long n_out = numel_of(os);
    long count = a.numel() / std::max<long>(n_out, 1);

    // Map each input element to its output cell.
    std::vector<long> in_strides = contiguous_strides(s);
    std::vector<long> out_strides_kept;
    {
        std::vector<long> ostr = contiguous_strides(os);
        std::size_t j = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            out_strides_kept.push_back(reduced[i] ? 0 : ostr[j++]);
    }

    const char* opname = op == Reduce::sum ? "sum" : op == Reduce::mean ? "mean" : "max";
    TensorPtr ap = a.impl();
    std::vector<double> out(static_cast<std::size_t>(n_out),
                            op == Reduce::max ? -std::numeric_limits<double>::infinity() : 0.0);
    std::vector<long> argmax(op == Reduce::max ? static_cast<std::size_t>(n_out) : 0, -1);

    {
        std::size_t r = s.size();
        std::vector<long> idx(r, 0);
        long oi = 0;
        for (long lin = 0; lin < a.numel(); ++lin) {
            if (op == Reduce::max) {
                // strict > keeps the first occurrence on ties
                if (ap->data[static_cast<std::size_t>(lin)] > out[static_cast<std::size_t>(oi)]) {
                    out[static_cast<std::size_t>(oi)] = ap->data[static_cast<std::size_t>(lin)];
                    argmax[static_cast<std::size_t>(oi)] = lin;
                }
            } else {
                out[static_cast<std::size_t>(oi)] += ap->data[static_cast<std::size_t>(lin)];
            }
            for (std::size_t k2 = r; k2-- > 0;) {
                ++idx[k2];
                oi += out_strides_kept[k2];
                if (idx[k2] < s[k2]) break;
                idx[k2] = 0;
                oi -= out_strides_kept[k2] * s[k2];
            }
        }
    }
    if (op == Reduce::mean)
        for (double& v : out) v /= static_cast<double>(count);

    Shape osc = os;
    auto osk = out_strides_kept;
    return make_op(opname, std::move(osc), std::move(out), {a},
                   [ap, op, osk, count, argmax, s = a.shape()](TensorImpl& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        if (op == Reduce::max) {
            for (std::size_t i = 0; i < argmax.size(); ++i)
                ap->grad[static_cast<std::size_t>(argmax[i])] += self.grad[i];
            return;
        }
        double inv = op == Reduce::mean ? 1.0 / static_cast<double>(count) : 1.0;
        std::size_t r = s.size();
        std::vector<long> idx(r, 0);
        long oi = 0;
        long n = static_cast<long>(ap->data.size());
        for (long lin = 0; lin < n; ++lin) {
            ap->grad[static_cast<std::size_t>(lin)] += self.grad[static_cast<std::size_t>(oi)] * inv;
            for (std::size_t k2 = r; k2-- > 0;) {
                ++idx[k2];
                oi += osk[k2];
                if (idx[k2] < s[k2]) break;
                idx[k2] = 0;
                oi -= osk[k2] * s[k2];
            }
        }
    });
}

inline Tensor sum(const Tensor& a, const std::vector<int>& axes = {}) { return reduce(Reduce::sum, a, axes); }
inline Tensor mean(const Tensor& a, const std::vector<int>& axes = {}) { return reduce(Reduce::mean, a, axes); }
inline Tensor reduce_max(const Tensor& a, const std::vector<int>& axes = {}) { return reduce(Reduce::max, a, axes); }

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& a, int axis = -1) {
    int ax = axis < 0 ? axis + a.rank() : axis;
    if (ax < 0 || ax >= a.rank())
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " invalid for shape " + shape_str(a.shape()));
    const Shape& s = a.shape();
    long n = s[static_cast<std::size_t>(ax)];
    long inner = 1;
    for (std::size_t i = static_cast<std::size_t>(ax) + 1; i < s.size(); ++i) inner *= s[i];
    long outer = a.numel() / (n * inner);

    TensorPtr ap = a.impl();
    std::vector<double> out(ap->data.size());
    for (long o = 0; o < outer; ++o)
        for (long in = 0; in < inner; ++in) {
            long base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (long j = 0; j < n; ++j)
                mx = std::max(mx, ap->data[static_cast<std::size_t>(base + j * inner)]);
            double z = 0.0;
            for (long j = 0; j < n; ++j) {
                double e = std::exp(ap->data[static_cast<std::size_t>(base + j * inner)] - mx);
                out[static_cast<std::size_t>(base + j * inner)] = e;
                z += e;
            }
            for (long j = 0; j < n; ++j)
                out[static_cast<std::size_t>(base + j * inner)] /= z;
        }
    return make_op("softmax", a.shape(), std::move(out), {a},
                   [ap, outer, n, inner](TensorImpl& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        for (long o = 0; o < outer; ++o)
            for (long in = 0; in < inner; ++in) {
                long base = o * n * inner + in;
                double dot = 0.0;
                for (long j = 0; j < n; ++j) {
                    std::size_t k = static_cast<std::size_t>(base + j * inner);
                    dot += self.grad[k] * self.data[k];
                }
                for (long j = 0; j < n; ++j) {
                    std::size_t k = static_cast<std::size_t>(base + j * inner);
                    ap->grad[k] += self.data[k] * (self.grad[k] - dot);
                }
            }
    });
}

// Normalization over the last dimension with affine (gamma, beta).
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    if (!(eps > 0.0))
        throw std::invalid_argument("layer_norm: eps must be positive");
    const Shape& s = a.shape();
    if (s.empty())
        throw std::invalid_argument("layer_norm: input must have rank >= 1");
    long n = s.back();
    if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
        throw std::invalid_argument("layer_norm: gamma/beta must be [" + std::to_string(n) +
                                    "], got " + shape_str(gamma.shape()) + " and " +
                                    shape_str(beta.shape()));
    long rows = a.numel() / n;

    TensorPtr ap = a.impl(), gp = gamma.impl(), bp = beta.impl();
    std::vector<double> out(ap->data.size());
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    std::vector<double> mean_r(static_cast<std::size_t>(rows));
    for (long r = 0; r < rows; ++r) {
        const double* x = ap->data.data() + r * n;
        double mu = 0.0;
        for (long j = 0; j < n; ++j) mu += x[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (long j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        mean_r[static_cast<std::size_t>(r)] = mu;
        inv_std[static_cast<std::size_t>(r)] = inv;
        for (long j = 0; j < n; ++j)
            out[static_cast<std::size_t>(r * n + j)] =
                (x[j] - mu) * inv * gp->data[static_cast<std::size_t>(j)] +
                bp->data[static_cast<std::size_t>(j)];
    }
    return make_op("layer_norm", a.shape(), std::move(out), {a, gamma, beta},
                   [ap, gp, bp, rows, n, mean_r, inv_std](TensorImpl& self) {
        if (ap->requires_grad) ap->ensure_grad();
        if (gp->requires_grad) gp->ensure_grad();
        if (bp->requires_grad) bp->ensure_grad();
        for (long r = 0; r < rows; ++r) {
            const double* x = ap->data.data() + r * n;
            const double* g = self.grad.data() + r * n;
            double mu = mean_r[static_cast<std::size_t>(r)];
            double inv = inv_std[static_cast<std::size_t>(r)];
            double mean_gy = 0.0, mean_gyx = 0.0;
            for (long j = 0; j < n; ++j) {
                double xh = (x[j] - mu) * inv;
                double gy = g[j] * gp->data[static_cast<std::size_t>(j)];
                mean_gy += gy;
                mean_gyx += gy * xh;
                if (gp->requires_grad) gp->grad[static_cast<std::size_t>(j)] += g[j] * xh;
                if (bp->requires_grad) bp->grad[static_cast<std::size_t>(j)] += g[j];
            }
            if (!ap->requires_grad) continue;
            mean_gy /= static_cast<double>(n);
            mean_gyx /= static_cast<double>(n);
            for (long j = 0; j < n; ++j) {
                double xh = (x[j] - mu) * inv;
                double gy = g[j] * gp->data[static_cast<std::size_t>(j)];
                ap->grad[static_cast<std::size_t>(r * n + j)] +=
                    inv * (gy - mean_gy - xh * mean_gyx);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    TensorPtr ap = a.impl();
    std::vector<double> out = ap->data;
    return make_op("reshape", std::move(shape), std::move(out), {a}, [ap](TensorImpl& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
    });
}

inline Tensor permute(const Tensor& a, const std::vector<int>& perm) {
    int r = a.rank();
    if (static_cast<int>(perm.size()) != r)
        throw std::invalid_argument("permute: perm rank mismatch for shape " + shape_str(a.shape()));
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int v : perm) {
        if (v < 0 || v >= r || seen[static_cast<std::size_t>(v)])
            throw std::invalid_argument("permute: invalid permutation");
        seen[static_cast<std::size_t>(v)] = true;
    }
    const Shape& s = a.shape();
    Shape os(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) os[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    std::vector<long> in_str = contiguous_strides(s);
    // stride of output axis i within the input buffer
    std::vector<long> src_str(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) src_str[static_cast<std::size_t>(i)] = in_str[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];

    TensorPtr ap = a.impl();
    long n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    std::vector<long> idx(static_cast<std::size_t>(r), 0);
    long src = 0;
    for (long lin = 0; lin < n; ++lin) {
        out[static_cast<std::size_t>(lin)] = ap->data[static_cast<std::size_t>(src)];
        for (std::size_t k = static_cast<std::size_t>(r); k-- > 0;) {
            ++idx[k];
            src += src_str[k];
            if (idx[k] < os[k]) break;
            idx[k] = 0;
            src -= src_str[k] * os[k];
        }
    }
    Shape osc = os;
    return make_op("permute", std::move(osc), std::move(out), {a},
                   [ap, os, src_str, r](TensorImpl& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        long n = static_cast<long>(self.grad.size());
        std::vector<long> idx(static_cast<std::size_t>(r), 0);
        long src = 0;
        for (long lin = 0; lin < n; ++lin) {
            ap->grad[static_cast<std::size_t>(src)] += self.grad[static_cast<std::size_t>(lin)];
            for (std::size_t k = static_cast<std::size_t>(r); k-- > 0;) {
                ++idx[k];
                src += src_str[k];
                if (idx[k] < os[k]) break;
                idx[k] = 0;
                src -= src_str[k] * os[k];
            }
        }
    });
}

inline Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    Shape check = broadcast_shape(a.shape(), shape, "broadcast_to");
    if (check != shape)
        throw std::invalid_argument("broadcast_to: cannot broadcast " + shape_str(a.shape()) +
                                    " to " + shape_str(shape));
    auto sa = bcast_strides(a.shape(), shape);
    std::vector<long> sz(shape.size(), 0);
    TensorPtr ap = a.impl();
    std::vector<double> out(static_cast<std::size_t>(numel_of(shape)));
    for_each_bcast(shape, sa, sz, [&](long lin, long ia, long) {
        out[static_cast<std::size_t>(lin)] = ap->data[static_cast<std::size_t>(ia)];
    });
    Shape osc = shape;
    return make_op("broadcast_to", std::move(osc), std::move(out), {a},
                   [ap, shape, sa](TensorImpl& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        std::vector<long> sz(shape.size(), 0);
        for_each_bcast(shape, sa, sz, [&](long lin, long ia, long) {
            ap->grad[static_cast<std::size_t>(ia)] += self.grad[static_cast<std::size_t>(lin)];
        });
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty())
        throw std::invalid_argument("concat: empty input list");
    int r = parts[0].rank();
    int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r)
        throw std::invalid_argument("concat: axis " + std::to_string(axis) + " invalid");
    Shape os = parts[0].shape();
    long total_ax = 0;
    for (const auto& t : parts) {
        if (t.rank() != r)
            throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != ax && t.shape()[static_cast<std::size_t>(i)] != os[static_cast<std::size_t>(i)])
                throw std::invalid_argument("concat: shape mismatch at axis " + std::to_string(i) +
                                            ": " + shape_str(t.shape()) + " vs " + shape_str(os));
        total_ax += t.shape()[static_cast<std::size_t>(ax)];
    }
    os[static_cast<std::size_t>(ax)] = total_ax;

    long outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= os[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < r; ++i) inner *= os[static_cast<std::size_t>(i)];

    std::vector<double> out(static_cast<std::size_t>(numel_of(os)));
    std::vector<TensorPtr> impls;
    std::vector<long> ax_sizes;
    for (const auto& t : parts) {
        impls.push_back(t.impl());
        ax_sizes.push_back(t.shape()[static_cast<std::size_t>(ax)]);
    }
    long off = 0;
    for (std::size_t pi = 0; pi < impls.size(); ++pi) {
        long na = ax_sizes[pi];
        const double* src = impls[pi]->data.data();
        for (long o = 0; o < outer; ++o)
            std::copy(src + o * na * inner, src + (o + 1) * na * inner,
                      out.data() + (o * total_ax + off) * inner);
        off += na;
    }
    Shape osc = os;
    return make_op("concat", std::move(osc), std::move(out), parts,
                   [impls, ax_sizes, outer, inner, total_ax](TensorImpl& self) {
        long off = 0;
        for (std::size_t pi = 0; pi < impls.size(); ++pi) {
            long na = ax_sizes[pi];
            if (impls[pi]->requires_grad) {
                impls[pi]->ensure_grad();
                double* dst = impls[pi]->grad.data();
                for (long o = 0; o < outer; ++o) {
                    const double* g = self.grad.data() + (o * total_ax + off) * inner;
                    double* d = dst + o * na * inner;
                    for (long i = 0; i < na * inner; ++i) d[i] += g[i];
                }
            }
            off += na;
        }
    });
}

// Contiguous slice of `len` entries starting at `start` along `axis`.
inline Tensor narrow(const Tensor& a, int axis, long start, long len) {
    int r = a.rank();
    int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r)
        throw std::invalid_argument("narrow: axis invalid");
    const Shape& s = a.shape();
    long na = s[static_cast<std::size_t>(ax)];
    if (start < 0 || len < 1 || start + len > na)
        throw std::invalid_argument("narrow: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") invalid for axis size " +
                                    std::to_string(na));
    Shape os = s;
    os[static_cast<std::size_t>(ax)] = len;
    long outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < r; ++i) inner *= s[static_cast<std::size_t>(i)];

    TensorPtr ap = a.impl();
    std::vector<double> out(static_cast<std::size_t>(numel_of(os)));
    for (long o = 0; o < outer; ++o)
        std::copy(ap->data.data() + (o * na + start) * inner,
                  ap->data.data() + (o * na + start + len) * inner,
                  out.data() + o * len * inner);
    Shape osc = os;
    return make_op("narrow", std::move(osc), std::move(out), {a},
                   [ap, outer, inner, na, start, len](TensorImpl& self) {
        if (!ap->requires_grad) return;
        ap->ensure_grad();
        for (long o = 0; o < outer; ++o) {
            const double* g = self.grad.data() + o * len * inner;
            double* d = ap->grad.data() + (o * na + start) * inner;
            for (long i = 0; i < len * inner; ++i) d[i] += g[i];
        }
    });
}

// Pick one index along axis and drop that axis.
inline Tensor select(const Tensor& a, int axis, long index) {
    Tensor sl = narrow(a, axis, index, 1);
    Shape os;
    int ax = axis < 0 ? axis + a.rank() : axis;
    for (int i = 0; i < a.rank(); ++i)
        if (i != ax) os.push_back(a.shape()[static_cast<std::size_t>(i)]);
    return reshape(sl, os);
}

// ---------------------------------------------------------------------------
// Convolution / patches
// ---------------------------------------------------------------------------

// Cross-correlation, NCHW, weight [Cout, Cin, kh, kw], zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     long stride = 1, long pad = 0) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4)
        throw std::invalid_argument("conv2d: expected input [N,C,H,W] and weight [Co,Ci,kh,kw], got " +
                                    shape_str(xs) + " and " + shape_str(ws));
    long N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    long Co = ws[0], Ci = ws[1], kh = ws[2], kw = ws[3];
    if (C != Ci)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(C) +
                                    " != weight channels " + std::to_string(Ci));
    if (b.shape() != Shape{Co})
        throw std::invalid_argument("conv2d: bias must be [" + std::to_string(Co) + "]");
    if (stride < 1 || pad < 0)
        throw std::invalid_argument("conv2d: stride must be >= 1 and pad >= 0");
    long Ho = (H + 2 * pad - kh) / stride + 1;
    long Wo = (W + 2 * pad - kw) / stride + 1;
    if (H + 2 * pad < kh || W + 2 * pad < kw || Ho < 1 || Wo < 1)
        throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " does not fit input " + shape_str(xs) + " with pad " +
                                    std::to_string(pad) + " (output would be " + std::to_string(Ho) +
                                    "x" + std::to_string(Wo) + ")");

    TensorPtr xp = x.impl(), wp = w.impl(), bp = b.impl();
    std::vector<double> out(static_cast<std::size_t>(N * Co * Ho * Wo));
    const double* X = xp->data.data();
    const double* Wd = wp->data.data();
    const double* B = bp->data.data();
    for (long n = 0; n < N; ++n)
        for (long co = 0; co < Co; ++co)
            for (long oh = 0; oh < Ho; ++oh)
                for (long ow = 0; ow < Wo; ++ow) {
                    double acc = B[co];
                    for (long ci = 0; ci < C; ++ci)
                        for (long ih = 0; ih < kh; ++ih) {
                            long y2 = oh * stride - pad + ih;
                            if (y2 < 0 || y2 >= H) continue;
                            for (long iw = 0; iw < kw; ++iw) {
                                long x2 = ow * stride - pad + iw;
                                if (x2 < 0 || x2 >= W) continue;
                                acc += X[((n * C + ci) * H + y2) * W + x2] *
                                       Wd[((co * C + ci) * kh + ih) * kw + iw];
                            }
                        }
                    out[static_cast<std::size_t>(((n * Co + co) * Ho + oh) * Wo + ow)] = acc;
                }
    return make_op("conv2d", {N, Co, Ho, Wo}, std::move(out), {x, w, b},
                   [xp, wp, bp, N, C, H, W, Co, kh, kw, Ho, Wo, stride, pad](TensorImpl& self) {
        const double* G = self.grad.data();
        const double* X = xp->data.data();
        const double* Wd = wp->data.data();
        if (xp->requires_grad) xp->ensure_grad();
        if (wp->requires_grad) wp->ensure_grad();
        if (bp->requires_grad) bp->ensure_grad();
        for (long n = 0; n < N; ++n)
            for (long co = 0; co < Co; ++co)
                for (long oh = 0; oh < Ho; ++oh)
                    for (long ow = 0; ow < Wo; ++ow) {
                        double g = G[((n * Co + co) * Ho + oh) * Wo + ow];
                        if (g == 0.0) continue;
                        if (bp->requires_grad) bp->grad[static_cast<std::size_t>(co)] += g;
                        for (long ci = 0; ci < C; ++ci)
                            for (long ih = 0; ih < kh; ++ih) {
                                long y2 = oh * stride - pad + ih;
                                if (y2 < 0 || y2 >= H) continue;
                                for (long iw = 0; iw < kw; ++iw) {
                                    long x2 = ow * stride - pad + iw;
                                    if (x2 < 0 || x2 >= W) continue;
                                    std::size_t xi = static_cast<std::size_t>(((n * C + ci) * H + y2) * W + x2);
                                    std::size_t wi = static_cast<std::size_t>(((co * C + ci) * kh + ih) * kw + iw);
                                    if (xp->requires_grad) xp->grad[xi] += g * Wd[wi];
                                    if (wp->requires_grad) wp->grad[wi] += g * X[xi];
                                }
                            }
                    }
    });
}

// Non-overlapping patch unroll: [N,C,H,W] -> [N, num_patches, C*ph*pw] with
// patches ordered row-major and channels fastest-varying last within a patch
// (patch pixels are laid out c-major, matching the conv weight layout).
inline Tensor extract_patches(const Tensor& x, long ph, long pw) {
    const Shape& xs = x.shape();
    if (xs.size() != 4)
        throw std::invalid_argument("extract_patches: expected [N,C,H,W], got " + shape_str(xs));
    long N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (ph < 1 || pw < 1 || H % ph != 0 || W % pw != 0)
        throw std::invalid_argument("extract_patches: patch " + std::to_string(ph) + "x" +
                                    std::to_string(pw) + " must evenly divide " +
                                    std::to_string(H) + "x" + std::to_string(W));
    long gh = H / ph, gw = W / pw;
    long np = gh * gw, pd = C * ph * pw;
    TensorPtr xp = x.impl();
    std::vector<double> out(static_cast<std::size_t>(N * np * pd));
    for (long n = 0; n < N; ++n)
        for (long py = 0; py < gh; ++py)
            for (long px = 0; px < gw; ++px) {
                long p = py * gw + px;
                for (long c = 0; c < C; ++c)
                    for (long ih = 0; ih < ph; ++ih)
                        for (long iw = 0; iw < pw; ++iw)
                            out[static_cast<std::size_t>((n * np + p) * pd + (c * ph + ih) * pw + iw)] =
                                xp->data[static_cast<std::size_t>(((n * C + c) * H + py * ph + ih) * W + px * pw + iw)];
            }
    return make_op("extract_patches", {N, np, pd}, std::move(out), {x},
                   [xp, N, C, H, W, ph, pw, gh, gw, np, pd](TensorImpl& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (long n = 0; n < N; ++n)
            for (long py = 0; py < gh; ++py)
                for (long px = 0; px < gw; ++px) {
                    long p = py * gw + px;
                    for (long c = 0; c < C; ++c)
                        for (long ih = 0; ih < ph; ++ih)
                            for (long iw = 0; iw < pw; ++iw)
                                xp->grad[static_cast<std::size_t>(((n * C + c) * H + py * ph + ih) * W + px * pw + iw)] +=
                                    self.grad[static_cast<std::size_t>((n * np + p) * pd + (c * ph + ih) * pw + iw)];
                }
    });
}

// ---------------------------------------------------------------------------
// Cross entropy
// ---------------------------------------------------------------------------

// Mean NLL over the batch from raw logits [N, K]; log-sum-exp is
// max-stabilized. Returns a scalar.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<long>& labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2)
        throw std::invalid_argument("cross_entropy: logits must be [N,K], got " + shape_str(s));
    long N = s[0], K = s[1];
    if (static_cast<long>(labels.size()) != N)
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(N));
    for (long y : labels)
        if (y < 0 || y >= K)
            throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                                    " outside [0, " + std::to_string(K) + ")");
    TensorPtr lp = logits.impl();
    // softmax probabilities cached for the backward pass
    auto probs = std::make_shared<std::vector<double>>(lp->data.size());
    double total = 0.0;
    for (long n = 0; n < N; ++n) {
        const double* row = lp->data.data() + n * K;
        double mx = *std::max_element(row, row + K);
        double z = 0.0;
        for (long k = 0; k < K; ++k) z += std::exp(row[k] - mx);
        double lz = std::log(z) + mx;
        for (long k = 0; k < K; ++k)
            (*probs)[static_cast<std::size_t>(n * K + k)] = std::exp(row[k] - lz);
        total += lz - row[labels[static_cast<std::size_t>(n)]];
    }
    std::vector<double> out{total / static_cast<double>(N)};
    return make_op("cross_entropy", {}, std::move(out), {logits},
                   [lp, probs, labels, N, K](TensorImpl& self) {
        if (!lp->requires_grad) return;
        lp->ensure_grad();
        double g = self.grad[0] / static_cast<double>(N);
        for (long n = 0; n < N; ++n)
            for (long k = 0; k < K; ++k) {
                double p = (*probs)[static_cast<std::size_t>(n * K + k)];
                double ind = (k == labels[static_cast<std::size_t>(n)]) ? 1.0 : 0.0;
                lp->grad[static_cast<std::size_t>(n * K + k)] += g * (p - ind);
            }
    });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Reverse-topological traversal from a scalar loss. Gradients accumulate into
// every requires_grad leaf; named leaves are also returned as a GradientMap.
inline GradientMap backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    std::vector<TensorImpl*> topo;
    std::unordered_set<TensorImpl*> visited;
    // Iterative post-order DFS; parents visited in recorded order, so the
    // accumulation order is deterministic.
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    TensorImpl* root = loss.impl().get();
    if (root->requires_grad) {
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                TensorImpl* par = node->parents[next].get();
                ++next;
                if (par->requires_grad && !visited.count(par)) {
                    visited.insert(par);
                    stack.emplace_back(par, 0);
                }
            } else {
                topo.push_back(node);
                stack.pop_back();
            }
        }
    }
    // Fresh buffers for interior nodes; leaves keep accumulating until the
    // caller zeroes them.
    for (TensorImpl* n : topo) {
        if (n->op != nullptr)
            n->grad.assign(n->data.size(), 0.0);
        else
            n->ensure_grad();
    }
    if (root->requires_grad)
        root->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);

    GradientMap grads;
    for (TensorImpl* n : topo)
        if (n->op == nullptr && n->requires_grad && !n->name.empty())
            grads[n->name] = n->grad;
    return grads;
}

inline void zero_grads(const ParamList& params) {
    for (const Tensor& t : params) {
        Tensor p = t;
        p.zero_grad();
    }
}

} // namespace gatenet
