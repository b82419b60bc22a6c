#pragma once

// Dense float32 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a TensorNode holding shape, data and an
// optional gradient buffer. Operations executed while a Tape is active
// record their backward closure on that tape in creation order; backward()
// replays the tape in reverse, visiting each node exactly once. Tensors
// built outside a tape (or from inputs that do not require gradients) are
// plain immutable arrays.
//
// Broadcasting follows the trailing-dimension rule: shapes are aligned at
// the last axis and a dimension of 1 stretches to match.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <vector>

#include "motrack/common.hpp"

namespace motrack {

struct TensorNode {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::function<void()> backward_fn;  // owns references to parent nodes
    const char* op = "leaf";
    // Scalar results of reductions carry a double shadow value so that
    // finite-difference checks are not limited by float32 quantization of
    // the loss. Propagated through scalar arithmetic only.
    double dvalue = 0.0;
    bool has_dvalue = false;
    // Per-element float64 shadow, filled by reductions always and by every
    // op when RuntimeConfig::shadow_double is on.
    std::vector<double> ddata;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

// RAII recording scope. The most recently constructed Tape is active;
// destroying it restores the previous one. One tape per training step.
class Tape {
public:
    Tape() : prev_(active_) { active_ = this; }
    ~Tape() { active_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(const NodePtr& n) { nodes_.push_back(n); }

    const std::vector<NodePtr>& nodes() const { return nodes_; }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<NodePtr> nodes_;
    Tape* prev_;
    inline static thread_local Tape* active_ = nullptr;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& s) { return filled(s, 0.0f); }
    static Tensor ones(const Shape& s) { return filled(s, 1.0f); }

    static Tensor filled(const Shape& s, float v) {
        auto n = std::make_shared<TensorNode>();
        n->shape = s;
        n->data.assign(static_cast<size_t>(numel_of(s)), v);
        return Tensor(std::move(n));
    }

    static Tensor from_data(const Shape& s, std::vector<float> d) {
        if (numel_of(s) != static_cast<int64_t>(d.size()))
            fail("Tensor::from_data: shape " + shape_str(s) + " does not match " +
                 std::to_string(d.size()) + " values");
        auto n = std::make_shared<TensorNode>();
        n->shape = s;
        n->data = std::move(d);
        return Tensor(std::move(n));
    }

    static Tensor scalar(float v) { return from_data({1}, {v}); }

    static Tensor randn(const Shape& s, Rng& rng, float stddev = 1.0f, float mean = 0.0f) {
        auto n = std::make_shared<TensorNode>();
        n->shape = s;
        n->data.resize(static_cast<size_t>(numel_of(s)));
        for (auto& v : n->data) v = mean + stddev * static_cast<float>(rng.normal());
        return Tensor(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t dim(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return node_->numel(); }

    const std::vector<float>& data() const { return node_->data; }
    std::vector<float>& mutable_data() { return node_->data; }
    const std::vector<float>& grad() const { return node_->grad; }
    std::vector<float>& mutable_grad() { return node_->grad; }

    float operator[](int64_t i) const { return node_->data[static_cast<size_t>(i)]; }

    // scalar extraction
    float value() const {
        if (numel() != 1) fail("Tensor::value: tensor " + shape_str(shape()) + " is not scalar");
        return node_->data[0];
    }

    // double shadow of a scalar, falling back to the float32 value
    double value_double() const {
        if (numel() != 1) fail("Tensor::value_double: tensor is not scalar");
        return node_->has_dvalue ? node_->dvalue : static_cast<double>(node_->data[0]);
    }

    void set_dvalue(double v) {
        node_->dvalue = v;
        node_->has_dvalue = true;
    }

    bool requires_grad() const { return node_->requires_grad; }

    Tensor& set_requires_grad(bool rg = true) {
        node_->requires_grad = rg;
        return *this;
    }

    void zero_grad() { node_->grad.clear(); }

    const NodePtr& node() const { return node_; }

    bool all_finite() const {
        for (float v : node_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    NodePtr node_;
};

namespace detail {

inline void check_finite(const char* op, const TensorNode& n) {
    if (!RuntimeConfig::check_finite) return;
    for (float v : n.data)
        if (!std::isfinite(v))
            throw std::logic_error(std::string("non-finite value produced by op '") + op + "'");
}

// Creates the result node, wires requires_grad, records on the active tape.
// `bw` is installed only when recording actually happens.
inline Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                          std::initializer_list<const Tensor*> parents) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = op;
    bool rg = false;
    if (Tape::active() != nullptr)
        for (const Tensor* p : parents)
            if (p->requires_grad()) rg = true;
    n->requires_grad = rg;
    check_finite(op, *n);
    return Tensor(std::move(n));
}

inline void record(Tensor& t, std::function<void()> bw) {
    if (t.requires_grad()) {
        t.node()->backward_fn = std::move(bw);
        Tape::active()->record(t.node());
    }
}

inline bool shadow_on() { return RuntimeConfig::shadow_double; }

// float64 view of a node's values; leaf tensors are converted on the fly
// (never cached, their float data may be mutated between evaluations)
inline std::vector<double> dbl_of(const NodePtr& n) {
    if (n->ddata.size() == n->data.size()) return n->ddata;
    return std::vector<double>(n->data.begin(), n->data.end());
}

// --- broadcasting -----------------------------------------------------

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    size_t na = a.size(), nb = b.size(), n = std::max(na, nb);
    Shape out(n);
    for (size_t i = 0; i < n; ++i) {
        int64_t da = i < n - na ? 1 : a[i - (n - na)];
        int64_t db = i < n - nb ? 1 : b[i - (n - nb)];
        if (da != db && da != 1 && db != 1)
            fail(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                 " are not broadcast-compatible");
        out[i] = std::max(da, db);
    }
    return out;
}

// strides of `s` padded to rank `n`, with 0 where the dim broadcasts
inline std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    size_t n = out.size(), ns = s.size();
    std::vector<int64_t> st(n, 0);
    int64_t acc = 1;
    for (size_t i = ns; i-- > 0;) {
        st[i + (n - ns)] = (s[i] == 1) ? 0 : acc;
        acc *= s[i];
    }
    for (size_t i = 0; i < n; ++i)
        if (out[i] == 1) st[i] = 0;
    return st;
}

// Walks every linear index of `out`, producing the matching linear indices
// into two broadcast operands. fn(io, ia, ib).
template <class Fn>
inline void broadcast_walk(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
    int64_t n = numel_of(out);
    int64_t na = numel_of(a), nb = numel_of(b);
    if (a == b) {  // same shape
        for (int64_t i = 0; i < n; ++i) fn(i, i, i);
        return;
    }
    // fast path: operand equals a trailing block of out
    auto trailing_block = [&](const Shape& s) {
        int64_t m = numel_of(s);
        if (m == 0) return false;
        int64_t tail = 1;
        size_t k = out.size();
        size_t j = s.size();
        while (j > 0) {
            --j;
            --k;
            if (s[j] != out[k]) return false;
            tail *= s[j];
        }
        return tail == m;
    };
    if (na == n && trailing_block(b)) {
        for (int64_t i = 0; i < n; ++i) fn(i, i, i % nb);
        return;
    }
    if (nb == n && trailing_block(a)) {
        for (int64_t i = 0; i < n; ++i) fn(i, i % na, i);
        return;
    }
    // general odometer walk
    size_t r = out.size();
    std::vector<int64_t> idx(r, 0);
    auto sa = broadcast_strides(a, out);
    auto sb = broadcast_strides(b, out);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

}  // namespace detail

// --- elementwise ops ---------------------------------------------------

// f(a) with local derivative df(x, y) where y = f(x). f must be generic
// over float/double (the double path feeds finite-difference oracles).
template <class F, class DF>
Tensor unary_op(const char* op, const Tensor& a, F f, DF df) {
    std::vector<float> out(a.data().size());
    const auto& x = a.data();
    for (size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    Tensor r = detail::make_result(op, a.shape(), std::move(out), {&a});
    if (detail::shadow_on()) {
        auto dx = detail::dbl_of(a.node());
        auto& dd = r.node()->ddata;
        dd.resize(dx.size());
        for (size_t i = 0; i < dx.size(); ++i) dd[i] = f(dx[i]);
    }
    detail::record(r, [an = a.node(), rn = r.node(), df]() {
        an->ensure_grad();
        const auto& g = rn->grad;
        for (size_t i = 0; i < g.size(); ++i)
            an->grad[i] += g[i] * df(an->data[i], rn->data[i]);
    });
    return r;
}

// f(a,b) with broadcasting; dfa/dfb(av, bv, yv) are the local partials
template <class F, class DFA, class DFB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F f, DFA dfa, DFB dfb) {
    Shape os = detail::broadcast_shape(op, a.shape(), b.shape());
    std::vector<float> out(static_cast<size_t>(numel_of(os)));
    const auto& xa = a.data();
    const auto& xb = b.data();
    detail::broadcast_walk(os, a.shape(), b.shape(), [&](int64_t io, int64_t ia, int64_t ib) {
        out[static_cast<size_t>(io)] = f(xa[static_cast<size_t>(ia)], xb[static_cast<size_t>(ib)]);
    });
    Tensor r = detail::make_result(op, os, std::move(out), {&a, &b});
    if (detail::shadow_on()) {
        auto da = detail::dbl_of(a.node());
        auto db = detail::dbl_of(b.node());
        auto& dd = r.node()->ddata;
        dd.resize(r.data().size());
        detail::broadcast_walk(os, a.shape(), b.shape(), [&](int64_t io, int64_t ia, int64_t ib) {
            dd[static_cast<size_t>(io)] = f(da[static_cast<size_t>(ia)], db[static_cast<size_t>(ib)]);
        });
    }
    detail::record(r, [an = a.node(), bn = b.node(), rn = r.node(), os, dfa, dfb]() {
        const bool need_a = an->requires_grad;
        const bool need_b = bn->requires_grad;
        if (need_a) an->ensure_grad();
        if (need_b) bn->ensure_grad();
        const auto& g = rn->grad;
        detail::broadcast_walk(os, an->shape, bn->shape, [&](int64_t io, int64_t ia, int64_t ib) {
            float av = an->data[static_cast<size_t>(ia)];
            float bv = bn->data[static_cast<size_t>(ib)];
            float yv = rn->data[static_cast<size_t>(io)];
            float gv = g[static_cast<size_t>(io)];
            if (need_a) an->grad[static_cast<size_t>(ia)] += gv * dfa(av, bv, yv);
            if (need_b) bn->grad[static_cast<size_t>(ib)] += gv * dfb(av, bv, yv);
        });
    });
    return r;
}

namespace detail {
// shadow-double propagation for scalar arithmetic chains
template <class F>
inline void shadow2(Tensor& r, const Tensor& a, const Tensor& b, F f) {
    if (r.numel() == 1 && a.numel() == 1 && b.numel() == 1)
        r.set_dvalue(f(a.value_double(), b.value_double()));
}
template <class F>
inline void shadow1(Tensor& r, const Tensor& a, F f) {
    if (r.numel() == 1 && a.numel() == 1) r.set_dvalue(f(a.value_double()));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    Tensor r = binary_op(
        "add", a, b, [](auto x, auto y) { return x + y; },
        [](float, float, float) { return 1.0f; }, [](float, float, float) { return 1.0f; });
    detail::shadow2(r, a, b, [](double x, double y) { return x + y; });
    return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor r = binary_op(
        "sub", a, b, [](auto x, auto y) { return x - y; },
        [](float, float, float) { return 1.0f; }, [](float, float, float) { return -1.0f; });
    detail::shadow2(r, a, b, [](double x, double y) { return x - y; });
    return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    Tensor r = binary_op(
        "mul", a, b, [](auto x, auto y) { return x * y; },
        [](float, float b_, float) { return b_; }, [](float a_, float, float) { return a_; });
    detail::shadow2(r, a, b, [](double x, double y) { return x * y; });
    return r;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    Tensor r = binary_op(
        "div", a, b, [](auto x, auto y) { return x / y; },
        [](float, float b_, float) { return 1.0f / b_; },
        [](float, float b_, float y) { return -y / b_; });
    detail::shadow2(r, a, b, [](double x, double y) { return x / y; });
    return r;
}

inline Tensor add_scalar(const Tensor& a, float s) {
    Tensor r = unary_op(
        "add_scalar", a, [s](auto x) { return x + s; }, [](float, float) { return 1.0f; });
    detail::shadow1(r, a, [s](double x) { return x + s; });
    return r;
}

inline Tensor mul_scalar(const Tensor& a, float s) {
    Tensor r = unary_op(
        "mul_scalar", a, [s](auto x) { return x * s; }, [s](float, float) { return s; });
    detail::shadow1(r, a, [s](double x) { return x * s; });
    return r;
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

inline Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, [](auto x) { return x > 0 ? x : decltype(x)(0); },
        [](float x, float) { return x > 0 ? 1.0f : 0.0f; });
}

// exponential linear unit, alpha = 1
inline Tensor elu(const Tensor& a) {
    return unary_op(
        "elu", a, [](auto x) { return x > 0 ? x : std::expm1(x); },
        [](float x, float y) { return x > 0 ? 1.0f : y + 1.0f; });
}

inline Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](auto x) { return std::exp(x); }, [](float, float y) { return y; });
}

inline Tensor log(const Tensor& a) {
    return unary_op(
        "log", a, [](auto x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

inline Tensor sqrt(const Tensor& a) {
    return unary_op(
        "sqrt", a, [](auto x) { return std::sqrt(x); },
        [](float, float y) { return 0.5f / y; });
}

inline Tensor softplus(const Tensor& a) {
    return unary_op(
        "softplus", a,
        [](auto x) { return decltype(x)(softplus_d(static_cast<double>(x))); },
        [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

inline Tensor clamp(const Tensor& a, float lo, float hi) {
    return unary_op(
        "clamp", a,
        [lo, hi](auto x) {
            using T = decltype(x);
            return x < T(lo) ? T(lo) : (x > T(hi) ? T(hi) : x);
        },
        [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, float s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, float s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, float s) { return mul_scalar(a, s); }
inline Tensor operator*(float s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// --- reductions ----------------------------------------------------------

// Reductions accumulate in double so that finite-difference checks are not
// drowned by float32 summation noise.
inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    if (!a.node()->ddata.empty())
        for (double v : a.node()->ddata) acc += v;
    else
        for (float v : a.data()) acc += v;
    Tensor r = detail::make_result("sum", Shape{1}, {static_cast<float>(acc)}, {&a});
    r.set_dvalue(acc);
    detail::record(r, [an = a.node(), rn = r.node()]() {
        an->ensure_grad();
        float g = rn->grad[0];
        for (auto& gv : an->grad) gv += g;
    });
    return r;
}

inline Tensor mean(const Tensor& a) {
    int64_t n = a.numel();
    if (n == 0) fail("mean: empty tensor");
    double acc = 0.0;
    if (!a.node()->ddata.empty())
        for (double v : a.node()->ddata) acc += v;
    else
        for (float v : a.data()) acc += v;
    Tensor r = detail::make_result("mean", Shape{1}, {static_cast<float>(acc / n)}, {&a});
    r.set_dvalue(acc / static_cast<double>(n));
    detail::record(r, [an = a.node(), rn = r.node(), n]() {
        an->ensure_grad();
        float g = rn->grad[0] / static_cast<float>(n);
        for (auto& gv : an->grad) gv += g;
    });
    return r;
}

// sum over the last axis: [..., C] -> [...]; a 1-D input reduces to [1]
inline Tensor sum_last(const Tensor& a) {
    if (a.ndim() == 0) fail("sum_last: scalar input");
    int64_t c = a.dim(a.ndim() - 1);
    int64_t rows = a.numel() / c;
    Shape os(a.shape().begin(), a.shape().end() - 1);
    if (os.empty()) os = {1};
    std::vector<float> out(static_cast<size_t>(rows));
    std::vector<double> dout(static_cast<size_t>(rows));
    const auto& x = a.data();
    for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t j = 0; j < c; ++j) acc += x[static_cast<size_t>(r * c + j)];
        out[static_cast<size_t>(r)] = static_cast<float>(acc);
        dout[static_cast<size_t>(r)] = acc;
    }
    Tensor r = detail::make_result("sum_last", os, std::move(out), {&a});
    r.node()->ddata = std::move(dout);
    if (rows == 1) r.set_dvalue(r.node()->ddata[0]);
    detail::record(r, [an = a.node(), rn = r.node(), rows, c]() {
        an->ensure_grad();
        for (int64_t i = 0; i < rows; ++i) {
            float g = rn->grad[static_cast<size_t>(i)];
            for (int64_t j = 0; j < c; ++j) an->grad[static_cast<size_t>(i * c + j)] += g;
        }
    });
    return r;
}

// --- backward ------------------------------------------------------------

inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        fail("backward: loss must be scalar, got " + shape_str(loss.shape()));
    Tape* tape = Tape::active();
    if (tape == nullptr) fail("backward: no active tape");
    if (!loss.requires_grad())
        fail("backward: loss is not connected to the tape (no input requires grad)");
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0f;
    const auto& nodes = tape->nodes();
    bool seen = false;
    for (size_t i = nodes.size(); i-- > 0;) {
        const NodePtr& n = nodes[i];
        if (n.get() == loss.node().get()) seen = true;
        if (!seen) continue;  // nodes created after the loss cannot feed it
        if (!n->grad.empty() && n->backward_fn) n->backward_fn();
    }
}

inline void zero_grads(const std::vector<Tensor>& params) {
    for (auto p : params) p.zero_grad();
}

}  // namespace motrack
