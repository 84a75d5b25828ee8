#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mvmcad/tensor.hpp"

namespace mvmcad {

// Reverse-mode tape over Tensor<Real>. Ops append nodes in execution order;
// backward() traverses in reverse creation order, which is a reverse
// topological order because every op only consumes already-created nodes.
template <typename Real>
class Tape;

template <typename Real>
struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    Tape<Real>* tape = nullptr;
    std::function<void(Node&)> backprop;  // pushes this->grad into parents
};

template <typename Real>
using Var = std::shared_ptr<Node<Real>>;

template <typename Real>
class Tape {
public:
    bool check_finite = false;

    Var<Real> leaf(Tensor<Real> value, bool requires_grad) {
        auto n = std::make_shared<Node<Real>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        if (requires_grad) n->grad = Tensor<Real>(n->value.shape);
        n->tape = this;
        nodes_.push_back(n);
        return n;
    }

    Var<Real> constant(Tensor<Real> value) { return leaf(std::move(value), false); }

    Var<Real> make(Tensor<Real> value, bool requires_grad, std::function<void(Node<Real>&)> back) {
        if (check_finite && !value.all_finite())
            throw NumericError("non-finite value produced on tape");
        auto n = leaf(std::move(value), requires_grad);
        if (requires_grad) n->backprop = std::move(back);
        return n;
    }

    void backward(const Var<Real>& loss) {
        if (loss->value.size() != 1)
            throw ValidationError("backward requires a scalar loss, got " +
                                  shape_str(loss->value.shape));
        if (loss->tape != this) throw ValidationError("loss does not belong to this tape");
        if (!loss->requires_grad) return;
        loss->grad.data[0] = Real(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node<Real>& n = *nodes_[i];
            if (n.requires_grad && n.backprop) n.backprop(n);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Var<Real>> nodes_;
};

namespace ad {

template <typename Real>
void accumulate(const Var<Real>& p, const Tensor<Real>& g) {
    if (!p->requires_grad) return;
    Tensor<Real> reduced = reduce_to_shape(g, p->value.shape);
    for (std::size_t i = 0; i < reduced.size(); ++i) p->grad.data[i] += reduced.data[i];
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
    auto v = broadcast_binary(a->value, b->value, [](Real x, Real y) { return x + y; });
    bool rg = a->requires_grad || b->requires_grad;
    return a->tape->make(std::move(v), rg, [a, b](Node<Real>& n) {
        accumulate(a, n.grad);
        accumulate(b, n.grad);
    });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
    auto v = broadcast_binary(a->value, b->value, [](Real x, Real y) { return x - y; });
    bool rg = a->requires_grad || b->requires_grad;
    return a->tape->make(std::move(v), rg, [a, b](Node<Real>& n) {
        accumulate(a, n.grad);
        Tensor<Real> neg(n.grad.shape);
        for (std::size_t i = 0; i < neg.size(); ++i) neg.data[i] = -n.grad.data[i];
        accumulate(b, neg);
    });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
    auto v = broadcast_binary(a->value, b->value, [](Real x, Real y) { return x * y; });
    bool rg = a->requires_grad || b->requires_grad;
    return a->tape->make(std::move(v), rg, [a, b](Node<Real>& n) {
        if (a->requires_grad)
            accumulate(a, broadcast_binary(n.grad, b->value, [](Real g, Real y) { return g * y; }));
        if (b->requires_grad)
            accumulate(b, broadcast_binary(n.grad, a->value, [](Real g, Real x) { return g * x; }));
    });
}

template <typename Real>
void check_denominator(const Tensor<Real>& den) {
    for (Real v : den.data)
        if (std::abs(static_cast<double>(v)) < 1e-12)
            throw NumericError("division by near-zero denominator (|d| < 1e-12)");
}

template <typename Real>
Var<Real> div(const Var<Real>& a, const Var<Real>& b) {
    check_denominator(b->value);
    auto v = broadcast_binary(a->value, b->value, [](Real x, Real y) { return x / y; });
    bool rg = a->requires_grad || b->requires_grad;
    return a->tape->make(std::move(v), rg, [a, b](Node<Real>& n) {
        if (a->requires_grad)
            accumulate(a, broadcast_binary(n.grad, b->value, [](Real g, Real y) { return g / y; }));
        if (b->requires_grad) {
            auto t = broadcast_binary(n.grad, a->value, [](Real g, Real x) { return g * x; });
            accumulate(b, broadcast_binary(t, b->value, [](Real gx, Real y) { return -gx / (y * y); }));
        }
    });
}

template <typename Real, typename FwdF, typename GradF>
Var<Real> unary_pointwise(const Var<Real>& x, FwdF fwd, GradF dfdx) {
    Tensor<Real> v(x->value.shape);
    for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = fwd(x->value.data[i]);
    return x->tape->make(std::move(v), x->requires_grad, [x, dfdx](Node<Real>& n) {
        Tensor<Real> g(x->value.shape);
        for (std::size_t i = 0; i < g.size(); ++i)
            g.data[i] = n.grad.data[i] * dfdx(x->value.data[i], n.value.data[i]);
        accumulate(x, g);
    });
}

template <typename Real>
Var<Real> neg(const Var<Real>& x) {
    return unary_pointwise(x, [](Real v) { return -v; }, [](Real, Real) { return Real(-1); });
}

template <typename Real>
Var<Real> square(const Var<Real>& x) {
    return unary_pointwise(x, [](Real v) { return v * v; },
                           [](Real v, Real) { return Real(2) * v; });
}

template <typename Real>
Var<Real> abs(const Var<Real>& x) {
    return unary_pointwise(x, [](Real v) { return std::abs(v); },
                           [](Real v, Real) { return v < Real(0) ? Real(-1) : Real(1); });
}

template <typename Real>
Var<Real> reciprocal(const Var<Real>& x) {
    check_denominator(x->value);
    return unary_pointwise(x, [](Real v) { return Real(1) / v; },
                           [](Real, Real y) { return -y * y; });
}

template <typename Real>
Var<Real> sqrt(const Var<Real>& x) {
    return unary_pointwise(x, [](Real v) { return std::sqrt(v); },
                           [](Real, Real y) { return Real(0.5) / y; });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& x) {
    auto fwd = [](Real v) {
        if (v >= Real(0)) return Real(1) / (Real(1) + std::exp(-v));
        Real e = std::exp(v);
        return e / (Real(1) + e);
    };
    return unary_pointwise(x, fwd, [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Var<Real> gelu(const Var<Real>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475;
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    auto fwd = [=](Real v) {
        return static_cast<Real>(0.5 * double(v) * (1.0 + std::erf(double(v) * inv_sqrt2)));
    };
    auto grad = [=](Real v, Real) {
        double cdf = 0.5 * (1.0 + std::erf(double(v) * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * double(v) * double(v));
        return static_cast<Real>(cdf + double(v) * pdf);
    };
    return unary_pointwise(x, fwd, grad);
}

template <typename Real>
Var<Real> scale(const Var<Real>& x, Real c) {
    return unary_pointwise(x, [c](Real v) { return v * c; }, [c](Real, Real) { return c; });
}

template <typename Real>
Var<Real> add_const(const Var<Real>& x, Real c) {
    return unary_pointwise(x, [c](Real v) { return v + c; }, [](Real, Real) { return Real(1); });
}

// max(x, c) elementwise; gradient passes only where x > c.
template <typename Real>
Var<Real> clamp_min(const Var<Real>& x, Real c) {
    return unary_pointwise(x, [c](Real v) { return std::max(v, c); },
                           [c](Real v, Real) { return v > c ? Real(1) : Real(0); });
}

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b, bool ta = false, bool tb = false) {
    auto v = mvmcad::matmul(a->value, b->value, ta, tb);
    bool rg = a->requires_grad || b->requires_grad;
    return a->tape->make(std::move(v), rg, [a, b, ta, tb](Node<Real>& n) {
        if (a->requires_grad) {
            Tensor<Real> da = ta ? mvmcad::matmul(b->value, n.grad, tb, true)
                                 : mvmcad::matmul(n.grad, b->value, false, !tb);
            accumulate(a, da);
        }
        if (b->requires_grad) {
            Tensor<Real> db = tb ? mvmcad::matmul(n.grad, a->value, true, ta)
                                 : mvmcad::matmul(a->value, n.grad, !ta, false);
            accumulate(b, db);
        }
    });
}

template <typename Real>
Var<Real> reduce(const Var<Real>& x, std::size_t axis, ReduceKind kind, bool keepdim = false) {
    auto v = mvmcad::reduce(x->value, axis, kind, keepdim);
    return x->tape->make(std::move(v), x->requires_grad, [x, axis, kind, keepdim](Node<Real>& n) {
        std::size_t len = x->value.shape[axis];
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= x->value.shape[i];
        for (std::size_t i = axis + 1; i < x->value.rank(); ++i) inner *= x->value.shape[i];
        Tensor<Real> g(x->value.shape);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                Real go = n.grad.data[o * inner + in];
                Real* dst = g.data.data() + o * len * inner + in;
                const Real* src = x->value.data.data() + o * len * inner + in;
                switch (kind) {
                    case ReduceKind::Sum:
                        for (std::size_t j = 0; j < len; ++j) dst[j * inner] = go;
                        break;
                    case ReduceKind::Mean:
                        for (std::size_t j = 0; j < len; ++j)
                            dst[j * inner] = go / static_cast<Real>(len);
                        break;
                    case ReduceKind::Max: {
                        std::size_t arg = 0;
                        Real best = src[0];
                        for (std::size_t j = 1; j < len; ++j)
                            if (src[j * inner] > best) { best = src[j * inner]; arg = j; }
                        dst[arg * inner] = go;
                        break;
                    }
                }
            }
        }
        (void)keepdim;
        accumulate(x, g);
    });
}

template <typename Real>
Var<Real> sum_all(const Var<Real>& x) {
    Real s = Real(0);
    for (Real v : x->value.data) s += v;
    return x->tape->make(Tensor<Real>::scalar(s), x->requires_grad, [x](Node<Real>& n) {
        accumulate(x, Tensor<Real>::full(x->value.shape, n.grad.data[0]));
    });
}

template <typename Real>
Var<Real> mean_all(const Var<Real>& x) {
    return scale(sum_all(x), Real(1) / static_cast<Real>(x->value.size()));
}

template <typename Real>
Var<Real> softmax(const Var<Real>& x, std::size_t axis) {
    auto v = mvmcad::softmax(x->value, axis);
    return x->tape->make(std::move(v), x->requires_grad, [x, axis](Node<Real>& n) {
        std::size_t len = x->value.shape[axis];
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= x->value.shape[i];
        for (std::size_t i = axis + 1; i < x->value.rank(); ++i) inner *= x->value.shape[i];
        Tensor<Real> g(x->value.shape);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const Real* y = n.value.data.data() + o * len * inner + in;
                const Real* gy = n.grad.data.data() + o * len * inner + in;
                Real dot = Real(0);
                for (std::size_t j = 0; j < len; ++j) dot += gy[j * inner] * y[j * inner];
                Real* dst = g.data.data() + o * len * inner + in;
                for (std::size_t j = 0; j < len; ++j)
                    dst[j * inner] = y[j * inner] * (gy[j * inner] - dot);
            }
        }
        accumulate(x, g);
    });
}

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape new_shape) {
    auto v = mvmcad::reshape(x->value, new_shape);
    return x->tape->make(std::move(v), x->requires_grad, [x](Node<Real>& n) {
        accumulate(x, mvmcad::reshape(n.grad, x->value.shape));
    });
}

template <typename Real>
Var<Real> permute(const Var<Real>& x, std::vector<std::size_t> perm) {
    auto v = mvmcad::permute(x->value, perm);
    return x->tape->make(std::move(v), x->requires_grad, [x, perm](Node<Real>& n) {
        std::vector<std::size_t> inv(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
        accumulate(x, mvmcad::permute(n.grad, inv));
    });
}

template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& s = x->value.shape;
    if (axis >= s.size() || start + len > s[axis]) throw ValidationError("slice out of range");
    Shape out_shape = s;
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Tensor<Real> v(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j)
            std::copy_n(x->value.data.data() + (o * s[axis] + start + j) * inner, inner,
                        v.data.data() + (o * len + j) * inner);
    return x->tape->make(std::move(v), x->requires_grad,
                         [x, axis, start, len, outer, inner](Node<Real>& n) {
        Tensor<Real> g(x->value.shape);
        std::size_t full = x->value.shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < len; ++j)
                std::copy_n(n.grad.data.data() + (o * len + j) * inner, inner,
                            g.data.data() + (o * full + start + j) * inner);
        accumulate(x, g);
    });
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t axis) {
    if (parts.empty()) throw ValidationError("concat of zero tensors");
    const Shape& s0 = parts[0]->value.shape;
    std::size_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p->value.rank() != s0.size()) throw ValidationError("concat rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != axis && p->value.shape[i] != s0[i])
                throw ValidationError("concat shape mismatch on non-concat axis");
        total += p->value.shape[axis];
        rg = rg || p->requires_grad;
    }
    Shape out_shape = s0;
    out_shape[axis] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    Tensor<Real> v(out_shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::size_t len = p->value.shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p->value.data.data() + o * len * inner, len * inner,
                        v.data.data() + (o * total + offset) * inner);
        offset += len;
    }
    return parts[0]->tape->make(std::move(v), rg, [parts, axis, outer, inner, total](Node<Real>& n) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            std::size_t len = p->value.shape[axis];
            if (p->requires_grad) {
                Tensor<Real> g(p->value.shape);
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(n.grad.data.data() + (o * total + offset) * inner, len * inner,
                                g.data.data() + o * len * inner);
                accumulate(p, g);
            }
            offset += len;
        }
    });
}

// Stops gradient flow: a constant leaf holding the same value.
template <typename Real>
Var<Real> detach(const Var<Real>& x) {
    return x->tape->constant(x->value);
}

// L2 normalization of fibers along `axis`: x / (||x||_2 + eps).
template <typename Real>
Var<Real> normalize_l2(const Var<Real>& x, std::size_t axis, Real eps) {
    if (eps <= Real(0)) throw ValidationError("normalize_l2 requires eps > 0");
    auto norms = sqrt(reduce(square(x), axis, ReduceKind::Sum, /*keepdim=*/true));
    return div(x, add_const(norms, eps));
}

}  // namespace ad

// Central-difference gradient estimate of a scalar-valued function; the
// verification oracle for every backward implementation.
template <typename Real>
Tensor<Real> finite_diff_grad(const std::function<Real(const Tensor<Real>&)>& f,
                              const Tensor<Real>& x, Real step) {
    if (step <= Real(0)) throw ValidationError("finite_diff_grad requires step > 0");
    Tensor<Real> g(x.shape);
    Tensor<Real> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Real orig = probe.data[i];
        probe.data[i] = orig + step;
        Real fp = f(probe);
        probe.data[i] = orig - step;
        Real fm = f(probe);
        probe.data[i] = orig;
        g.data[i] = (fp - fm) / (Real(2) * step);
    }
    return g;
}

}  // namespace mvmcad
