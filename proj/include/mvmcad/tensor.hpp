#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mvmcad/errors.hpp"

namespace mvmcad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size());
    std::size_t acc = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        strides[i] = acc;
        acc *= shape[i];
    }
    return strides;
}

// Trailing-dimension broadcast: align shapes from the right, each pair of
// dims must be equal or one of them 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    Shape out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw ValidationError("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
        out[out.size() - 1 - i] = std::max(da, db);
    }
    return out;
}

// Strides for indexing a tensor of shape `from` with coordinates of the
// broadcast shape `to`; broadcast axes get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to) {
    std::vector<std::size_t> strides(to.size(), 0);
    auto own = row_major_strides(from);
    for (std::size_t i = 0; i < from.size(); ++i) {
        std::size_t ti = to.size() - from.size() + i;
        if (from[i] != 1) strides[ti] = own[i];
    }
    return strides;
}

// Dense row-major tensor. Plain value type; gradient tracking lives in the
// tape layer (autodiff.hpp), which stores Tensors for values and grads.
template <typename Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), Real(0)) {}
    Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != data.size())
            throw ValidationError("tensor data length does not match shape " + shape_str(shape));
    }
    static Tensor scalar(Real v) { return Tensor({1}, {v}); }
    static Tensor full(Shape s, Real v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }

    Real& operator[](std::size_t i) { return data[i]; }
    Real operator[](std::size_t i) const { return data[i]; }

    Real& at(std::initializer_list<std::size_t> idx) {
        return data[flat_index(idx)];
    }
    Real at(std::initializer_list<std::size_t> idx) const {
        return data[flat_index(idx)];
    }

    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        auto strides = row_major_strides(shape);
        std::size_t flat = 0, i = 0;
        for (std::size_t v : idx) flat += v * strides[i++];
        return flat;
    }

    bool all_finite() const {
        for (Real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
        return out;
    }
};

// Applies `f` over the broadcast of a and b.
template <typename Real, typename F>
Tensor<Real> broadcast_binary(const Tensor<Real>& a, const Tensor<Real>& b, F&& f) {
    Shape out_shape = broadcast_shape(a.shape, b.shape);
    Tensor<Real> out(out_shape);
    auto sa = broadcast_strides(a.shape, out_shape);
    auto sb = broadcast_strides(b.shape, out_shape);
    std::vector<std::size_t> idx(out_shape.size(), 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t d = 0; d < idx.size(); ++d) {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        out.data[flat] = f(a.data[ia], b.data[ib]);
        for (std::size_t d = idx.size(); d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

// Sums `t` down to `target` shape (reverse of broadcasting).
template <typename Real>
Tensor<Real> reduce_to_shape(const Tensor<Real>& t, const Shape& target) {
    if (t.shape == target) return t;
    Tensor<Real> out(target);
    auto st = broadcast_strides(target, t.shape);
    std::vector<std::size_t> idx(t.shape.size(), 0);
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t io = 0;
        for (std::size_t d = 0; d < idx.size(); ++d) io += idx[d] * st[d];
        out.data[io] += t.data[flat];
        for (std::size_t d = idx.size(); d-- > 0;) {
            if (++idx[d] < t.shape[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

namespace detail {

// Batched matmul kernel on raw pointers, row-major [m,k] x [k,n].
template <typename Real>
void matmul_2d(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
               std::size_t n, bool transpose_a, bool transpose_b) {
    std::fill(c, c + m * n, Real(0));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            Real av = transpose_a ? a[p * m + i] : a[i * k + p];
            const Real* brow = transpose_b ? nullptr : b + p * n;
            Real* crow = c + i * n;
            if (transpose_b) {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace detail

// Batched matrix product with trailing-dim batch broadcast. With
// transpose_b, b is taken as [..,n,k].
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b, bool transpose_a = false,
                    bool transpose_b = false) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ValidationError("matmul requires rank >= 2, got " + shape_str(a.shape) + " x " +
                              shape_str(b.shape));
    std::size_t m = transpose_a ? a.shape[a.rank() - 1] : a.shape[a.rank() - 2];
    std::size_t k = transpose_a ? a.shape[a.rank() - 2] : a.shape[a.rank() - 1];
    std::size_t kb = transpose_b ? b.shape[b.rank() - 1] : b.shape[b.rank() - 2];
    std::size_t n = transpose_b ? b.shape[b.rank() - 2] : b.shape[b.rank() - 1];
    if (k != kb)
        throw ValidationError("matmul inner dimension mismatch: " + shape_str(a.shape) + " x " +
                              shape_str(b.shape));
    Shape batch_a(a.shape.begin(), a.shape.end() - 2);
    Shape batch_b(b.shape.begin(), b.shape.end() - 2);
    Shape batch = broadcast_shape(batch_a, batch_b);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<Real> out(out_shape);

    std::size_t batches = numel(batch);
    auto sa = broadcast_strides(batch_a, batch);
    auto sb = broadcast_strides(batch_b, batch);
    std::size_t mat_a = m * k, mat_b = k * n, mat_c = m * n;
    std::vector<std::size_t> idx(batch.size(), 0);
    for (std::size_t bi = 0; bi < batches; ++bi) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t d = 0; d < idx.size(); ++d) {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        detail::matmul_2d(a.data.data() + ia * mat_a, b.data.data() + ib * mat_b,
                          out.data.data() + bi * mat_c, m, k, n, transpose_a, transpose_b);
        for (std::size_t d = idx.size(); d-- > 0;) {
            if (++idx[d] < batch[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

enum class ReduceKind { Sum, Mean, Max };

template <typename Real>
Tensor<Real> reduce(const Tensor<Real>& x, std::size_t axis, ReduceKind kind,
                    bool keepdim = false) {
    if (axis >= x.rank()) throw ValidationError("reduce axis out of range for " + shape_str(x.shape));
    std::size_t outer = 1, inner = 1, len = x.shape[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape[i];
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    Shape out_shape = x.shape;
    if (keepdim)
        out_shape[axis] = 1;
    else
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    Tensor<Real> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const Real* base = x.data.data() + o * len * inner + in;
            Real acc;
            if (kind == ReduceKind::Max) {
                acc = base[0];
                for (std::size_t j = 1; j < len; ++j) acc = std::max(acc, base[j * inner]);
            } else {
                acc = Real(0);
                for (std::size_t j = 0; j < len; ++j) acc += base[j * inner];
                if (kind == ReduceKind::Mean) acc /= static_cast<Real>(len);
            }
            out.data[o * inner + in] = acc;
        }
    }
    return out;
}

template <typename Real>
Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& perm) {
    if (perm.size() != x.rank()) throw ValidationError("permute rank mismatch");
    Shape out_shape(x.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape[perm[i]];
    Tensor<Real> out(out_shape);
    auto in_strides = row_major_strides(x.shape);
    std::vector<std::size_t> src_stride(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) src_stride[i] = in_strides[perm[i]];
    std::vector<std::size_t> idx(out_shape.size(), 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < idx.size(); ++d) src += idx[d] * src_stride[d];
        out.data[flat] = x.data[src];
        for (std::size_t d = idx.size(); d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw ValidationError("reshape " + shape_str(x.shape) + " -> " + shape_str(new_shape) +
                              " changes element count");
    Tensor<Real> out;
    out.shape = std::move(new_shape);
    out.data = x.data;
    return out;
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
    if (axis >= x.rank()) throw ValidationError("softmax axis out of range");
    std::size_t outer = 1, inner = 1, len = x.shape[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape[i];
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    Tensor<Real> out(x.shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const Real* src = x.data.data() + o * len * inner + in;
            Real* dst = out.data.data() + o * len * inner + in;
            Real mx = src[0];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, src[j * inner]);
            Real sum = Real(0);
            for (std::size_t j = 0; j < len; ++j) {
                Real e = std::exp(src[j * inner] - mx);
                dst[j * inner] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < len; ++j) dst[j * inner] /= sum;
        }
    }
    return out;
}

}  // namespace mvmcad
