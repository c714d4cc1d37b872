#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mspc::ad {

template <class T>
struct Tensor {
    std::size_t rows = 0, cols = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, T(0)) {}

    T* row(std::size_t i) { return v.data() + i * cols; }
    const T* row(std::size_t i) const { return v.data() + i * cols; }
    T& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    const T& at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    std::size_t count() const { return v.size(); }
    void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

/// Value plus gradient accumulator. Copies share storage, so a Var captured
/// by a tape closure sees gradients written later.
template <class T>
struct Var {
    std::shared_ptr<Tensor<T>> val;
    std::shared_ptr<Tensor<T>> grad;

    Var() = default;
    Var(std::size_t r, std::size_t c)
        : val(std::make_shared<Tensor<T>>(r, c)), grad(std::make_shared<Tensor<T>>(r, c)) {}

    std::size_t rows() const { return val->rows; }
    std::size_t cols() const { return val->cols; }
};

/// Recorded forward operations; backward() replays them in reverse,
/// accumulating into Var gradients.
template <class T>
class Tape {
  public:
    void record(std::function<void()> op) { ops_.push_back(std::move(op)); }
    void backward() {
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }
    void clear() { ops_.clear(); }
    std::size_t size() const { return ops_.size(); }

  private:
    std::vector<std::function<void()>> ops_;
};

// y = x * W^T + b. W is (out x in) row-major, b is (1 x out).
template <class T>
void linear_forward(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b, Tensor<T>& y) {
    const std::size_t n = x.rows, in = x.cols, out = W.rows;
    y.rows = n;
    y.cols = out;
    y.v.assign(n * out, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.row(i);
        T* yi = y.row(i);
        for (std::size_t j = 0; j < out; ++j) {
            const T* wj = W.row(j);
            T acc = b.v[j];
            for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wj[k];
            yi[j] = acc;
        }
    }
}

template <class T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& W, const Var<T>& b) {
    Var<T> y(x.rows(), W.rows());
    linear_forward(*x.val, *W.val, *b.val, *y.val);
    tape.record([x, W, b, y] {
        const std::size_t n = x.rows(), in = x.cols(), out = W.rows();
        for (std::size_t i = 0; i < n; ++i) {
            const T* dyi = y.grad->row(i);
            const T* xi = x.val->row(i);
            T* dxi = x.grad->row(i);
            for (std::size_t j = 0; j < out; ++j) {
                const T g = dyi[j];
                if (g == T(0)) continue;
                const T* wj = W.val->row(j);
                T* dwj = W.grad->row(j);
                for (std::size_t k = 0; k < in; ++k) {
                    dxi[k] += g * wj[k];
                    dwj[k] += g * xi[k];
                }
                b.grad->v[j] += g;
            }
        }
    });
    return y;
}

template <class T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
    Var<T> y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.val->count(); ++i) y.val->v[i] = x.val->v[i] > T(0) ? x.val->v[i] : T(0);
    tape.record([x, y] {
        for (std::size_t i = 0; i < x.val->count(); ++i) {
            if (x.val->v[i] > T(0)) x.grad->v[i] += y.grad->v[i];
        }
    });
    return y;
}

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    Var<T> y(a.rows(), a.cols());
    for (std::size_t i = 0; i < y.val->count(); ++i) y.val->v[i] = a.val->v[i] + b.val->v[i];
    tape.record([a, b, y] {
        for (std::size_t i = 0; i < y.val->count(); ++i) {
            a.grad->v[i] += y.grad->v[i];
            b.grad->v[i] += y.grad->v[i];
        }
    });
    return y;
}

/// Per-channel scaling: y_ij = x_ij * gamma_j (gamma is 1 x C).
template <class T>
Var<T> scale_channels(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma) {
    const std::size_t n = x.rows(), c = x.cols();
    Var<T> y(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.val->row(i);
        T* yi = y.val->row(i);
        for (std::size_t j = 0; j < c; ++j) yi[j] = xi[j] * gamma.val->v[j];
    }
    tape.record([x, gamma, y] {
        const std::size_t n = x.rows(), c = x.cols();
        for (std::size_t i = 0; i < n; ++i) {
            const T* xi = x.val->row(i);
            const T* dyi = y.grad->row(i);
            T* dxi = x.grad->row(i);
            for (std::size_t j = 0; j < c; ++j) {
                dxi[j] += dyi[j] * gamma.val->v[j];
                gamma.grad->v[j] += dyi[j] * xi[j];
            }
        }
    });
    return y;
}

/// Row-wise layer normalization without affine parameters.
template <class T>
Var<T> layer_norm(Tape<T>& tape, const Var<T>& x, T eps = T(1e-5)) {
    const std::size_t n = x.rows(), c = x.cols();
    Var<T> y(n, c);
    auto inv_sigma = std::make_shared<std::vector<T>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.val->row(i);
        T mu = T(0);
        for (std::size_t j = 0; j < c; ++j) mu += xi[j];
        mu /= T(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= T(c);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        T* yi = y.val->row(i);
        for (std::size_t j = 0; j < c; ++j) yi[j] = (xi[j] - mu) * is;
    }
    tape.record([x, y, inv_sigma] {
        const std::size_t n = x.rows(), c = x.cols();
        for (std::size_t i = 0; i < n; ++i) {
            const T* yi = y.val->row(i);
            const T* dyi = y.grad->row(i);
            T* dxi = x.grad->row(i);
            T mean_dy = T(0), mean_dyy = T(0);
            for (std::size_t j = 0; j < c; ++j) {
                mean_dy += dyi[j];
                mean_dyy += dyi[j] * yi[j];
            }
            mean_dy /= T(c);
            mean_dyy /= T(c);
            const T is = (*inv_sigma)[i];
            for (std::size_t j = 0; j < c; ++j) {
                dxi[j] += is * (dyi[j] - mean_dy - yi[j] * mean_dyy);
            }
        }
    });
    return y;
}

}  // namespace mspc::ad
