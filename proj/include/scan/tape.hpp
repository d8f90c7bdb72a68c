#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "scan/tensor.hpp"

namespace scan {

// A trainable named tensor. Gradients accumulate here across backward calls
// until the optimizer zeroes them; the value/grad storage outlives any Tape.
template <typename Real>
struct Param {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;

    explicit Param(std::string n, Tensor<Real> v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
};

// Insertion-ordered registry; checkpoint records follow this order.
template <typename Real>
class ParamStore {
  public:
    Param<Real>& create(const std::string& name, Tensor<Real> init) {
        if (index_.count(name)) throw ShapeError("duplicate parameter name: " + name);
        index_[name] = params_.size();
        params_.push_back(std::make_unique<Param<Real>>(name, std::move(init)));
        return *params_.back();
    }

    Param<Real>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
        return *params_[it->second];
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    size_t size() const { return params_.size(); }
    Param<Real>& at(size_t i) { return *params_[i]; }
    const Param<Real>& at(size_t i) const { return *params_[i]; }

    void zero_grads() {
        for (auto& p : params_) p->grad.zero();
    }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

  private:
    std::deque<std::unique_ptr<Param<Real>>> params_;
    std::unordered_map<std::string, size_t> index_;
};

template <typename Real>
class Tape;

// Handle to a node on a tape.
template <typename Real>
struct Var {
    Tape<Real>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const std::vector<int>& shape() const;
    const Tensor<Real>& value() const;
};

// Reverse-mode tape. Nodes are recorded in forward order; backward replays
// closures in reverse. One tape per thread of execution.
template <typename Real>
class Tape {
  public:
    static constexpr Real kLogClamp = Real(1e-12);

    struct Node {
        Tensor<Real> val_store;
        Tensor<Real> grad_store;
        Tensor<Real>* val = nullptr;
        Tensor<Real>* grad = nullptr;  // null when gradient not needed
        bool is_leaf = false;
        std::function<void(Tape&)> back;
    };

    const Tensor<Real>& value(Var<Real> v) const { return *node(v.id).val; }
    const Tensor<Real>& grad(Var<Real> v) const {
        const Node& n = node(v.id);
        if (!n.grad) throw ShapeError("node has no gradient");
        return *n.grad;
    }
    size_t size() const { return nodes_.size(); }

    // Disables gradient recording (forward values only); used for decoding.
    void set_grad_enabled(bool e) { grad_enabled_ = e; }
    bool grad_enabled() const { return grad_enabled_; }

    // ----- graph sources -----

    Var<Real> leaf(Param<Real>& p) {
        Node n;
        n.val = &p.value;
        n.grad = grad_enabled_ ? &p.grad : nullptr;
        n.is_leaf = true;
        return push(std::move(n));
    }

    Var<Real> constant(Tensor<Real> t) {
        Node n;
        n.val_store = std::move(t);
        n.val = &n.val_store;
        return push(std::move(n));
    }

    Var<Real> scalar(Real v) { return constant(Tensor<Real>::scalar(v)); }

    // ----- elementwise -----

    Var<Real> add(Var<Real> a, Var<Real> b) { return zip(a, b, "add",
        [](Real x, Real y) { return x + y; },
        [](Real, Real, Real g, Real& dx, Real& dy) { dx += g; dy += g; }); }

    Var<Real> sub(Var<Real> a, Var<Real> b) { return zip(a, b, "sub",
        [](Real x, Real y) { return x - y; },
        [](Real, Real, Real g, Real& dx, Real& dy) { dx += g; dy -= g; }); }

    Var<Real> mul(Var<Real> a, Var<Real> b) { return zip(a, b, "mul",
        [](Real x, Real y) { return x * y; },
        [](Real x, Real y, Real g, Real& dx, Real& dy) { dx += g * y; dy += g * x; }); }

    // y = scale * x + shift, elementwise
    Var<Real> affine(Var<Real> a, Real scale, Real shift) {
        const Tensor<Real>& x = value(a);
        Tensor<Real> y(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) y[i] = scale * x[i] + shift;
        return record(std::move(y), {a}, [a, scale](Tape& t) {
            int self = t.last_id_;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                const Tensor<Real>& g = *t.node(self).grad;
                for (int64_t i = 0; i < g.numel(); ++i) dx[i] += scale * g[i];
            });
        });
    }

    Var<Real> exp(Var<Real> a) { return unary(a,
        [](Real x) { return std::exp(x); },
        [](Real, Real y) { return y; }); }

    // log with the argument clamped at kLogClamp; zero gradient below the clamp
    Var<Real> log(Var<Real> a) { return unary(a,
        [](Real x) { return std::log(std::max(x, kLogClamp)); },
        [](Real x, Real) { return x > kLogClamp ? Real(1) / x : Real(0); }); }

    Var<Real> tanh(Var<Real> a) { return unary(a,
        [](Real x) { return std::tanh(x); },
        [](Real, Real y) { return Real(1) - y * y; }); }

    Var<Real> sigmoid(Var<Real> a) { return unary(a,
        [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
        [](Real, Real y) { return y * (Real(1) - y); }); }

    Var<Real> relu(Var<Real> a) { return unary(a,
        [](Real x) { return x > Real(0) ? x : Real(0); },
        [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); }); }

    // ----- shape -----

    Var<Real> reshape(Var<Real> a, std::vector<int> shape) {
        const Tensor<Real>& x = value(a);
        if (shape_numel(shape) != x.numel())
            throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " +
                             shape_str(shape));
        Tensor<Real> y(shape, x.data);
        return record(std::move(y), {a}, [a](Tape& t) {
            int self = t.last_id_;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                const Tensor<Real>& g = *t.node(self).grad;
                for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
            });
        });
    }

    Var<Real> transpose(Var<Real> a) {
        const Tensor<Real>& x = value(a);
        require(x.rank() == 2, "transpose", x, "rank-2 input");
        int r = x.dim(0), c = x.dim(1);
        Tensor<Real> y({c, r});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) y.at(j, i) = x.at(i, j);
        return record(std::move(y), {a}, [a, r, c](Tape& t) {
            int self = t.last_id_;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                const Tensor<Real>& g = *t.node(self).grad;
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        dx.data[static_cast<size_t>(i) * c + j] += g.at(j, i);
            });
        });
    }

    // Concatenation along axis 0 (shapes equal elsewhere).
    Var<Real> concat0(const std::vector<Var<Real>>& parts) {
        if (parts.empty()) throw ShapeError("concat0: no inputs");
        std::vector<int> shape = value(parts[0]).shape;
        int total = 0;
        for (auto p : parts) {
            const auto& s = value(p).shape;
            if (s.size() != shape.size() ||
                !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
                throw ShapeError("concat0: incompatible shapes " + shape_str(shape) +
                                 " vs " + shape_str(s));
            total += s[0];
        }
        shape[0] = total;
        Tensor<Real> y(shape);
        size_t off = 0;
        for (auto p : parts) {
            const Tensor<Real>& x = value(p);
            std::copy(x.data.begin(), x.data.end(), y.data.begin() + off);
            off += x.data.size();
        }
        auto parts_copy = parts;
        return record(std::move(y), parts, [parts_copy](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            size_t off = 0;
            for (auto p : parts_copy) {
                size_t len = t.value(p).data.size();
                size_t at = off;
                t.accumulate(p, [&](Tensor<Real>& dx) {
                    for (size_t i = 0; i < len; ++i) dx.data[i] += g.data[at + i];
                });
                off += len;
            }
        });
    }

    // Column-wise concatenation of two matrices with equal row counts.
    Var<Real> concat_cols(Var<Real> a, Var<Real> b) {
        const Tensor<Real>& x = value(a);
        const Tensor<Real>& y = value(b);
        require(x.rank() == 2 && y.rank() == 2 && x.dim(0) == y.dim(0), "concat_cols",
                x, "matching row counts, got " + shape_str(y.shape));
        int rows = x.dim(0), ca = x.dim(1), cb = y.dim(1);
        Tensor<Real> z({rows, ca + cb});
        for (int r = 0; r < rows; ++r) {
            for (int j = 0; j < ca; ++j) z.at(r, j) = x.at(r, j);
            for (int j = 0; j < cb; ++j) z.at(r, ca + j) = y.at(r, j);
        }
        return record(std::move(z), {a, b}, [a, b, rows, ca, cb](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < ca; ++j)
                        dx.data[static_cast<size_t>(r) * ca + j] += g.at(r, j);
            });
            t.accumulate(b, [&](Tensor<Real>& dy) {
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < cb; ++j)
                        dy.data[static_cast<size_t>(r) * cb + j] += g.at(r, ca + j);
            });
        });
    }

    // Rows [start, start+len) along axis 0.
    Var<Real> slice0(Var<Real> a, int start, int len) {
        const Tensor<Real>& x = value(a);
        if (x.rank() < 1 || start < 0 || len <= 0 || start + len > x.dim(0))
            throw ShapeError("slice0: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of " +
                             shape_str(x.shape));
        std::vector<int> shape = x.shape;
        shape[0] = len;
        int64_t stride = x.numel() / x.dim(0);
        Tensor<Real> y(shape);
        std::copy(x.data.begin() + start * stride,
                  x.data.begin() + (start + len) * stride, y.data.begin());
        return record(std::move(y), {a}, [a, start, stride](Tape& t) {
            int self = t.last_id_;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                const Tensor<Real>& g = *t.node(self).grad;
                for (int64_t i = 0; i < g.numel(); ++i)
                    dx[start * stride + i] += g[i];
            });
        });
    }

    // ----- reductions -----

    Var<Real> reduce_sum(Var<Real> a) {
        const Tensor<Real>& x = value(a);
        Real s = 0;
        for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
        return record(Tensor<Real>::scalar(s), {a}, [a](Tape& t) {
            int self = t.last_id_;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                Real g = (*t.node(self).grad)[0];
                for (auto& v : dx.data) v += g;
            });
        });
    }

    Var<Real> reduce_mean(Var<Real> a) {
        int64_t n = value(a).numel();
        return affine(reduce_sum(a), Real(1) / static_cast<Real>(n), Real(0));
    }

    Var<Real> reduce_max(Var<Real> a) {
        const Tensor<Real>& x = value(a);
        int64_t arg = 0;
        for (int64_t i = 1; i < x.numel(); ++i)
            if (x[i] > x[arg]) arg = i;
        return record(Tensor<Real>::scalar(x[arg]), {a}, [a, arg](Tape& t) {
            int self = t.last_id_;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                dx[arg] += (*t.node(self).grad)[0];
            });
        });
    }

    // scalar element x[i] of a rank-1 tensor
    Var<Real> pick(Var<Real> a, int i) {
        const Tensor<Real>& x = value(a);
        require(x.rank() == 1, "pick", x, "rank-1 input");
        if (i < 0 || i >= x.dim(0)) throw ShapeError("pick: index out of range");
        return record(Tensor<Real>::scalar(x[i]), {a}, [a, i](Tape& t) {
            int self = t.last_id_;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                dx[i] += (*t.node(self).grad)[0];
            });
        });
    }

    // ----- linear algebra -----

    Var<Real> matmul(Var<Real> a, Var<Real> b) {
        const Tensor<Real>& x = value(a);
        const Tensor<Real>& y = value(b);
        if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0))
            throw ShapeError("matmul: incompatible shapes " + shape_str(x.shape) +
                             " x " + shape_str(y.shape));
        int p = x.dim(0), q = x.dim(1), r = y.dim(1);
        Tensor<Real> z({p, r});
        for (int i = 0; i < p; ++i)
            for (int k = 0; k < q; ++k) {
                Real xv = x.at(i, k);
                if (xv == Real(0)) continue;
                const Real* yrow = &y.data[static_cast<size_t>(k) * r];
                Real* zrow = &z.data[static_cast<size_t>(i) * r];
                for (int j = 0; j < r; ++j) zrow[j] += xv * yrow[j];
            }
        return record(std::move(z), {a, b}, [a, b, p, q, r](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            const Tensor<Real>& x = t.value(a);
            const Tensor<Real>& y = t.value(b);
            t.accumulate(a, [&](Tensor<Real>& dx) {  // dX += G Y^T
                for (int i = 0; i < p; ++i)
                    for (int j = 0; j < r; ++j) {
                        Real gv = g.at(i, j);
                        if (gv == Real(0)) continue;
                        for (int k = 0; k < q; ++k)
                            dx.data[static_cast<size_t>(i) * q + k] += gv * y.at(k, j);
                    }
            });
            t.accumulate(b, [&](Tensor<Real>& dy) {  // dY += X^T G
                for (int i = 0; i < p; ++i)
                    for (int k = 0; k < q; ++k) {
                        Real xv = x.at(i, k);
                        if (xv == Real(0)) continue;
                        for (int j = 0; j < r; ++j)
                            dy.data[static_cast<size_t>(k) * r + j] += xv * g.at(i, j);
                    }
            });
        });
    }

    // W [out x in] times vector [in] -> [out]
    Var<Real> matvec(Var<Real> w, Var<Real> x) {
        const Tensor<Real>& xv = value(x);
        require(xv.rank() == 1, "matvec", xv, "rank-1 vector");
        Var<Real> col = reshape(x, {xv.dim(0), 1});
        return reshape(matmul(w, col), {value(w).dim(0)});
    }

    // X [T x D] + row vector b [D], broadcast over rows
    Var<Real> add_rowvec(Var<Real> a, Var<Real> b) {
        const Tensor<Real>& x = value(a);
        const Tensor<Real>& v = value(b);
        require(x.rank() == 2 && v.rank() == 1 && v.dim(0) == x.dim(1), "add_rowvec",
                x, "bias of width " + std::to_string(x.rank() == 2 ? x.dim(1) : -1));
        Tensor<Real> y = x;
        int rows = x.dim(0), cols = x.dim(1);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) y.at(r, c) += v[c];
        return record(std::move(y), {a, b}, [a, b, rows, cols](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
            });
            t.accumulate(b, [&](Tensor<Real>& db) {
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c) db[c] += g.at(r, c);
            });
        });
    }

    // ----- softmax -----

    // Softmax over the last axis (a vector, or each row of a matrix),
    // computed with max subtraction.
    Var<Real> softmax(Var<Real> a) {
        const Tensor<Real>& x = value(a);
        require(x.rank() == 1 || x.rank() == 2, "softmax", x, "rank-1 or rank-2");
        int rows = x.rank() == 2 ? x.dim(0) : 1;
        int cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
        Tensor<Real> y(x.shape);
        for (int r = 0; r < rows; ++r) {
            const Real* in = &x.data[static_cast<size_t>(r) * cols];
            Real* out = &y.data[static_cast<size_t>(r) * cols];
            Real mx = in[0];
            for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
            Real sum = 0;
            for (int c = 0; c < cols; ++c) {
                out[c] = std::exp(in[c] - mx);
                sum += out[c];
            }
            for (int c = 0; c < cols; ++c) out[c] /= sum;
        }
        return record(std::move(y), {a}, [a, rows, cols](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            const Tensor<Real>& y = *t.node(self).val;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                for (int r = 0; r < rows; ++r) {
                    const Real* yr = &y.data[static_cast<size_t>(r) * cols];
                    const Real* gr = &g.data[static_cast<size_t>(r) * cols];
                    Real dot = 0;
                    for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                    Real* dr = &dx.data[static_cast<size_t>(r) * cols];
                    for (int c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
                }
            });
        });
    }

    // ----- convolution / pooling -----

    // x [Cin x L], w [Cout x Cin x k], b [Cout]; stride 1, same padding, k odd.
    Var<Real> conv1d(Var<Real> xv, Var<Real> wv, Var<Real> bv) {
        const Tensor<Real>& x = value(xv);
        const Tensor<Real>& w = value(wv);
        const Tensor<Real>& b = value(bv);
        if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1 || w.dim(1) != x.dim(0) ||
            w.dim(0) != b.dim(0) || w.dim(2) % 2 == 0)
            throw ShapeError("conv1d: incompatible shapes x" + shape_str(x.shape) +
                             " w" + shape_str(w.shape) + " b" + shape_str(b.shape));
        int cin = x.dim(0), len = x.dim(1), cout = w.dim(0), k = w.dim(2);
        int pad = (k - 1) / 2;
        Tensor<Real> y({cout, len});
        for (int o = 0; o < cout; ++o)
            for (int i = 0; i < len; ++i) {
                Real s = b[o];
                for (int c = 0; c < cin; ++c)
                    for (int j = 0; j < k; ++j) {
                        int src = i + j - pad;
                        if (src < 0 || src >= len) continue;
                        s += x.at(c, src) * w.data[(static_cast<size_t>(o) * cin + c) * k + j];
                    }
                y.at(o, i) = s;
            }
        return record(std::move(y), {xv, wv, bv},
                      [xv, wv, bv, cin, len, cout, k, pad](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            const Tensor<Real>& x = t.value(xv);
            const Tensor<Real>& w = t.value(wv);
            t.accumulate(xv, [&](Tensor<Real>& dx) {
                for (int o = 0; o < cout; ++o)
                    for (int i = 0; i < len; ++i) {
                        Real gv = g.at(o, i);
                        if (gv == Real(0)) continue;
                        for (int c = 0; c < cin; ++c)
                            for (int j = 0; j < k; ++j) {
                                int src = i + j - pad;
                                if (src < 0 || src >= len) continue;
                                dx.data[static_cast<size_t>(c) * len + src] +=
                                    gv * w.data[(static_cast<size_t>(o) * cin + c) * k + j];
                            }
                    }
            });
            t.accumulate(wv, [&](Tensor<Real>& dw) {
                for (int o = 0; o < cout; ++o)
                    for (int i = 0; i < len; ++i) {
                        Real gv = g.at(o, i);
                        if (gv == Real(0)) continue;
                        for (int c = 0; c < cin; ++c)
                            for (int j = 0; j < k; ++j) {
                                int src = i + j - pad;
                                if (src < 0 || src >= len) continue;
                                dw.data[(static_cast<size_t>(o) * cin + c) * k + j] +=
                                    gv * x.at(c, src);
                            }
                    }
            });
            t.accumulate(bv, [&](Tensor<Real>& db) {
                for (int o = 0; o < cout; ++o)
                    for (int i = 0; i < len; ++i) db[o] += g.at(o, i);
            });
        });
    }

    // x [Cin x H x W], w [Cout x Cin x k x k], b [Cout]; stride 1, same padding.
    Var<Real> conv2d(Var<Real> xv, Var<Real> wv, Var<Real> bv) {
        const Tensor<Real>& x = value(xv);
        const Tensor<Real>& w = value(wv);
        const Tensor<Real>& b = value(bv);
        if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1 || w.dim(1) != x.dim(0) ||
            w.dim(0) != b.dim(0) || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
            throw ShapeError("conv2d: incompatible shapes x" + shape_str(x.shape) +
                             " w" + shape_str(w.shape) + " b" + shape_str(b.shape));
        int cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0), k = w.dim(2);
        int pad = (k - 1) / 2;
        auto xat = [&](const Tensor<Real>& t, int c, int r, int cc) {
            return t.data[(static_cast<size_t>(c) * h + r) * wd + cc];
        };
        auto wat = [&](const Tensor<Real>& t, int o, int c, int r, int cc) {
            return t.data[((static_cast<size_t>(o) * cin + c) * k + r) * k + cc];
        };
        Tensor<Real> y({cout, h, wd});
        for (int o = 0; o < cout; ++o)
            for (int r = 0; r < h; ++r)
                for (int cc = 0; cc < wd; ++cc) {
                    Real s = b[o];
                    for (int c = 0; c < cin; ++c)
                        for (int dr = 0; dr < k; ++dr) {
                            int sr = r + dr - pad;
                            if (sr < 0 || sr >= h) continue;
                            for (int dc = 0; dc < k; ++dc) {
                                int sc = cc + dc - pad;
                                if (sc < 0 || sc >= wd) continue;
                                s += xat(x, c, sr, sc) * wat(w, o, c, dr, dc);
                            }
                        }
                    y.data[(static_cast<size_t>(o) * h + r) * wd + cc] = s;
                }
        return record(std::move(y), {xv, wv, bv},
                      [xv, wv, bv, cin, h, wd, cout, k, pad](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            const Tensor<Real>& x = t.value(xv);
            const Tensor<Real>& w = t.value(wv);
            auto gat = [&](int o, int r, int cc) {
                return g.data[(static_cast<size_t>(o) * h + r) * wd + cc];
            };
            t.accumulate(xv, [&](Tensor<Real>& dx) {
                for (int o = 0; o < cout; ++o)
                    for (int r = 0; r < h; ++r)
                        for (int cc = 0; cc < wd; ++cc) {
                            Real gv = gat(o, r, cc);
                            if (gv == Real(0)) continue;
                            for (int c = 0; c < cin; ++c)
                                for (int dr = 0; dr < k; ++dr) {
                                    int sr = r + dr - pad;
                                    if (sr < 0 || sr >= h) continue;
                                    for (int dc = 0; dc < k; ++dc) {
                                        int sc = cc + dc - pad;
                                        if (sc < 0 || sc >= wd) continue;
                                        dx.data[(static_cast<size_t>(c) * h + sr) * wd + sc] +=
                                            gv * w.data[((static_cast<size_t>(o) * cin + c) * k +
                                                         dr) * k + dc];
                                    }
                                }
                        }
            });
            t.accumulate(wv, [&](Tensor<Real>& dw) {
                for (int o = 0; o < cout; ++o)
                    for (int r = 0; r < h; ++r)
                        for (int cc = 0; cc < wd; ++cc) {
                            Real gv = gat(o, r, cc);
                            if (gv == Real(0)) continue;
                            for (int c = 0; c < cin; ++c)
                                for (int dr = 0; dr < k; ++dr) {
                                    int sr = r + dr - pad;
                                    if (sr < 0 || sr >= h) continue;
                                    for (int dc = 0; dc < k; ++dc) {
                                        int sc = cc + dc - pad;
                                        if (sc < 0 || sc >= wd) continue;
                                        dw.data[((static_cast<size_t>(o) * cin + c) * k + dr) * k +
                                                dc] += gv * x.data[(static_cast<size_t>(c) * h + sr) *
                                                                   wd + sc];
                                    }
                                }
                        }
            });
            t.accumulate(bv, [&](Tensor<Real>& db) {
                for (int o = 0; o < cout; ++o)
                    for (int r = 0; r < h; ++r)
                        for (int cc = 0; cc < wd; ++cc) db[o] += gat(o, r, cc);
            });
        });
    }

    // x [C x L] -> [C x L/2], window 2, stride 2
    Var<Real> avgpool1d2(Var<Real> a) {
        const Tensor<Real>& x = value(a);
        require(x.rank() == 2, "avgpool1d2", x, "rank-2 input");
        if (x.dim(1) % 2 != 0)
            throw ShapeError("avgpool1d2: odd length " + shape_str(x.shape));
        int c = x.dim(0), l = x.dim(1) / 2;
        Tensor<Real> y({c, l});
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < l; ++j)
                y.at(i, j) = (x.at(i, 2 * j) + x.at(i, 2 * j + 1)) / Real(2);
        return record(std::move(y), {a}, [a, c, l](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                for (int i = 0; i < c; ++i)
                    for (int j = 0; j < l; ++j) {
                        Real half = g.at(i, j) / Real(2);
                        dx.data[static_cast<size_t>(i) * 2 * l + 2 * j] += half;
                        dx.data[static_cast<size_t>(i) * 2 * l + 2 * j + 1] += half;
                    }
            });
        });
    }

    // x [C x H x W] -> [C x H/2 x W/2], window 2x2, stride 2
    Var<Real> avgpool2d2(Var<Real> a) {
        const Tensor<Real>& x = value(a);
        require(x.rank() == 3, "avgpool2d2", x, "rank-3 input");
        if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
            throw ShapeError("avgpool2d2: odd spatial extents " + shape_str(x.shape));
        int c = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2;
        int hi = x.dim(1), wi = x.dim(2);
        Tensor<Real> y({c, h, w});
        for (int i = 0; i < c; ++i)
            for (int r = 0; r < h; ++r)
                for (int cc = 0; cc < w; ++cc) {
                    Real s = 0;
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dc = 0; dc < 2; ++dc)
                            s += x.data[(static_cast<size_t>(i) * hi + 2 * r + dr) * wi +
                                        2 * cc + dc];
                    y.data[(static_cast<size_t>(i) * h + r) * w + cc] = s / Real(4);
                }
        return record(std::move(y), {a}, [a, c, h, w, hi, wi](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                for (int i = 0; i < c; ++i)
                    for (int r = 0; r < h; ++r)
                        for (int cc = 0; cc < w; ++cc) {
                            Real q = g.data[(static_cast<size_t>(i) * h + r) * w + cc] / Real(4);
                            for (int dr = 0; dr < 2; ++dr)
                                for (int dc = 0; dc < 2; ++dc)
                                    dx.data[(static_cast<size_t>(i) * hi + 2 * r + dr) * wi +
                                            2 * cc + dc] += q;
                        }
            });
        });
    }

    // ----- misc network primitives -----

    // Column `id` of embedding matrix E [m x K] -> [m]
    Var<Real> embedding(Var<Real> ev, int id) {
        const Tensor<Real>& e = value(ev);
        require(e.rank() == 2, "embedding", e, "rank-2 matrix");
        int m = e.dim(0), k = e.dim(1);
        if (id < 0 || id >= k)
            throw ShapeError("embedding: token id " + std::to_string(id) +
                             " out of range [0," + std::to_string(k) + ")");
        Tensor<Real> y({m});
        for (int r = 0; r < m; ++r) y[r] = e.at(r, id);
        return record(std::move(y), {ev}, [ev, id, m, k](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            t.accumulate(ev, [&](Tensor<Real>& de) {
                for (int r = 0; r < m; ++r)
                    de.data[static_cast<size_t>(r) * k + id] += g[r];
            });
        });
    }

    // out_i = max(x_{2i}, x_{2i+1}); gradient flows to the winner only
    Var<Real> maxout_pairs(Var<Real> a) {
        const Tensor<Real>& x = value(a);
        require(x.rank() == 1, "maxout_pairs", x, "rank-1 input");
        if (x.dim(0) % 2 != 0)
            throw ShapeError("maxout_pairs: odd dimension " + shape_str(x.shape));
        int n = x.dim(0) / 2;
        Tensor<Real> y({n});
        auto winners = std::make_shared<std::vector<int>>(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            int w = x[2 * i] >= x[2 * i + 1] ? 2 * i : 2 * i + 1;
            (*winners)[static_cast<size_t>(i)] = w;
            y[i] = x[w];
        }
        return record(std::move(y), {a}, [a, n, winners](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                for (int i = 0; i < n; ++i)
                    dx[(*winners)[static_cast<size_t>(i)]] += g[i];
            });
        });
    }

    // Inverted dropout; identity when `train` is false or p == 0.
    Var<Real> dropout(Var<Real> a, Real p, std::mt19937& rng, bool train) {
        if (!train || p <= Real(0)) return a;
        if (p >= Real(1)) throw ShapeError("dropout: rate must be < 1");
        const Tensor<Real>& x = value(a);
        auto mask = std::make_shared<std::vector<Real>>(x.data.size());
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        Real keep = Real(1) - p;
        Tensor<Real> y(x.shape);
        for (size_t i = 0; i < x.data.size(); ++i) {
            (*mask)[i] = dist(rng) < static_cast<double>(p) ? Real(0) : Real(1) / keep;
            y.data[i] = x.data[i] * (*mask)[i];
        }
        return record(std::move(y), {a}, [a, mask](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            t.accumulate(a, [&](Tensor<Real>& dx) {
                for (size_t i = 0; i < dx.data.size(); ++i)
                    dx.data[i] += g.data[i] * (*mask)[i];
            });
        });
    }

    // ----- backward -----

    // Seeds d(loss)=1 and replays the tape in reverse. Leaf gradients
    // accumulate across calls; interior gradients are reset per call.
    void backward(Var<Real> loss) {
        if (loss.tape != this) throw ShapeError("backward: variable from another tape");
        const Node& ln = node(loss.id);
        if (ln.val->numel() != 1)
            throw ShapeError("backward: loss must be scalar, got " +
                             shape_str(ln.val->shape));
        for (int i = 0; i <= loss.id; ++i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.is_leaf && n.grad) n.grad->zero();
        }
        ensure_grad(loss.id);
        (*node(loss.id).grad)[0] += Real(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.back && n.grad) {
                last_id_ = i;
                n.back(*this);
            }
        }
    }

  private:
    friend struct Var<Real>;

    Node& node(int id) { return nodes_.at(static_cast<size_t>(id)); }
    const Node& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }

    Var<Real> push(Node&& n) {
        nodes_.push_back(std::move(n));
        return Var<Real>{this, static_cast<int>(nodes_.size()) - 1};
    }

    void ensure_grad(int id) {
        Node& n = node(id);
        if (!n.grad) {
            n.grad_store = Tensor<Real>(n.val->shape);
            n.grad = &n.grad_store;
        }
    }

    // Run `fn` against the parent's gradient buffer if it participates.
    template <typename Fn>
    void accumulate(Var<Real> parent, Fn&& fn) {
        Node& p = node(parent.id);
        if (!p.grad) return;
        fn(*p.grad);
    }

    static bool any_needs_grad(const std::vector<Var<Real>>& parents) {
        for (auto v : parents)
            if (v.tape->node(v.id).grad) return true;
        return false;
    }

    Var<Real> record(Tensor<Real>&& out, const std::vector<Var<Real>>& parents,
                     std::function<void(Tape&)> back) {
        for (auto v : parents)
            if (v.tape != this)
                throw ShapeError("operation mixes variables from different tapes");
        Node n;
        n.val_store = std::move(out);
        n.val = &n.val_store;
        if (grad_enabled_ && any_needs_grad(parents)) {
            n.grad_store = Tensor<Real>(n.val_store.shape);
            n.grad = &n.grad_store;
            n.back = std::move(back);
        }
        return push(std::move(n));
    }

    template <typename FwdFn, typename BwdFn>
    Var<Real> unary(Var<Real> a, FwdFn fwd, BwdFn dydx) {
        const Tensor<Real>& x = value(a);
        Tensor<Real> y(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
        return record(std::move(y), {a}, [a, dydx](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            const Tensor<Real>& y = *t.node(self).val;
            const Tensor<Real>& x = t.value(a);
            t.accumulate(a, [&](Tensor<Real>& dx) {
                for (int64_t i = 0; i < g.numel(); ++i)
                    dx[i] += g[i] * dydx(x[i], y[i]);
            });
        });
    }

    template <typename FwdFn, typename BwdFn>
    Var<Real> zip(Var<Real> a, Var<Real> b, const char* opname, FwdFn fwd, BwdFn bwd) {
        const Tensor<Real>& x = value(a);
        const Tensor<Real>& y = value(b);
        if (!x.same_shape(y))
            throw ShapeError(std::string(opname) + ": shape mismatch " +
                             shape_str(x.shape) + " vs " + shape_str(y.shape));
        Tensor<Real> z(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) z[i] = fwd(x[i], y[i]);
        return record(std::move(z), {a, b}, [a, b, bwd](Tape& t) {
            int self = t.last_id_;
            const Tensor<Real>& g = *t.node(self).grad;
            const Tensor<Real>& x = t.value(a);
            const Tensor<Real>& y = t.value(b);
            Node& pa = t.node(a.id);
            Node& pb = t.node(b.id);
            if (!pa.grad && !pb.grad) return;
            Tensor<Real> da_sink(x.shape), db_sink(y.shape);
            Tensor<Real>& da = pa.grad ? *pa.grad : da_sink;
            Tensor<Real>& db = pb.grad ? *pb.grad : db_sink;
            for (int64_t i = 0; i < g.numel(); ++i)
                bwd(x[i], y[i], g[i], da.data[static_cast<size_t>(i)],
                    db.data[static_cast<size_t>(i)]);
        });
    }

    void require(bool ok, const char* opname, const Tensor<Real>& t,
                 const std::string& expected) const {
        if (!ok)
            throw ShapeError(std::string(opname) + ": got " + shape_str(t.shape) +
                             ", expected " + expected);
    }

    std::deque<Node> nodes_;
    bool grad_enabled_ = true;
    int last_id_ = -1;  // node whose closure is running (set by backward)
};

template <typename Real>
const std::vector<int>& Var<Real>::shape() const {
    return tape->value(*this).shape;
}

template <typename Real>
const Tensor<Real>& Var<Real>::value() const {
    return tape->value(*this);
}

}  // namespace scan
