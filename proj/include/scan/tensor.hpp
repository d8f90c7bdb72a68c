#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "scan/errors.hpp"

namespace scan {

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

// Dense row-major value holder. The differentiation graph lives in Tape.
template <typename Real>
struct Tensor {
    std::vector<int> shape;
    std::vector<Real> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s)
        : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), Real(0)) {}
    Tensor(std::vector<int> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("data length does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Real& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    Real operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-D accessors (rank checked by callers)
    Real& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    Real at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    void fill(Real v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(Real(0)); }

    bool all_finite() const {
        for (Real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, Real v) {
        Tensor t(std::move(s));
        t.fill(v);
        return t;
    }
    static Tensor scalar(Real v) { return Tensor({1}, {v}); }

    static Tensor uniform(std::vector<int> s, Real lo, Real hi, std::mt19937& rng) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                    static_cast<double>(hi));
        for (auto& v : t.data) v = static_cast<Real>(dist(rng));
        return t;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i)
            out.data[i] = static_cast<Other>(data[i]);
        return out;
    }
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace scan
