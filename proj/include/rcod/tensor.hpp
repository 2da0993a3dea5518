#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rcod/errors.hpp"
#include "rcod/rng.hpp"

namespace rcod {

// Dense row-major tensor. F is float for training/inference and double for
// the high-precision test mode.
template <class F>
struct Tensor {
    std::vector<int> shape;
    std::vector<F> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(size_t(numel_of(shape)), F(0)) {
        for (int d : shape)
            if (d <= 0) throw DimensionError("tensor dimension must be positive");
    }
    Tensor(std::vector<int> s, std::vector<F> d) : shape(std::move(s)), data(std::move(d)) {
        if (int64_t(data.size()) != numel_of(shape))
            throw DimensionError("tensor data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    int64_t numel() const { return int64_t(data.size()); }
    int dim(int i) const { return shape[size_t(i)]; }
    int ndim() const { return int(shape.size()); }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, F v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(F v) { return Tensor({1}, {v}); }

    static Tensor randn(std::vector<int> s, Rng& rng, F stddev = F(1)) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = F(rng.normal()) * stddev;
        return t;
    }

    // 2-D / 3-D / 4-D element access (row-major).
    F& at(int i, int j) { return data[size_t(i) * shape[1] + j]; }
    const F& at(int i, int j) const { return data[size_t(i) * shape[1] + j]; }
    F& at(int c, int y, int x) { return data[(size_t(c) * shape[1] + y) * shape[2] + x]; }
    const F& at(int c, int y, int x) const {
        return data[(size_t(c) * shape[1] + y) * shape[2] + x];
    }
    F& at(int o, int c, int y, int x) {
        return data[((size_t(o) * shape[1] + c) * size_t(shape[2]) + y) * shape[3] + x];
    }
    const F& at(int o, int c, int y, int x) const {
        return data[((size_t(o) * shape[1] + c) * size_t(shape[2]) + y) * shape[3] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (F v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    void check_finite(const char* context) const {
        if (!all_finite()) throw NumericRangeError(std::string("non-finite values in ") + context);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

    template <class G>
    Tensor<G> cast() const {
        Tensor<G> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = G(data[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace rcod
