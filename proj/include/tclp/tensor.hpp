#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tclp/error.hpp"

namespace tclp {

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. `grad`, when non-empty, matches `data` in length.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;

    TensorT() = default;
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != int64_t(data.size()))
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
        for (int e : shape)
            if (e <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_str(shape));
    }

    static TensorT zeros(std::vector<int> s) {
        size_t n = size_t(shape_numel(s));
        return TensorT(std::move(s), std::vector<T>(n, T(0)));
    }

    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    int64_t numel() const { return int64_t(data.size()); }
    int rank() const { return int(shape.size()); }
    int rows() const { return shape.size() == 2 ? shape[0] : (shape.empty() ? 0 : shape[0]); }
    int cols() const { return shape.size() == 2 ? shape[1] : 1; }

    T& at(int i, int j) { return data[size_t(i) * cols() + j]; }
    const T& at(int i, int j) const { return data[size_t(i) * cols() + j]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }
};

using Tensor = TensorT<float>;

template <typename T>
TensorT<T> tensor_cast(const TensorT<float>& src) {
    TensorT<T> out;
    out.shape = src.shape;
    out.requires_grad = src.requires_grad;
    out.data.assign(src.data.begin(), src.data.end());
    return out;
}

}  // namespace tclp
