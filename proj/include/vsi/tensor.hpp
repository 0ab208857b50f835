#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vsi/error.hpp"

namespace vsi {

// Dense row-major tensor of 64-bit floats. Rank 1 or 2 in practice; dims are
// positive. Everything is value-semantic, no views.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<int> shape_, std::vector<double> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        if (numel_of(shape) != data.size())
            throw ShapeError("tensor data length does not match shape");
    }

    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor dims must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static Tensor zeros(std::vector<int> shape) {
        std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor filled(std::vector<int> shape, double v) {
        std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    // Rank-1 vector {n}.
    static Tensor vec(std::vector<double> v) {
        const int n = static_cast<int>(v.size());
        return Tensor({n}, std::move(v));
    }

    // Rank-2 row vector {1, n}.
    static Tensor row(std::vector<double> v) {
        const int n = static_cast<int>(v.size());
        return Tensor({1, n}, std::move(v));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows_) {
        const int r = static_cast<int>(rows_.size());
        const int c = r > 0 ? static_cast<int>(rows_.begin()->size()) : 0;
        std::vector<double> d;
        d.reserve(static_cast<std::size_t>(r) * c);
        for (const auto& row : rows_) {
            if (static_cast<int>(row.size()) != c) throw ShapeError("ragged matrix literal");
            d.insert(d.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(d));
    }

    int rank() const { return static_cast<int>(shape.size()); }
    std::size_t size() const { return data.size(); }

    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    int rows() const { return require_rank2().shape[0]; }
    int cols() const { return require_rank2().shape[1]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at(int r, int c) {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
                    static_cast<std::size_t>(c)];
    }
    double at(int r, int c) const { return const_cast<Tensor*>(this)->at(r, c); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "{";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "}";
        return os.str();
    }

private:
    const Tensor& require_rank2() const {
        if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_str());
        return *this;
    }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace vsi
