#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace hieremb {

/// Dense row-major tensor of doubles. Rank 1 or 2 is all the engine needs;
/// scalars are shape {1}.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    Tensor() = default;

    static Tensor zeros(std::initializer_list<std::size_t> dims) {
        return zeros(std::vector<std::size_t>(dims));
    }
    static Tensor zeros(std::vector<std::size_t> dims) {
        Tensor t;
        t.shape = std::move(dims);
        std::size_t n = 1;
        for (std::size_t d : t.shape) n *= d;
        t.v.assign(n, 0.0);
        return t;
    }
    static Tensor scalar(double x) {
        Tensor t = zeros({1});
        t.v[0] = x;
        return t;
    }

    std::size_t size() const { return v.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const {
        assert(shape.size() == 2);
        return shape[1];
    }

    double& at(std::size_t i, std::size_t j) {
        assert(shape.size() == 2 && i < shape[0] && j < shape[1]);
        return v[i * shape[1] + j];
    }
    double at(std::size_t i, std::size_t j) const {
        assert(shape.size() == 2 && i < shape[0] && j < shape[1]);
        return v[i * shape[1] + j];
    }

    double* row_ptr(std::size_t i) { return v.data() + i * shape[1]; }
    const double* row_ptr(std::size_t i) const { return v.data() + i * shape[1]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

}  // namespace hieremb
