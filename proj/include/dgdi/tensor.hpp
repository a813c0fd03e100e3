#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "dgdi/errors.hpp"

namespace dgdi {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& s);

// Dense row-major 64-bit tensor of rank 0 (scalar), 1 or 2.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_numel(shape)) {
            throw ShapeError("tensor: value count " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor vector(std::initializer_list<double> v) {
        return Tensor({static_cast<int>(v.size())}, std::vector<double>(v));
    }

    static Tensor matrix(int rows, int cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    int rank() const { return static_cast<int>(shape.size()); }
    std::size_t numel() const { return data.size(); }
    bool is_scalar() const { return numel() == 1 && rank() <= 1; }

    int rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? shape[0] : 1); }
    int cols() const { return rank() == 2 ? shape[1] : 1; }

    double& at(int i) { return data[static_cast<std::size_t>(i)]; }
    double at(int i) const { return data[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
};

}  // namespace dgdi
