#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "phenalign/error.hpp"
#include "phenalign/rng.hpp"

namespace phenalign {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major double tensor. Rank 0 (scalar), 1 and 2 are the ranks the
// pipeline actually uses; row()/cols() view a 1-D tensor as a single row so
// row-wise operations apply uniformly.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != shape_numel(shape_))
            throw DimensionError("tensor: " + std::to_string(data_.size()) +
                                 " values for shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor vec(std::vector<double> values) {
        Shape s{values.size()};
        return Tensor(std::move(s), std::move(values));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> values) {
        return Tensor(Shape{r, c}, std::move(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> v;
        v.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("tensor: ragged initializer");
            v.insert(v.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(v));
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = rng.normal(0.0, stddev);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool is_scalar() const { return shape_.empty() && data_.size() == 1; }

    // Row/column view: scalars are 1x1, vectors 1xN.
    std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
    std::size_t cols() const {
        if (shape_.empty()) return 1;
        return shape_.back();
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double item() const {
        if (data_.size() != 1)
            throw ContractError("tensor: item() on non-scalar " + shape_str(shape_));
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](double x) { return std::isfinite(x); });
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    double max_abs() const {
        double m = 0.0;
        for (double x : data_) m = std::max(m, std::abs(x));
        return m;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace phenalign
