#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "nvp/errors.hpp"

namespace nvp {

#ifdef NVP_SINGLE_PRECISION
using real_t = float;
#else
using real_t = double;
#endif

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major n-d array of real scalars. Values are treated as
/// immutable once an op has produced them; ops hand back fresh tensors.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(shape_numel(shape_)), real_t(0));
    }

    Tensor(Shape shape, real_t fill) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
    }

    Tensor(Shape shape, std::vector<real_t> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor scalar(real_t v) { return Tensor({1}, std::vector<real_t>{v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, real_t v) { return Tensor(std::move(shape), v); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real_t* data() { return data_.data(); }
    const real_t* data() const { return data_.data(); }
    std::vector<real_t>& vec() { return data_; }
    const std::vector<real_t>& vec() const { return data_; }

    real_t operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    real_t& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

    // Multi-index access, row-major. Slow path for tests and small setup code.
    real_t& at(std::initializer_list<int64_t> idx);
    real_t at(std::initializer_list<int64_t> idx) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (real_t v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " (" +
                             std::to_string(numel()) + " scalars) to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    void fill(real_t v) { data_.assign(data_.size(), v); }

private:
    Shape shape_;
    std::vector<real_t> data_;
};

}  // namespace nvp
