#include "nvp/tensor.hpp"

#include <sstream>

namespace nvp {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {
int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx) {
    if (idx.size() != shape.size()) {
        throw ShapeError("index rank " + std::to_string(idx.size()) +
                         " does not match tensor rank " + std::to_string(shape.size()));
    }
    int64_t flat = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        if (i < 0 || i >= shape[k]) {
            throw ShapeError("index out of bounds for shape " + shape_str(shape));
        }
        flat = flat * shape[k] + i;
        ++k;
    }
    return flat;
}
}  // namespace

real_t& Tensor::at(std::initializer_list<int64_t> idx) {
    return data_[static_cast<size_t>(flat_index(shape_, idx))];
}

real_t Tensor::at(std::initializer_list<int64_t> idx) const {
    return data_[static_cast<size_t>(flat_index(shape_, idx))];
}

}  // namespace nvp
