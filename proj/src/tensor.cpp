#include "nitp/tensor.hpp"

#include <cstring>
#include <sstream>
#include <stdexcept>

namespace nitp {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    for (int64_t e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got shape " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("tensor value count " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(Shape s) {
    std::vector<double> v(static_cast<size_t>(shape_numel(s)), 0.0);
    return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::full(Shape s, double x) {
    std::vector<double> v(static_cast<size_t>(shape_numel(s)), x);
    return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::scalar(double x) {
    Tensor t;
    t.shape = {};
    t.values = {x};
    return t;
}

int64_t Tensor::lead_rows() const {
    if (shape.empty()) return 1;
    return numel() / shape.back();
}

bool Tensor::same_values(const Tensor& other) const {
    if (shape != other.shape) return false;
    return std::memcmp(values.data(), other.values.data(), values.size() * sizeof(double)) == 0;
}

}  // namespace nitp
