#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nitp {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of binary64 values. `grad` is empty until a backward
// pass deposits into it; when present it always matches `values` in size.
// `node_id` tracks membership in a live autodiff Graph (-1 = free).
struct Tensor {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;
    int32_t node_id = -1;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v);

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double x);
    static Tensor scalar(double x);

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    int64_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
    // number of rows when viewed as [...x last_dim]
    int64_t lead_rows() const;

    // 2-D accessors (checked only by the asserts in debug paths)
    double& at(int64_t i, int64_t j) { return values[i * shape[1] + j]; }
    double at(int64_t i, int64_t j) const { return values[i * shape[1] + j]; }

    bool same_values(const Tensor& other) const;  // bitwise compare of shape+values
};

}  // namespace nitp
