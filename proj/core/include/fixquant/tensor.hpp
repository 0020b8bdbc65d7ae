#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace fixquant {

/// Dense row-major array of doubles, rank <= 4. Images follow the
/// [batch, height, width, channels] convention. Tensors are value types and
/// treated as immutable once built; reductions and matmul accumulate in
/// ascending flat-index order so repeated runs are bit-identical.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    double& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
        return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    Tensor reshaped(std::vector<std::size_t> new_shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    std::string shape_string() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

enum class ElementwiseOp { Add, Sub, Mul, Max };
enum class ReduceOp { Sum, Max, Argmax };

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor map(const std::function<double(double)>& f, const Tensor& t);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reduce(ReduceOp op, const Tensor& t, std::size_t axis);

}  // namespace fixquant
