#include "fixquant/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "fixquant/fixedpoint.hpp"

namespace fixquant {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void check_shape(const std::vector<std::size_t>& shape) {
    if (shape.size() > 4)
        throw Error("tensor rank must be <= 4, got " + std::to_string(shape.size()));
    for (std::size_t d : shape)
        if (d == 0) throw Error("tensor dimensions must be positive");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_product(shape_) != data_.size())
        throw Error("tensor data length " + std::to_string(data_.size()) +
                    " does not match shape " + shape_string());
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    check_shape(new_shape);
    if (shape_product(new_shape) != data_.size())
        throw Error("cannot reshape " + shape_string() + " to incompatible shape");
    return Tensor(std::move(new_shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ',';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw Error("elementwise shape mismatch: " + a.shape_string() + " vs " +
                    b.shape_string());
    Tensor out(a.shape());
    const std::size_t n = a.size();
    switch (op) {
        case ElementwiseOp::Add:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
            break;
        case ElementwiseOp::Sub:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
            break;
        case ElementwiseOp::Mul:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
            break;
        case ElementwiseOp::Max:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::max(a[i], b[i]);
            break;
    }
    return out;
}

Tensor map(const std::function<double(double)>& f, const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw Error("matmul expects 2-D tensors, got " + a.shape_string() + " and " +
                    b.shape_string());
    if (a.dim(1) != b.dim(0))
        throw Error("matmul inner dimension mismatch: " + a.shape_string() + " vs " +
                    b.shape_string());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a.at2(i, p) * b.at2(p, j);
            out.at2(i, j) = acc;
        }
    return out;
}

Tensor reduce(ReduceOp op, const Tensor& t, std::size_t axis) {
    if (axis >= t.rank())
        throw Error("reduce axis " + std::to_string(axis) + " out of range for " +
                    t.shape_string());
    const auto& shape = t.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    const std::size_t along = shape[axis];

    std::vector<std::size_t> out_shape;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out_shape.push_back(shape[i]);
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out(out_shape);

    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const auto idx = [&](std::size_t j) {
                return (o * along + j) * inner + in;
            };
            double acc;
            switch (op) {
                case ReduceOp::Sum:
                    acc = 0.0;
                    for (std::size_t j = 0; j < along; ++j) acc += t[idx(j)];
                    break;
                case ReduceOp::Max:
                    acc = t[idx(0)];
                    for (std::size_t j = 1; j < along; ++j) acc = std::max(acc, t[idx(j)]);
                    break;
                case ReduceOp::Argmax: {
                    // ties resolve to the lowest index
                    std::size_t best = 0;
                    for (std::size_t j = 1; j < along; ++j)
                        if (t[idx(j)] > t[idx(best)]) best = j;
                    acc = static_cast<double>(best);
                    break;
                }
            }
            out[o * inner + in] = acc;
        }
    return out;
}

}  // namespace fixquant
