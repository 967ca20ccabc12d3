#include "cbe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "cbe/error.hpp"

namespace cbe {

std::size_t shape_size(const Tensor::Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Tensor::Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill)
{
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    require(shape_size(shape_) == data_.size(),
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_string(shape_));
}

Tensor Tensor::scalar(double value)
{
    return Tensor({}, std::vector<double>{value});
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t n = rows.size();
    const std::size_t c = n == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(n * c);
    for (const auto& r : rows) {
        require(r.size() == c, "ragged matrix literal");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({n, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const
{
    require(axis < shape_.size(), "axis " + std::to_string(axis) + " out of range for shape " +
                                      shape_string(shape_));
    return shape_[axis];
}

std::span<const double> Tensor::row(std::size_t r) const
{
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
}

std::span<double> Tensor::row(std::size_t r)
{
    return std::span<double>(data_).subspan(r * shape_[1], shape_[1]);
}

double Tensor::item() const
{
    require(data_.size() == 1, "item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor softmax(const Tensor& logits, std::size_t axis)
{
    require(axis < logits.rank(), "softmax axis " + std::to_string(axis) +
                                      " out of range for shape " + shape_string(logits.shape()));
    const auto& shape = logits.shape();
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= shape[i];
    }
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        inner *= shape[i];
    }
    const std::size_t extent = shape[axis];

    Tensor out(shape);
    auto src = logits.data();
    auto dst = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            double peak = -INFINITY;
            for (std::size_t k = 0; k < extent; ++k) {
                peak = std::max(peak, src[base + k * inner]);
            }
            double total = 0.0;
            for (std::size_t k = 0; k < extent; ++k) {
                const double e = std::exp(src[base + k * inner] - peak);
                dst[base + k * inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < extent; ++k) {
                dst[base + k * inner] /= total;
            }
        }
    }
    return out;
}

Tensor operator+(const Tensor& a, const Tensor& b)
{
    require(a.shape() == b.shape(), "shape mismatch in tensor addition");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += b[i];
    }
    return out;
}

Tensor operator*(double s, const Tensor& a)
{
    Tensor out = a;
    for (double& v : out.data()) {
        v *= s;
    }
    return out;
}

}  // namespace cbe
