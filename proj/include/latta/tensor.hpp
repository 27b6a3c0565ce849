#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latta {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Thrown when operand shapes do not fit an operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor. A rank-0 tensor (empty shape) is a scalar.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : data_(1, T{0}) {}

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        check_dims();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (shape_size(shape_) != data_.size()) {
            throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                             std::to_string(shape_size(shape_)) + " values, got " +
                             std::to_string(data_.size()));
        }
    }

    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }
    std::vector<T>&& take_values() && noexcept { return std::move(data_); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Value of a single-element tensor.
    T item() const {
        if (data_.size() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_string(shape_));
        }
        return data_[0];
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    void check_dims() const {
        for (std::size_t d : shape_) {
            if (d == 0) {
                throw ShapeError("tensor dimensions must be >= 1, got " + shape_string(shape_));
            }
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace latta
