#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace omm {

/// Dense row-major array with a fixed rank. Used for the P×M×T style
/// panels and the P×P×M×M coupling tensors that show up everywhere.
template <typename T, std::size_t Rank>
class Tensor {
public:
    Tensor() { shape_.fill(0); }

    explicit Tensor(std::array<std::size_t, Rank> shape, T fill = T{})
        : shape_(shape), data_(count(shape), fill) {}

    template <typename... Idx>
    T& operator()(Idx... idx) {
        static_assert(sizeof...(Idx) == Rank);
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    template <typename... Idx>
    const T& operator()(Idx... idx) const {
        static_assert(sizeof...(Idx) == Rank);
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    [[nodiscard]] std::size_t extent(std::size_t axis) const { return shape_[axis]; }
    [[nodiscard]] const std::array<std::size_t, Rank>& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::vector<T>& data() { return data_; }
    [[nodiscard]] const std::vector<T>& data() const { return data_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool operator==(const Tensor&) const = default;

private:
    static std::size_t count(const std::array<std::size_t, Rank>& shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }

    std::size_t offset(const std::array<std::size_t, Rank>& idx) const {
        std::size_t off = 0;
        for (std::size_t a = 0; a < Rank; ++a) {
#ifndef NDEBUG
            if (idx[a] >= shape_[a]) {
                throw std::out_of_range("tensor index " + std::to_string(idx[a]) + " out of range on axis " +
                                        std::to_string(a));
            }
#endif
            off = off * shape_[a] + idx[a];
        }
        return off;
    }

    std::array<std::size_t, Rank> shape_;
    std::vector<T> data_;
};

using Matrix = Tensor<double, 2>;
using Array3 = Tensor<double, 3>;
using Array4 = Tensor<double, 4>;

}  // namespace omm
