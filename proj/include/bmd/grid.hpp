#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <stdexcept>
#include <vector>

namespace bmd {

using Label = std::uint8_t;

/// Dense row-major 2-D grid. Used for intensity images, label masks and
/// boolean retention maps.
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width) {
        if (height < 0 || width < 0) {
            throw std::invalid_argument("Grid: negative dimensions");
        }
        data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int row, int col) noexcept { return data_[index(row, col)]; }
    const T& operator()(int row, int col) const noexcept { return data_[index(row, col)]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool same_shape(const auto& other) const noexcept {
        return height_ == other.height() && width_ == other.width();
    }

    bool operator==(const Grid&) const = default;

private:
    std::size_t index(int row, int col) const noexcept {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(col);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

/// Intensity image; pipeline images live in [0,1].
using ImageGrid = Grid<double>;
/// Integer class labels, background = 0.
using MaskGrid = Grid<Label>;
using BoolGrid = Grid<std::uint8_t>;

struct LabeledImage {
    ImageGrid image;
    MaskGrid mask;
};

template <class A, class B>
void require_same_shape(const A& a, const B& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

} // namespace bmd
