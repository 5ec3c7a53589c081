#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "agcl/error.hpp"

namespace agcl {

/// Dense channels x height x width array, row-major within each channel.
template <class T>
struct Tensor3 {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> data;

    Tensor3() = default;
    Tensor3(std::size_t c, std::size_t h, std::size_t w, T fill = T{0})
        : channels(c), height(h), width(w), data(c * h * w, fill) {}
    Tensor3(std::size_t c, std::size_t h, std::size_t w, std::vector<T> values)
        : channels(c), height(h), width(w), data(std::move(values)) {
        if (data.size() != c * h * w)
            throw ShapeError("Tensor3: data length " + std::to_string(data.size()) +
                             " does not match " + std::to_string(c) + "x" + std::to_string(h) +
                             "x" + std::to_string(w));
    }

    std::size_t plane() const { return height * width; }
    std::size_t size() const { return data.size(); }

    T &at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    T at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }

    std::span<T> channel(std::size_t c) { return std::span<T>(data).subspan(c * plane(), plane()); }
    std::span<const T> channel(std::size_t c) const {
        return std::span<const T>(data).subspan(c * plane(), plane());
    }

    bool same_shape(const Tensor3 &o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    friend bool operator==(const Tensor3 &, const Tensor3 &) = default;
};

/// Images, confidence maps and per-pixel prediction maps.
using ImageTensor = Tensor3<float>;

template <class To, class From>
Tensor3<To> tensor_cast(const Tensor3<From> &t) {
    Tensor3<To> out(t.channels, t.height, t.width);
    for (std::size_t i = 0; i < t.data.size(); ++i)
        out.data[i] = static_cast<To>(t.data[i]);
    return out;
}

} // namespace agcl
