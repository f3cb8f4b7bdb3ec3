#pragma once

#include <cstdint>
#include <vector>

#include "dlm/error.hpp"

namespace dlm {

// Dense row-major matrix for token ids, flags and per-cell scalars.
template <typename T> struct Grid {
    int            rows = 0;
    int            cols = 0;
    std::vector<T> v;

    Grid() = default;
    Grid(int r, int c, T fill = T{}) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    T & at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }

    const T & at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    T * row(int r) { return v.data() + static_cast<size_t>(r) * cols; }

    const T * row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    bool operator==(const Grid &) const = default;
};

using TokenGrid = Grid<int32_t>;
using BoolGrid  = Grid<uint8_t>;

}  // namespace dlm
