#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace unetr::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) noexcept
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0)
            out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

} // namespace unetr::ad
