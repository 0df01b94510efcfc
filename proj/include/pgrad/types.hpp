#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pgrad/errors.hpp"

namespace pgrad {

using Vector = std::vector<double>;

inline void require_dim(std::span<const double> v, std::size_t dim, const char* what) {
  if (v.size() != dim) {
    throw ArgumentError(std::string(what) + ": expected dimension " + std::to_string(dim) +
                        ", got " + std::to_string(v.size()));
  }
}

}  // namespace pgrad
