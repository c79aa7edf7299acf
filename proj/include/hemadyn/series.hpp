#pragma once

#include <cstddef>
#include <vector>

#include "hemadyn/errors.hpp"

namespace hemadyn {

/// Values on a contiguous integer day grid starting at `first_day`.
struct DailySeries {
  int first_day = 0;
  std::vector<double> values;

  int last_day() const noexcept { return first_day + static_cast<int>(values.size()) - 1; }
  bool contains(int day) const noexcept { return day >= first_day && day <= last_day(); }
  std::size_t index(int day) const noexcept { return static_cast<std::size_t>(day - first_day); }

  double at(int day) const {
    if (!contains(day)) throw PreconditionError("day " + std::to_string(day) + " outside series");
    return values[index(day)];
  }
};

}  // namespace hemadyn
