// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "i2c2w/autograd.hpp"

namespace i2c2w {

// Ordered name -> parameter map; the order is the serialization order.
template <typename S>
struct ParamRegistry {
  std::vector<std::pair<std::string, Var<S>>> items;

  void add(const std::string& name, const Var<S>& v) {
    for (const auto& [n, _] : items)
      if (n == name) throw Error("duplicate parameter name: " + name);
    items.emplace_back(name, v);
  }

  const Var<S>& find(const std::string& name) const {
    for (const auto& [n, v] : items)
      if (n == name) return v;
    throw Error("unknown parameter name: " + name);
  }

  void zero_grads() {
    for (auto& [_, v] : items) v->zero_grad();
  }

  std::size_t total_size() const {
    std::size_t total = 0;
    for (const auto& [_, v] : items) total += v->value.size();
    return total;
  }
};

}  // namespace i2c2w
