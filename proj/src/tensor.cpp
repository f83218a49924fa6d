#include "birr/tensor.hpp"

#include <algorithm>

namespace birr {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) +
         "x" + std::to_string(c) + "]";
}

template <typename T>
TensorT<T> stack_batch(std::span<const TensorT<T>> items) {
  if (items.empty()) return {};
  Shape item = items.front().shape();
  std::vector<T> data;
  data.reserve(item.size() * items.size());
  std::size_t total = 0;
  for (const auto& t : items) {
    const Shape s = t.shape();
    if (s.h != item.h || s.w != item.w || s.c != item.c) {
      throw DimensionError("cannot stack " + s.str() + " with " + item.str());
    }
    data.insert(data.end(), t.values().begin(), t.values().end());
    total += s.n;
  }
  item.n = total;
  return TensorT<T>(item, std::move(data));
}

template TensorT<float> stack_batch(std::span<const TensorT<float>>);
template TensorT<double> stack_batch(std::span<const TensorT<double>>);

}  // namespace birr
