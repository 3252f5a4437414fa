#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fssuavl {

using Shape = std::vector<std::int64_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f32 array. Plain value type; gradient bookkeeping lives in
// the Graph that records operations on it.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s);  // zero-filled
  Tensor(Shape s, std::vector<float> values);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, float value);
  static Tensor scalar(float value) { return Tensor(Shape{}, {value}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  std::span<float> span() { return data; }
  std::span<const float> span() const { return data; }

  // Same data, new shape; element count must match.
  Tensor reshaped(Shape s) const;

  bool all_finite() const;

  bool operator==(const Tensor&) const = default;
};

// Ordered name -> tensor map. Parameter sets, running buffers and FedAvg
// payloads all use this; the ordering fixes iteration (and so reduction)
// order everywhere.
using NamedTensors = std::map<std::string, Tensor>;

}  // namespace fssuavl
