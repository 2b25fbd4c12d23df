#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segqc {

// Dense N-dimensional grid, first axis fastest (x, then y, then z).
template <typename T, std::size_t N>
class Grid {
 public:
  using value_type = T;
  using Dims = std::array<std::size_t, N>;
  static constexpr std::size_t rank = N;

  Grid() { dims_.fill(0); }

  explicit Grid(const Dims& dims, T fill = T{}) : dims_(dims), data_(count(dims), fill) {}

  Grid(const Dims& dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != count(dims_)) {
      throw std::invalid_argument("grid payload has " + std::to_string(data_.size()) +
                                  " elements, dims require " + std::to_string(count(dims_)));
    }
  }

  static std::size_t count(const Dims& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(const Dims& at) const noexcept {
    std::size_t idx = 0;
    std::size_t stride = 1;
    for (std::size_t a = 0; a < N; ++a) {
      idx += at[a] * stride;
      stride *= dims_[a];
    }
    return idx;
  }

  Dims coords(std::size_t idx) const noexcept {
    Dims at{};
    for (std::size_t a = 0; a < N; ++a) {
      at[a] = idx % dims_[a];
      idx /= dims_[a];
    }
    return at;
  }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& operator()(const Dims& at) noexcept { return data_[index(at)]; }
  const T& operator()(const Dims& at) const noexcept { return data_[index(at)]; }

  template <typename... I>
    requires(sizeof...(I) == N)
  T& at(I... i) noexcept {
    return data_[index(Dims{static_cast<std::size_t>(i)...})];
  }
  template <typename... I>
    requires(sizeof...(I) == N)
  const T& at(I... i) const noexcept {
    return data_[index(Dims{static_cast<std::size_t>(i)...})];
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Dims dims_;
  std::vector<T> data_;
};

template <typename T>
using Grid2 = Grid<T, 2>;
template <typename T>
using Grid3 = Grid<T, 3>;

// Binary masks hold exactly 0 or 1.
template <std::size_t N>
using Mask = Grid<std::uint8_t, N>;
using Mask2 = Mask<2>;
using Mask3 = Mask<3>;

template <std::size_t N>
std::size_t count_foreground(const Mask<N>& m) {
  std::size_t n = 0;
  for (auto v : m) n += (v != 0);
  return n;
}

template <std::size_t N>
bool is_empty_mask(const Mask<N>& m) {
  for (auto v : m)
    if (v) return false;
  return true;
}

// Binary indicator of one class id inside a label grid.
template <typename L, std::size_t N>
Mask<N> class_mask(const Grid<L, N>& labels, std::uint32_t class_id) {
  Mask<N> out(labels.dims());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = static_cast<L>(labels[i]) == class_id ? 1 : 0;
  return out;
}

// 2D plane of a 3D grid perpendicular to `axis`. In-plane axes keep their
// relative order, so an axial (axis 2) plane is indexed (x, y).
template <typename T>
Grid2<T> extract_plane(const Grid3<T>& g, std::size_t axis, std::size_t index) {
  if (axis > 2) throw std::out_of_range("axis must be 0, 1 or 2");
  if (index >= g.dim(axis)) {
    throw std::out_of_range("slice index " + std::to_string(index) + " outside [0, " +
                            std::to_string(g.dim(axis)) + ")");
  }
  const std::size_t u_axis = axis == 0 ? 1 : 0;
  const std::size_t v_axis = axis == 2 ? 1 : 2;
  Grid2<T> out({g.dim(u_axis), g.dim(v_axis)});
  typename Grid3<T>::Dims at{};
  at[axis] = index;
  for (std::size_t v = 0; v < out.dim(1); ++v) {
    at[v_axis] = v;
    for (std::size_t u = 0; u < out.dim(0); ++u) {
      at[u_axis] = u;
      out.at(u, v) = g(at);
    }
  }
  return out;
}

}  // namespace segqc
