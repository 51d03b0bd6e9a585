#pragma once

#include <cassert>
#include <cstdint>
#include <new>
#include <numeric>
#include <vector>

namespace vmap {

/// 64-byte-aligned allocator. Keeping every tensor buffer on the same
/// alignment makes vectorized GEMM kernels use identical head/tail peeling
/// regardless of where the heap placed the buffer, so results are bit-stable
/// across repeated runs in one process.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t n) { ::operator delete(p, n * sizeof(T), kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major double tensor.
struct Tensor {
  std::vector<int> shape;
  AlignedDoubles v;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
    v.assign(static_cast<size_t>(count(shape)), 0.0);
  }
  Tensor(std::vector<int> shp, AlignedDoubles data) : shape(std::move(shp)), v(std::move(data)) {
    assert(static_cast<int64_t>(v.size()) == count(shape));
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace vmap
