#pragma once

// Dense row-major tensor of doubles and the shape-checked kernels the rest
// of the library is built from.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tfilm/error.hpp"

namespace tfilm {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_))
      fail(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                         " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  bool empty() const noexcept { return shape_.empty(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size())
      fail(ErrorCode::ShapeMismatch, "index rank " + std::to_string(idx.size()) + " vs shape " +
                                         shape_str(shape_));
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= shape_[i])
        fail(ErrorCode::ShapeMismatch, "index out of range for shape " + shape_str(shape_));
      off = off * shape_[i] + idx[i];
    }
    return off;
  }

  std::vector<std::size_t> unflatten(std::size_t off) const {
    std::vector<std::size_t> idx(shape_.size());
    for (std::size_t i = shape_.size(); i-- > 0;) {
      idx[i] = off % shape_[i];
      off /= shape_[i];
    }
    return idx;
  }

  double at(std::initializer_list<std::size_t> idx) const {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }
  double& at(std::initializer_list<std::size_t> idx) {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      fail(ErrorCode::ShapeMismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  const std::string& name() const noexcept { return name_; }
  Tensor& set_name(std::string n) {
    name_ = std::move(n);
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    if (shape_.empty()) fail(ErrorCode::ShapeMismatch, "rank-0 shape; use Shape{1} for scalars");
    for (std::size_t e : shape_)
      if (e == 0) fail(ErrorCode::ShapeMismatch, "zero extent in shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
  std::string name_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
  return out;
}

// Splits a shape around `axis` into (outer, extent, inner) for axis-wise loops.
struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    fail(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape r;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.push_back(s[i]);
  if (r.empty()) r.push_back(1);
  return r;
}

}  // namespace detail

// ---- elementwise and scalar kernels ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor scale(const Tensor& a, double s) {
  return detail::map(a, [s](double x) { return x * s; });
}
inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::map(a, [s](double x) { return x + s; });
}

// In-place accumulate; the workhorse of gradient accumulation.
inline void add_into(Tensor& dst, const Tensor& src) {
  detail::require_same_shape(dst, src, "add_into");
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

// ---- linear algebra ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail(ErrorCode::ShapeMismatch, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c(Shape{m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail(ErrorCode::ShapeMismatch, "transpose expects rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

// ---- reductions ----

// Maximum over `axis`, which is removed from the result. Ties resolve to the
// earliest index; `argmax`, when given, receives the winning index per output.
inline Tensor reduce_max(const Tensor& a, std::size_t axis, std::vector<std::size_t>* argmax = nullptr) {
  const auto sp = detail::split_axis(a.shape(), axis);
  Tensor out(detail::drop_axis(a.shape(), axis));
  if (argmax) argmax->assign(out.size(), 0);
  auto x = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double best = x[base];
      std::size_t bi = 0;
      for (std::size_t e = 1; e < sp.extent; ++e) {
        const double v = x[base + e * sp.inner];
        if (v > best) {
          best = v;
          bi = e;
        }
      }
      out[o * sp.inner + i] = best;
      if (argmax) (*argmax)[o * sp.inner + i] = bi;
    }
  return out;
}

inline Tensor reduce_mean(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis);
  Tensor out(detail::drop_axis(a.shape(), axis));
  auto x = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double s = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) s += x[(o * sp.extent + e) * sp.inner + i];
      out[o * sp.inner + i] = s / static_cast<double>(sp.extent);
    }
  return out;
}

// ---- structural kernels ----

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat of zero tensors");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) fail(ErrorCode::ShapeMismatch, "concat axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    Shape ref = parts[0].shape();
    if (s.size() != ref.size()) fail(ErrorCode::ShapeMismatch, "concat: " + shape_str(ref) + " vs " + shape_str(s));
    s[axis] = ref[axis] = 0;
    if (s != ref)
      fail(ErrorCode::ShapeMismatch, "concat: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    out_shape[axis] += p.dim(axis);
  }
  Tensor out(out_shape);
  const auto osp = detail::split_axis(out_shape, axis);
  std::size_t at = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * osp.inner;
    auto src = p.data();
    for (std::size_t o = 0; o < osp.outer; ++o)
      std::copy_n(src.data() + o * w, w, out.data().data() + o * osp.extent * osp.inner + at);
    at += w;
  }
  return out;
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto sp = detail::split_axis(a.shape(), axis);
  if (begin >= end || end > sp.extent)
    fail(ErrorCode::ShapeMismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                       ") out of range for " + shape_str(a.shape()));
  Shape s = a.shape();
  s[axis] = end - begin;
  Tensor out(s);
  const std::size_t w = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(a.data().data() + (o * sp.extent + begin) * sp.inner, w, out.data().data() + o * w);
  return out;
}

// ---- temporal blocks ----

// F reshaped to [numBlocks, blockLen, C]. Row-major layout makes this a pure
// relabelling of the same buffer.
struct BlockTensor {
  std::size_t num_blocks = 0;
  std::size_t block_len = 0;
  std::size_t channels = 0;
  Tensor data;
};

inline BlockTensor reshape_to_blocks(const Tensor& f, std::size_t block_len) {
  if (f.rank() != 2) fail(ErrorCode::ShapeMismatch, "reshape_to_blocks expects [T,C], got " + shape_str(f.shape()));
  if (block_len == 0 || f.dim(0) % block_len != 0)
    fail(ErrorCode::NonDivisibleLength, "T=" + std::to_string(f.dim(0)) + " not divisible by B=" +
                                            std::to_string(block_len));
  const std::size_t nb = f.dim(0) / block_len;
  return BlockTensor{nb, block_len, f.dim(1), f.reshaped({nb, block_len, f.dim(1)})};
}

inline Tensor reshape_from_blocks(const BlockTensor& blk) {
  return blk.data.reshaped({blk.num_blocks * blk.block_len, blk.channels});
}

}  // namespace tfilm
