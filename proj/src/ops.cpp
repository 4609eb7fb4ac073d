#include "mpt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mpt/error.hpp"

namespace mpt {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tape& tape() { return Tape::current(); }

// Strides of `shape` aligned to an output of rank `rank`, zero on broadcast axes.
std::vector<std::size_t> aligned_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - shape.size();
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[offset + i] = shape[i] == 1 ? 0 : stride;
    stride *= shape[i];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
    if (da == 0 || db == 0) out[i] = 0;
  }
  return out;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;
  bool same = false;

  BroadcastPlan(const Shape& a, const Shape& b) : out(broadcast_shape(a, b)) {
    same = a == b;
    if (!same) {
      sa = aligned_strides(a, out);
      sb = aligned_strides(b, out);
    }
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    const std::size_t n = shape_numel(out);
    if (same) {
      for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
      return;
    }
    const std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
      fn(i, ia, ib);
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        ia += sa[ax];
        ib += sb[ax];
        if (idx[ax] < out[ax]) break;
        ia -= sa[ax] * out[ax];
        ib -= sb[ax] * out[ax];
        idx[ax] = 0;
      }
    }
  }
};

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
  AxisSplit(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
    }
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  }
};

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(a.shape(), b.shape());
  std::vector<double> out(shape_numel(plan->out));
  const auto& x = a.data();
  const auto& y = b.data();
  plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(x[ia], y[ib]); });
  return tape().record(plan->out, std::move(out), {a, b}, [plan, da, db](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    const auto& g = self.grad;
    const auto& xa = na.data;
    const auto& xb = nb.data;
    if (na.requires_grad) {
      auto& ga = na.grad_buffer();
      plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * da(xa[ia], xb[ib]); });
    }
    if (nb.requires_grad) {
      auto& gb = nb.grad_buffer();
      plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * db(xa[ia], xb[ib]); });
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto& v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(v[i]);
  return tape().record(x.shape(), std::move(out), {x}, [deriv](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(in.data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  return tape().record({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    ConstMapMat g(self.grad.data(), m, n);
    if (na.requires_grad) {
      MapMat(na.grad_buffer().data(), m, k).noalias() += g * ConstMapMat(nb.data.data(), k, n).transpose();
    }
    if (nb.requires_grad) {
      MapMat(nb.grad_buffer().data(), k, n).noalias() += ConstMapMat(na.data.data(), m, k).transpose() * g;
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return tape().record({1}, {s}, {x}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit sp(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto& v = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.len + l) * sp.inner + i];
  return tape().record(std::move(shape), std::move(out), {x}, [sp](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit sp(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto& v = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, v[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(v[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  }
  return tape().record(x.shape(), std::move(out), {x}, [sp](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& y = self.data;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += gy[base + l * sp.inner] * y[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t j = base + l * sp.inner;
          g[j] += y[j] * (gy[j] - dot);
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return tape().record(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_str(first));
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
    shape[axis] += s[axis];
    lens.push_back(s[axis]);
  }
  const AxisSplit sp(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].data();
    const std::size_t chunk = lens[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + offset));
    offset += chunk;
  }
  return tape().record(std::move(shape), std::move(out), parts, [sp, lens](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      auto& in = *self.inputs[p];
      const std::size_t chunk = lens[p] * sp.inner;
      if (in.requires_grad) {
        auto& g = in.grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t j = 0; j < chunk; ++j) g[o * chunk + j] += self.grad[o * sp.len * sp.inner + offset + j];
      }
      offset += chunk;
    }
  });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit sp(x.shape(), axis);
  if (start + length > sp.len) {
    throw DimensionError("narrow [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") out of range for " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  const std::size_t chunk = length * sp.inner;
  std::vector<double> out(sp.outer * chunk);
  const auto& v = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o * sp.len + start) * sp.inner), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  return tape().record(std::move(shape), std::move(out), {x}, [sp, start, chunk](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < chunk; ++j) g[(o * sp.len + start) * sp.inner + j] += self.grad[o * chunk + j];
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (x.rank() == 0) throw DimensionError("gather_rows on rank-0 tensor");
  const std::size_t n = x.dim(0);
  const std::size_t width = n == 0 ? 0 : x.numel() / n;
  for (auto i : indices) {
    if (i >= n) throw DimensionError("gather index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * width);
  const auto& v = x.data();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(indices[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  return tape().record(std::move(shape), std::move(out), {x}, [indices, width](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) g[indices[r] * width + j] += self.grad[r * width + j];
  });
}

Tensor scatter_add_rows(const Tensor& x, const std::vector<std::size_t>& indices, std::size_t num_rows) {
  if (x.rank() == 0 || x.dim(0) != indices.size()) {
    throw DimensionError("scatter_add_rows: " + std::to_string(indices.size()) + " indices for " +
                         shape_str(x.shape()));
  }
  const std::size_t width = indices.empty() ? 1 : x.numel() / indices.size();
  Shape shape = x.shape();
  shape[0] = num_rows;
  std::vector<double> out(shape_numel(shape), 0.0);
  const auto& v = x.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= num_rows) throw DimensionError("scatter index out of range");
    for (std::size_t j = 0; j < width; ++j) out[indices[r] * width + j] += v[r * width + j];
  }
  return tape().record(std::move(shape), std::move(out), {x}, [indices, width](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) g[r * width + j] += self.grad[indices[r] * width + j];
  });
}

Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return hadamard(x, Tensor::from(x.shape(), std::move(mask)));
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layernorm on rank-0 tensor");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layernorm width " + std::to_string(d) + " vs gain " + shape_str(gain.shape()) +
                         " bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  const auto& v = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += v[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (v[r * d + j] - mu) * (v[r * d + j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (v[r * d + j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return tape().record(x.shape(), std::move(out), {x, gain, bias}, [xhat, inv_std, rows, d](detail::Node& self) {
    auto& nx = *self.inputs[0];
    auto& ng = *self.inputs[1];
    auto& nb = *self.inputs[2];
    const auto& gy = self.grad;
    if (ng.requires_grad || nb.requires_grad) {
      auto& gg = ng.grad_buffer();
      auto& gb = nb.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) {
          gg[j] += gy[r * d + j] * (*xhat)[r * d + j];
          gb[j] += gy[r * d + j];
        }
    }
    if (nx.requires_grad) {
      auto& gx = nx.grad_buffer();
      const auto& gain_v = ng.data;
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double gh = gy[r * d + j] * gain_v[j];
          s1 += gh;
          s2 += gh * (*xhat)[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          const double gh = gy[r * d + j] * gain_v[j];
          gx[r * d + j] += (*inv_std)[r] * (gh - inv_d * s1 - (*xhat)[r * d + j] * inv_d * s2);
        }
      }
    }
  });
}

}  // namespace mpt
