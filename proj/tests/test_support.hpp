#pragma once

#include <functional>
#include <random>
#include <vector>

#include "ssam/gradcheck.hpp"
#include "ssam/ops.hpp"
#include "ssam/tensor.hpp"

namespace ssam::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (double& v : t.mutable_data()) v = dist(rng);
  return t;
}

inline Tensor<float> random_tensor_f(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<float> t(std::move(shape));
  for (float& v : t.mutable_data()) v = static_cast<float>(dist(rng));
  return t;
}

/// Direct nested-loop cross-correlation, "same" output. Reflect padding
/// mirrors without repeating the edge sample.
inline Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, std::size_t groups = 1,
                                 bool reflect = false) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = k.dim(0), cpg = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const std::size_t opg = cout / groups;
  auto mirror = [](long i, long size) { return i < 0 ? -i : (i >= size ? 2 * (size - 1) - i : i); };
  Tensor<double> out({n, cout, h, w});
  auto o = out.mutable_data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co) {
      const std::size_t g = co / opg;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          double acc = 0;
          for (std::size_t ci = 0; ci < cpg; ++ci)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t c = 0; c < kw; ++c) {
                long yi = long(i) + long(a) - long(kh / 2);
                long xj = long(j) + long(c) - long(kw / 2);
                if (reflect) {
                  yi = mirror(yi, long(h));
                  xj = mirror(xj, long(w));
                } else if (yi < 0 || xj < 0 || yi >= long(h) || xj >= long(w)) {
                  continue;
                }
                acc += x[((b * cin + g * cpg + ci) * h + yi) * w + xj] * k[((co * cpg + ci) * kh + a) * kw + c];
              }
          o[((b * cout + co) * h + i) * w + j] = acc;
        }
    }
  return out;
}

using ssam::OpFn;
using ssam::check_op_gradients;

}  // namespace ssam::testing
