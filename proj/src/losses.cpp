#include "ssam/losses.hpp"

#include <cmath>

#include "ops_detail.hpp"
#include "ssam/ops.hpp"

namespace ssam::losses {

using ops::detail::accumulate;
using ops::detail::ImplPtr;

void LossWeights::validate() const {
  if (lambda_bce < 0 || lambda_dice < 0 || lambda_sparse < 0 || lambda_topo < 0 || alpha_sparse < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (!(dice_smooth > 0)) throw ConfigError("dice smoothing must be positive");
}

namespace {

template <typename T>
void require_binary(const Tensor<T>& t, const char* op) {
  for (T v : t.data()) {
    if (v != T(0) && v != T(1)) throw ContractError(std::string(op) + ": target values must be 0 or 1");
  }
}

template <typename T>
void require_simplex(const Tensor<T>& v, const char* what) {
  double s = 0;
  for (T x : v.data()) {
    if (x < T(-1e-6)) throw ContractError(std::string("sparse_loss: negative entry in ") + what);
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-6) throw ContractError(std::string("sparse_loss: ") + what + " does not sum to 1");
}

}  // namespace

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& target) {
  ops::detail::require_same_shape(logits, target, "bce_loss");
  require_binary(target, "bce_loss");
  const std::size_t m = logits.numel();
  const T* z = logits.data().data();
  const T* t = target.data().data();
  double acc = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double zi = z[i];
    acc += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(m)));
  ssam::detail::check_finite(out, "bce_loss");
  if (auto* g = ssam::detail::recorder<T>({&logits})) {
    ImplPtr<T> zi = logits.impl(), ti = target.impl(), oi = out.impl();
    ssam::detail::record(g, "bce_loss", {zi}, out, [zi, ti, oi, m] {
      accumulate(zi, [&](T* gz) {
        const T scale = oi->grad[0] / static_cast<T>(m);
        for (std::size_t i = 0; i < m; ++i) {
          const T x = zi->data[i];
          const T s = x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
          gz[i] += scale * (s - ti->data[i]);
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& target, T smooth) {
  ops::detail::require_same_shape(logits, target, "dice_loss");
  if (logits.rank() == 0) throw DimensionError("dice_loss: expected a batch");
  const Tensor<T> p = ops::sigmoid(logits);
  const std::size_t n = p.dim(0), per = p.numel() / n;
  std::vector<double> inter(n, 0), denom(n, 0);
  const T* pv = p.data().data();
  const T* tv = target.data().data();
  double acc = 0;
  for (std::size_t b = 0; b < n; ++b) {
    double i_sum = 0, p_sum = 0, t_sum = 0;
    for (std::size_t k = b * per; k < (b + 1) * per; ++k) {
      i_sum += double(pv[k]) * tv[k];
      p_sum += pv[k];
      t_sum += tv[k];
    }
    inter[b] = 2 * i_sum + smooth;
    denom[b] = p_sum + t_sum + smooth;
    acc += 1.0 - inter[b] / denom[b];
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  ssam::detail::check_finite(out, "dice_loss");
  if (auto* g = ssam::detail::recorder<T>({&p})) {
    ImplPtr<T> pi = p.impl(), ti = target.impl(), oi = out.impl();
    ssam::detail::record(g, "dice_loss", {pi}, out, [pi, ti, oi, n, per, inter, denom] {
      accumulate(pi, [&](T* gp) {
        const double go = oi->grad[0] / static_cast<double>(n);
        for (std::size_t b = 0; b < n; ++b) {
          // d/dp_k of -(I / D) = -(2 t_k D - I) / D^2
          const double d2 = denom[b] * denom[b];
          for (std::size_t k = b * per; k < (b + 1) * per; ++k) {
            gp[k] += static_cast<T>(-go * (2.0 * ti->data[k] * denom[b] - inter[b]) / d2);
          }
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> sparse_loss(const Tensor<T>& f, const Tensor<T>& P, T alpha) {
  ops::detail::require_same_shape(f, P, "sparse_loss");
  require_simplex(f, "f");
  require_simplex(P, "P");
  const T k = static_cast<T>(f.numel());
  return ops::scale(ops::sum(ops::mul(f, P)), alpha * k);
}

template <typename T>
Tensor<T> topo_loss(const Tensor<T>& prob) {
  ops::detail::require_rank(prob, 4, "topo_loss");
  if (prob.dim(1) != 1) throw DimensionError("topo_loss: expected a single-channel mask");
  const std::size_t n = prob.dim(0), h = prob.dim(2), w = prob.dim(3);
  const T* m = prob.data().data();
  // Signed residual M - mean(neighbours) per pixel, kept for the backward pass.
  std::vector<T> resid(n * h * w);
  double acc = 0;
  auto neighbours = [h, w](std::size_t i, std::size_t j, auto&& visit) {
    if (i > 0) visit(i - 1, j);
    if (i + 1 < h) visit(i + 1, j);
    if (j > 0) visit(i, j - 1);
    if (j + 1 < w) visit(i, j + 1);
  };
  for (std::size_t b = 0; b < n; ++b) {
    const T* img = m + b * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        T s = 0;
        int cnt = 0;
        neighbours(i, j, [&](std::size_t y, std::size_t x) {
          s += img[y * w + x];
          ++cnt;
        });
        const T r = cnt > 0 ? img[i * w + j] - s / T(cnt) : T(0);
        resid[(b * h + i) * w + j] = r;
        acc += std::abs(double(r));
      }
  }
  const double norm = static_cast<double>(n * h * w);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / norm));
  ssam::detail::check_finite(out, "topo_loss");
  if (auto* g = ssam::detail::recorder<T>({&prob})) {
    ImplPtr<T> pi = prob.impl(), oi = out.impl();
    ssam::detail::record(g, "topo_loss", {pi}, out, [pi, oi, resid = std::move(resid), n, h, w, norm, neighbours] {
      accumulate(pi, [&](T* gp) {
        const T go = static_cast<T>(oi->grad[0] / norm);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
              const T r = resid[(b * h + i) * w + j];
              const T sg = r > 0 ? T(1) : (r < 0 ? T(-1) : T(0));
              if (sg == T(0)) continue;
              int cnt = 0;
              neighbours(i, j, [&](std::size_t, std::size_t) { ++cnt; });
              T* gimg = gp + b * h * w;
              gimg[i * w + j] += go * sg;
              neighbours(i, j, [&](std::size_t y, std::size_t x) { gimg[y * w + x] -= go * sg / T(cnt); });
            }
      });
    });
  }
  return out;
}

template <typename T>
LossBreakdown<T> total_loss_stage1(const Tensor<T>& logits, const Tensor<T>& target, const Tensor<T>& f,
                                   const Tensor<T>& P, const Tensor<T>& prob, const LossWeights& w) {
  w.validate();
  LossBreakdown<T> out;
  auto bce = bce_loss(logits, target);
  auto dice = dice_loss(logits, target, static_cast<T>(w.dice_smooth));
  auto topo = topo_loss(prob);
  out.bce = bce.item();
  out.dice = dice.item();
  out.topo = topo.item();
  Tensor<T> total = ops::add(ops::scale(bce, T(w.lambda_bce)), ops::scale(dice, T(w.lambda_dice)));
  total = ops::add(total, ops::scale(topo, T(w.lambda_topo)));
  if (f.defined() && P.defined()) {
    auto sparse = sparse_loss(f, P, static_cast<T>(w.alpha_sparse));
    out.sparse = sparse.item();
    total = ops::add(total, ops::scale(sparse, T(w.lambda_sparse)));
  }
  out.total = total;
  return out;
}

template <typename T>
LossBreakdown<T> total_loss_stage2(const Tensor<T>& logits, const Tensor<T>& pseudo_target, const LossWeights& w) {
  w.validate();
  LossBreakdown<T> out;
  auto bce = bce_loss(logits, pseudo_target);
  auto dice = dice_loss(logits, pseudo_target, static_cast<T>(w.dice_smooth));
  out.bce = bce.item();
  out.dice = dice.item();
  out.total = ops::add(ops::scale(bce, T(w.lambda_bce)), ops::scale(dice, T(w.lambda_dice)));
  return out;
}

#define SSAM_LOSSES(T)                                                                                       \
  template Tensor<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&, T);                                    \
  template Tensor<T> sparse_loss<T>(const Tensor<T>&, const Tensor<T>&, T);                                  \
  template Tensor<T> topo_loss<T>(const Tensor<T>&);                                                         \
  template LossBreakdown<T> total_loss_stage1<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                                 const Tensor<T>&, const Tensor<T>&, const LossWeights&);    \
  template LossBreakdown<T> total_loss_stage2<T>(const Tensor<T>&, const Tensor<T>&, const LossWeights&);

SSAM_INSTANTIATE_BOTH(SSAM_LOSSES)

}  // namespace ssam::losses
