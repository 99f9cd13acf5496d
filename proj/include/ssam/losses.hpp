#pragma once

#include "ssam/tensor.hpp"

namespace ssam::losses {

struct LossWeights {
  double lambda_bce = 1.0;
  double lambda_dice = 1.0;
  double lambda_sparse = 0.01;
  double lambda_topo = 0.1;
  double alpha_sparse = 1.0;
  double dice_smooth = 1.0;

  /// Throws ConfigError on any negative weight or nonpositive smoothing.
  void validate() const;
};

/// Mean over pixels of the logistic loss, in the max(z,0) - z t + log1p(e^-|z|)
/// form. Targets must be exactly 0 or 1 (ContractError otherwise).
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& target);

/// 1 - (2 sum(p t) + s) / (sum p + sum t + s) with p = sigmoid(logits),
/// evaluated per image (leading axis) and averaged.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& target, T smooth = T(1));

/// alpha K sum_i f_i P_i. f and P must each sum to 1 within 1e-6.
template <typename T>
Tensor<T> sparse_loss(const Tensor<T>& f, const Tensor<T>& P, T alpha = T(1));

/// Per image (N, 1, H, W): mean |M(i,j) - mean of in-frame 4-neighbours|,
/// averaged over the batch.
template <typename T>
Tensor<T> topo_loss(const Tensor<T>& prob);

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  // Unweighted component values, for logging.
  double bce = 0, dice = 0, sparse = 0, topo = 0;
};

/// lambda_bce BCE + lambda_dice Dice + lambda_sparse L_sparse + lambda_topo L_topo.
/// f and P may be undefined when no adapter is present; the sparse term is then 0.
template <typename T>
LossBreakdown<T> total_loss_stage1(const Tensor<T>& logits, const Tensor<T>& target, const Tensor<T>& f,
                                   const Tensor<T>& P, const Tensor<T>& prob, const LossWeights& w);

/// lambda_bce BCE + lambda_dice Dice against pseudo masks only.
template <typename T>
LossBreakdown<T> total_loss_stage2(const Tensor<T>& logits, const Tensor<T>& pseudo_target, const LossWeights& w);

}  // namespace ssam::losses
