#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssam/tensor.hpp"

namespace ssam::metrics {

/// Integer counts accumulated over a set of images. Merging is associative.
struct MetricCounts {
  std::uint64_t tp_px = 0, fp_px = 0, fn_px = 0;
  std::uint64_t detected_targets = 0, total_targets = 0;
  std::uint64_t total_px = 0;
  std::uint64_t images = 0;
  double iou_sum = 0;  // sum of per-image IoU

  void merge(const MetricCounts& other);
};

struct MetricsReport {
  double mIoU = 0, nIoU = 0, Pd = 0, Fa = 0;
  std::optional<int> recovery_rate;
  std::uint64_t tp_px = 0, fp_px = 0, fn_px = 0;
  std::uint64_t detected_targets = 0, total_targets = 0, false_alarm_px = 0, total_px = 0;
  double threshold = 0.5;
};

/// 8-connected components of a binary H x W image; returns labels
/// (0 = background) and the component count.
std::vector<int> label_components(const std::vector<std::uint8_t>& binary, std::size_t h, std::size_t w,
                                  int* count = nullptr);

/// Counts for one image. pred holds probabilities, gt must be 0/1.
MetricCounts image_counts(std::span<const double> pred, std::span<const double> gt, std::size_t h, std::size_t w,
                          double threshold);

/// mIoU = TP/(TP+FP+FN) over all pixels; nIoU = mean per-image IoU (an image
/// with empty union scores 1); Pd = GT components matched one-to-one by a
/// predicted component whose centroid is within 3 px; Fa = FP pixels per
/// million pixels.
MetricsReport finalize(const MetricCounts& counts, double threshold);

/// pred and gt are (N, 1, H, W) or (N, H, W). ContractError when gt is not binary.
template <typename T>
MetricsReport segmentation_metrics(const Tensor<T>& pred_prob, const Tensor<T>& gt, double threshold = 0.5);

/// round(100 ours / baseline). ContractError for a nonpositive baseline.
int recovery_rate(double ours, double baseline);

std::string csv_header();
std::string csv_row(const std::string& run_id, const std::string& split, const MetricsReport& r);

}  // namespace ssam::metrics
