#include "ssam/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace ssam::metrics {

namespace {

constexpr double kMatchRadius = 3.0;

struct Centroid {
  double y = 0, x = 0;
  std::size_t n = 0;
};

std::vector<Centroid> centroids(const std::vector<int>& labels, int count, std::size_t w) {
  std::vector<Centroid> c(count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) continue;
    Centroid& k = c[labels[i] - 1];
    k.y += double(i / w);
    k.x += double(i % w);
    ++k.n;
  }
  for (auto& k : c) k.y /= double(k.n), k.x /= double(k.n);
  return c;
}

}  // namespace

void MetricCounts::merge(const MetricCounts& o) {
  tp_px += o.tp_px;
  fp_px += o.fp_px;
  fn_px += o.fn_px;
  detected_targets += o.detected_targets;
  total_targets += o.total_targets;
  total_px += o.total_px;
  images += o.images;
  iou_sum += o.iou_sum;
}

std::vector<int> label_components(const std::vector<std::uint8_t>& binary, std::size_t h, std::size_t w, int* count) {
  std::vector<int> labels(h * w, 0);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!binary[start] || labels[start]) continue;
    labels[start] = ++next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const long py = long(p / w), px = long(p % w);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long y = py + dy, x = px + dx;
          if (y < 0 || x < 0 || y >= long(h) || x >= long(w)) continue;
          const std::size_t q = std::size_t(y) * w + std::size_t(x);
          if (binary[q] && !labels[q]) {
            labels[q] = next;
            stack.push_back(q);
          }
        }
    }
  }
  if (count != nullptr) *count = next;
  return labels;
}

MetricCounts image_counts(std::span<const double> pred, std::span<const double> gt, std::size_t h, std::size_t w,
                          double threshold) {
  if (pred.size() != h * w || gt.size() != h * w) throw DimensionError("image_counts: size mismatch");
  MetricCounts c;
  std::vector<std::uint8_t> pb(h * w), gb(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (gt[i] != 0.0 && gt[i] != 1.0) throw ContractError("segmentation_metrics: ground truth must be 0 or 1");
    pb[i] = pred[i] > threshold;
    gb[i] = gt[i] == 1.0;
    c.tp_px += pb[i] && gb[i];
    c.fp_px += pb[i] && !gb[i];
    c.fn_px += !pb[i] && gb[i];
  }
  c.total_px = h * w;
  c.images = 1;
  const std::uint64_t uni = c.tp_px + c.fp_px + c.fn_px;
  c.iou_sum = uni == 0 ? 1.0 : double(c.tp_px) / double(uni);

  int ng = 0, np = 0;
  const auto gl = label_components(gb, h, w, &ng);
  const auto pl = label_components(pb, h, w, &np);
  const auto gc = centroids(gl, ng, w), pc = centroids(pl, np, w);
  std::vector<bool> used(np, false);
  c.total_targets = std::uint64_t(ng);
  for (const auto& g : gc) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < np; ++k) {
      if (used[k]) continue;
      const double d = std::hypot(g.y - pc[k].y, g.x - pc[k].x);
      if (d <= kMatchRadius && d < best_d) best = k, best_d = d;
    }
    if (best >= 0) {
      used[best] = true;
      ++c.detected_targets;
    }
  }
  return c;
}

MetricsReport finalize(const MetricCounts& c, double threshold) {
  MetricsReport r;
  r.threshold = threshold;
  r.tp_px = c.tp_px;
  r.fp_px = c.fp_px;
  r.fn_px = c.fn_px;
  r.detected_targets = c.detected_targets;
  r.total_targets = c.total_targets;
  r.false_alarm_px = c.fp_px;
  r.total_px = c.total_px;
  const std::uint64_t uni = c.tp_px + c.fp_px + c.fn_px;
  r.mIoU = uni == 0 ? 1.0 : double(c.tp_px) / double(uni);
  r.nIoU = c.images == 0 ? 0.0 : c.iou_sum / double(c.images);
  r.Pd = c.total_targets == 0 ? 1.0 : double(c.detected_targets) / double(c.total_targets);
  r.Fa = c.total_px == 0 ? 0.0 : double(c.fp_px) / double(c.total_px) * 1e6;
  return r;
}

template <typename T>
MetricsReport segmentation_metrics(const Tensor<T>& pred_prob, const Tensor<T>& gt, double threshold) {
  if (pred_prob.shape() != gt.shape()) throw DimensionError("segmentation_metrics: shape mismatch");
  if (pred_prob.rank() != 3 && pred_prob.rank() != 4) throw DimensionError("segmentation_metrics: expected a batch");
  if (pred_prob.rank() == 4 && pred_prob.dim(1) != 1) throw DimensionError("segmentation_metrics: single channel");
  const std::size_t n = pred_prob.dim(0), h = pred_prob.dim(pred_prob.rank() - 2), w = pred_prob.dim(pred_prob.rank() - 1);
  MetricCounts total;
  std::vector<double> p(h * w), g(h * w);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < h * w; ++i) {
      p[i] = pred_prob[b * h * w + i];
      g[i] = gt[b * h * w + i];
    }
    total.merge(image_counts(p, g, h, w, threshold));
  }
  return finalize(total, threshold);
}

int recovery_rate(double ours, double baseline) {
  if (!(baseline > 0)) throw ContractError("recovery_rate: baseline must be positive");
  return static_cast<int>(std::lround(100.0 * ours / baseline));
}

std::string csv_header() {
  return "run_id,split,mIoU,nIoU,Pd,Fa,recovery_rate,tp_px,fp_px,fn_px,detected_targets,total_targets,"
         "false_alarm_px,total_px";
}

std::string csv_row(const std::string& run_id, const std::string& split, const MetricsReport& r) {
  std::ostringstream os;
  os << std::setprecision(10) << run_id << ',' << split << ',' << r.mIoU << ',' << r.nIoU << ',' << r.Pd << ','
     << r.Fa << ',';
  if (r.recovery_rate) os << *r.recovery_rate;
  os << ',' << r.tp_px << ',' << r.fp_px << ',' << r.fn_px << ',' << r.detected_targets << ',' << r.total_targets
     << ',' << r.false_alarm_px << ',' << r.total_px;
  return os.str();
}

template MetricsReport segmentation_metrics<float>(const Tensor<float>&, const Tensor<float>&, double);
template MetricsReport segmentation_metrics<double>(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace ssam::metrics
