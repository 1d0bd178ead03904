#include "rp3d/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rp3d {

namespace {

void check_box(const Box& b) {
  if (b.sx <= 0 || b.sy <= 0 || b.sz <= 0) {
    throw std::invalid_argument("aabb_iou: non-positive box size (" + std::to_string(b.sx) +
                                ", " + std::to_string(b.sy) + ", " + std::to_string(b.sz) + ")");
  }
}

}  // namespace

namespace {

bool box_before(const Box& a, const Box& b) {
  if (a.cx != b.cx) return a.cx < b.cx;
  if (a.cy != b.cy) return a.cy < b.cy;
  if (a.cz != b.cz) return a.cz < b.cz;
  if (a.sx != b.sx) return a.sx < b.sx;
  if (a.sy != b.sy) return a.sy < b.sy;
  return a.sz < b.sz;
}

}  // namespace

double aabb_iou(const Box& a0, const Box& b0) {
  check_box(a0);
  check_box(b0);
  // Canonical argument order keeps the result bitwise symmetric even when the
  // compiler contracts the volume arithmetic into fused multiply-adds.
  const bool swap = box_before(b0, a0);
  const Box& a = swap ? b0 : a0;
  const Box& b = swap ? a0 : b0;
  const double ix = std::min(a.cx + a.sx / 2, b.cx + b.sx / 2) -
                    std::max(a.cx - a.sx / 2, b.cx - b.sx / 2);
  const double iy = std::min(a.cy + a.sy / 2, b.cy + b.sy / 2) -
                    std::max(a.cy - a.sy / 2, b.cy - b.sy / 2);
  const double iz = std::min(a.cz + a.sz / 2, b.cz + b.sz / 2) -
                    std::max(a.cz - a.sz / 2, b.cz - b.sz / 2);
  if (ix <= 0 || iy <= 0 || iz <= 0) return 0.0;
  const double inter = ix * iy * iz;
  const double uni = a.sx * a.sy * a.sz + b.sx * b.sy * b.sz - inter;
  return inter / uni;
}

bool point_in_box(double x, double y, double z, const Box& b) {
  return std::abs(x - b.cx) <= b.sx / 2 && std::abs(y - b.cy) <= b.sy / 2 &&
         std::abs(z - b.cz) <= b.sz / 2;
}

void SoftLabelSpec::validate() const {
  if (sigma < 1) throw std::invalid_argument("SoftLabelSpec: sigma must be >= 1");
  if (iou_floor < 0.0 || iou_floor >= 1.0) {
    throw std::invalid_argument("SoftLabelSpec: iou_floor must lie in [0,1)");
  }
}

namespace {

// Keypoint indices sorted by IoU descending, ties by lower index.
std::vector<int> rank_order(const std::vector<double>& ious) {
  std::vector<int> order(ious.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ious[static_cast<std::size_t>(a)] > ious[static_cast<std::size_t>(b)];
  });
  return order;
}

}  // namespace

std::vector<double> soft_labels(const std::vector<double>& ious, const SoftLabelSpec& spec) {
  spec.validate();
  std::vector<double> labels(ious.size(), 0.0);
  const auto order = rank_order(ious);
  const double s2 = 2.0 * spec.sigma * spec.sigma;
  for (int rank = 0; rank <= spec.n_s && rank < static_cast<int>(order.size()); ++rank) {
    const int k = order[static_cast<std::size_t>(rank)];
    if (ious[static_cast<std::size_t>(k)] <= spec.iou_floor) break;  // order is descending
    double v = std::exp(1.0 - rank * rank / s2);
    if (spec.normalize) v /= std::exp(1.0);
    labels[static_cast<std::size_t>(k)] = v;
  }
  return labels;
}

std::vector<double> hard_labels(const std::vector<double>& ious, int n_s, double iou_floor) {
  std::vector<double> labels(ious.size(), 0.0);
  const auto order = rank_order(ious);
  for (int rank = 0; rank < n_s && rank < static_cast<int>(order.size()); ++rank) {
    const int k = order[static_cast<std::size_t>(rank)];
    if (ious[static_cast<std::size_t>(k)] <= iou_floor) break;
    labels[static_cast<std::size_t>(k)] = 1.0;
  }
  return labels;
}

std::vector<double> iou_labels(const std::vector<double>& ious, IouLabelMode mode,
                               double iou_floor) {
  std::vector<double> labels(ious.size(), 0.0);
  if (mode == IouLabelMode::Original) {
    for (std::size_t i = 0; i < ious.size(); ++i)
      if (ious[i] > iou_floor) labels[i] = ious[i];
    return labels;
  }
  double mx = 0.0;
  for (double v : ious) mx = std::max(mx, v);
  if (mx <= iou_floor) return labels;
  for (std::size_t i = 0; i < ious.size(); ++i)
    if (ious[i] > iou_floor) labels[i] = (ious[i] - iou_floor) / (mx - iou_floor);
  return labels;
}

Tensor referring_loss(const Tensor& score_logits, const std::vector<double>& labels) {
  return quality_focal_mean(score_logits, labels, 2.0);
}

Tensor keypoint_sampling_loss(const Tensor& relevance_logits,
                              const std::vector<double>& targets) {
  return bce_logits_mean(relevance_logits, targets);
}

std::vector<int> assign_keypoints(const std::vector<double>& keypoint_pos,
                                  const std::vector<GtObject>& objects, double radius) {
  const int k = static_cast<int>(keypoint_pos.size() / 3);
  std::vector<int> assign(static_cast<std::size_t>(k), -1);
  for (int i = 0; i < k; ++i) {
    const double x = keypoint_pos[static_cast<std::size_t>(i) * 3];
    const double y = keypoint_pos[static_cast<std::size_t>(i) * 3 + 1];
    const double z = keypoint_pos[static_cast<std::size_t>(i) * 3 + 2];
    int best = -1;
    double best_d = radius;
    for (int o = 0; o < static_cast<int>(objects.size()); ++o) {
      const Box& b = objects[static_cast<std::size_t>(o)].box;
      if (point_in_box(x, y, z, b)) {
        best = o;
        break;  // boxes do not overlap, so the containing box is unique
      }
      const double dx = x - b.cx, dy = y - b.cy, dz = z - b.cz;
      const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (d < best_d) {
        best_d = d;
        best = o;
      }
    }
    assign[static_cast<std::size_t>(i)] = best;
  }
  return assign;
}

Tensor detection_loss(const StagePreds& preds, const std::vector<double>& keypoint_pos,
                      const std::vector<GtObject>& objects, double assign_radius) {
  const int k = preds.center.dim(0);
  if (static_cast<int>(keypoint_pos.size()) != k * 3) {
    throw std::invalid_argument("detection_loss: keypoint position count mismatch");
  }
  const auto assign = assign_keypoints(keypoint_pos, objects, assign_radius);
  std::vector<double> obj_targets(static_cast<std::size_t>(k), 0.0);
  std::vector<int> class_targets(static_cast<std::size_t>(k), -1);
  std::vector<double> mask(static_cast<std::size_t>(k), 0.0);
  std::vector<double> gt_center(static_cast<std::size_t>(k) * 3, 0.0);
  std::vector<double> gt_logsize(static_cast<std::size_t>(k) * 3, 0.0);
  for (int i = 0; i < k; ++i) {
    const int o = assign[static_cast<std::size_t>(i)];
    if (o < 0) continue;
    const auto& obj = objects[static_cast<std::size_t>(o)];
    obj_targets[static_cast<std::size_t>(i)] = 1.0;
    class_targets[static_cast<std::size_t>(i)] = obj.class_id;
    mask[static_cast<std::size_t>(i)] = 1.0;
    gt_center[static_cast<std::size_t>(i) * 3] = obj.box.cx;
    gt_center[static_cast<std::size_t>(i) * 3 + 1] = obj.box.cy;
    gt_center[static_cast<std::size_t>(i) * 3 + 2] = obj.box.cz;
    gt_logsize[static_cast<std::size_t>(i) * 3] = std::log(obj.box.sx);
    gt_logsize[static_cast<std::size_t>(i) * 3 + 1] = std::log(obj.box.sy);
    gt_logsize[static_cast<std::size_t>(i) * 3 + 2] = std::log(obj.box.sz);
  }
  auto loss = bce_logits_mean(preds.objectness, obj_targets);
  loss = add(loss, softmax_xent_mean(preds.class_logits, class_targets));
  loss = add(loss, smooth_l1_mean(preds.center, gt_center, mask));
  loss = add(loss, smooth_l1_mean(preds.log_size, gt_logsize, mask));
  return loss;
}

Tensor total_loss(const std::vector<Tensor>& ref_stage_losses,
                  const std::vector<Tensor>& det_stage_losses, const Tensor& ks_loss,
                  const Tensor& text_loss, const LossWeights& w) {
  if (ref_stage_losses.empty() || det_stage_losses.empty()) {
    throw std::invalid_argument("total_loss: need at least one decoder stage");
  }
  auto stage_mean = [](const std::vector<Tensor>& parts) {
    Tensor acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
    return scale(acc, 1.0 / static_cast<double>(parts.size()));
  };
  auto out = scale(stage_mean(ref_stage_losses), w.a1);
  out = add(out, scale(ks_loss, w.a2));
  out = add(out, scale(stage_mean(det_stage_losses), w.a3));
  out = add(out, scale(text_loss, w.a4));
  return out;
}

}  // namespace rp3d
