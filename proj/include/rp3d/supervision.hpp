#pragma once

#include <vector>

#include "rp3d/tensor.hpp"

namespace rp3d {

// Axis-aligned box, center + full extents, scene units.
struct Box {
  double cx = 0, cy = 0, cz = 0;
  double sx = 0, sy = 0, sz = 0;
};

struct GtObject {
  int class_id = 0;
  Box box;
};

double aabb_iou(const Box& a, const Box& b);
bool point_in_box(double x, double y, double z, const Box& b);

// Rank-based Gaussian-shaped labels over keypoints ordered by IoU.
struct SoftLabelSpec {
  int n_s = 24;
  int sigma = 8;  // round(n_s / 3)
  double iou_floor = 0.25;
  bool normalize = true;  // divide by e so the best label is exactly 1

  void validate() const;
};

// Keypoint at IoU-rank i (ties by lower index) with IoU above the floor gets
// exp(1 - i^2/(2 sigma^2)), normalized by e unless turned off; ranks past n_s
// and sub-floor keypoints get 0.
std::vector<double> soft_labels(const std::vector<double>& ious, const SoftLabelSpec& spec);

// Top-n_s keypoints above the floor get 1 (ablation baseline).
std::vector<double> hard_labels(const std::vector<double>& ious, int n_s, double iou_floor);

enum class IouLabelMode { Original, Linear };
// Original: the IoU itself, floored to 0 below the threshold. Linear: above-
// floor IoUs affinely stretched so the max maps to 1 and the floor to 0.
std::vector<double> iou_labels(const std::vector<double>& ious, IouLabelMode mode,
                               double iou_floor);

// Quality-focal referring loss over score logits, exponent 2.
Tensor referring_loss(const Tensor& score_logits, const std::vector<double>& labels);

// Per-seed binary cross-entropy against relevance targets (1 iff the seed
// lies inside a box of a mentioned class; targets computed by the caller).
Tensor keypoint_sampling_loss(const Tensor& relevance_logits,
                              const std::vector<double>& targets);

// One decoder stage's raw predictions.
struct StagePreds {
  Tensor center;        // [K x 3] scene units
  Tensor log_size;      // [K x 3]
  Tensor objectness;    // [K] logits
  Tensor class_logits;  // [K x n_classes]
  Tensor ref_logits;    // [K]
};

// Keypoint -> ground-truth assignment: the box containing the keypoint, else
// the nearest object center within `radius`, else background (-1).
std::vector<int> assign_keypoints(const std::vector<double>& keypoint_pos,
                                  const std::vector<GtObject>& objects,
                                  double radius = 20.0);

// Objectness BCE + class cross-entropy + smooth-L1 on centers and log-sizes
// (the last three over assigned keypoints only), equally weighted.
Tensor detection_loss(const StagePreds& preds, const std::vector<double>& keypoint_pos,
                      const std::vector<GtObject>& objects, double assign_radius = 20.0);

struct LossWeights {
  double a1 = 0.05;  // referring
  double a2 = 0.8;   // keypoint sampling
  double a3 = 5.0;   // detection
  double a4 = 0.1;   // language classification
};

// Referring and detection losses are averaged over decoder stages, then the
// four parts are combined with the weights above.
Tensor total_loss(const std::vector<Tensor>& ref_stage_losses,
                  const std::vector<Tensor>& det_stage_losses, const Tensor& ks_loss,
                  const Tensor& text_loss, const LossWeights& w);

}  // namespace rp3d
