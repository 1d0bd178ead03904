#pragma once

#include <string>
#include <vector>

#include "rp3d/tensor.hpp"

namespace rp3d {

// Directional distance metrics. One is assigned to each attention head.
enum class Metric { X = 0, Y = 1, Z = 2, Euclid = 3 };
constexpr int kNumMetrics = 4;
const char* metric_name(Metric m);

// Parameters of the piecewise distance-to-index map: exact (rounded) within
// |d| <= alpha, log-compressed out to gamma, clamped at +-cap_k.
struct IndexFnParams {
  double alpha = 10.0;
  int cap_k = 20;
  double gamma = 40.0;

  void validate() const;
  int table_rows() const { return 2 * cap_k + 1; }
};

// Signed integer index in [-cap_k, cap_k]; odd and monotone in d.
int piecewise_index(double d, const IndexFnParams& p);

// Similarity transform p' = (p - origin) * s mapping a scene into the
// canonical [0,100] frame (largest axis spans the full range).
struct ScaleTransform {
  double ox = 0, oy = 0, oz = 0;
  double s = 1;
};

ScaleTransform compute_scale_transform(const std::vector<double>& coords);
std::vector<double> apply_scale(const std::vector<double>& coords, const ScaleTransform& t);

// Uniformly rescale n*3 row-major coordinates so they lie in [0,100]^3 with
// the largest axis spanning the full range. Aspect ratio is preserved.
std::vector<double> scale_scene_coords(const std::vector<double>& coords);

// d_ij matrices (ni*nj, row-major). Signed metrics measure j relative to i
// (j right of i along x => positive); Euclid is the pairwise distance.
std::vector<double> relative_distances(const std::vector<double>& coords_i, int ni,
                                       const std::vector<double>& coords_j, int nj,
                                       Metric m);

// Offset index matrices, one per metric, entries in [0, 2*cap_k].
struct RelPosIndexTables {
  int cap_k = 0;
  IntMat idx[kNumMetrics];

  const IntMat& of(Metric m) const { return idx[static_cast<int>(m)]; }
};

// Self-attention tables over one point set.
RelPosIndexTables build_index_tables(const std::vector<double>& coords, int n,
                                     const IndexFnParams& p);
// Cross-attention tables: rows indexed by query points, columns by key points.
RelPosIndexTables build_index_tables(const std::vector<double>& coords_q, int nq,
                                     const std::vector<double>& coords_kv, int nkv,
                                     const IndexFnParams& p);

// Index matrix for the opposite direction d_ji: mirrored for signed metrics,
// unchanged for Euclid. Works for rectangular (cross) tables too.
IntMat reverse_indices(const IntMat& fwd, Metric m, int cap_k);

// Learnable encoding rows, one pair per attention head.
struct RelPosEncodingTable {
  Tensor r_q;  // [(2*cap_k+1) x d_head]
  Tensor r_k;  // [(2*cap_k+1) x d_head]
};

RelPosEncodingTable make_encoding_table(const std::string& name_prefix, int cap_k,
                                        int d_head, Rng& rng);

}  // namespace rp3d
