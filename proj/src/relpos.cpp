#include "rp3d/relpos.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rp3d {

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::X: return "x";
    case Metric::Y: return "y";
    case Metric::Z: return "z";
    case Metric::Euclid: return "euclid";
  }
  return "?";
}

void IndexFnParams::validate() const {
  if (!(alpha > 0.0) || !(alpha < gamma)) {
    throw std::invalid_argument("IndexFnParams: need 0 < alpha < gamma, got alpha=" +
                                std::to_string(alpha) + " gamma=" + std::to_string(gamma));
  }
  if (cap_k < alpha) {
    throw std::invalid_argument("IndexFnParams: need cap_k >= alpha, got cap_k=" +
                                std::to_string(cap_k) + " alpha=" + std::to_string(alpha));
  }
}

int piecewise_index(double d, const IndexFnParams& p) {
  const double ad = std::abs(d);
  if (ad <= p.alpha) {
    // std::round is half-away-from-zero, which keeps the map odd.
    return static_cast<int>(std::round(d));
  }
  const double mag =
      p.alpha + std::log(ad / p.alpha) / std::log(p.gamma / p.alpha) * (p.cap_k - p.alpha);
  const int m = std::min(p.cap_k, static_cast<int>(std::round(mag)));
  return d > 0 ? m : -m;
}

ScaleTransform compute_scale_transform(const std::vector<double>& coords) {
  const int n = static_cast<int>(coords.size() / 3);
  if (n < 2 || coords.size() % 3 != 0) {
    throw std::invalid_argument("scale_scene_coords: need at least 2 points (n*3 values)");
  }
  double lo[3], hi[3];
  for (int a = 0; a < 3; ++a) lo[a] = hi[a] = coords[static_cast<std::size_t>(a)];
  for (int i = 1; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      const double v = coords[static_cast<std::size_t>(i) * 3 + a];
      lo[a] = std::min(lo[a], v);
      hi[a] = std::max(hi[a], v);
    }
  }
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (extent <= 0.0) {
    throw std::invalid_argument("scale_scene_coords: degenerate scene, zero extent on all axes");
  }
  return {lo[0], lo[1], lo[2], 100.0 / extent};
}

std::vector<double> apply_scale(const std::vector<double>& coords, const ScaleTransform& t) {
  if (coords.size() % 3 != 0)
    throw std::invalid_argument("apply_scale: coordinates must be n*3 values");
  std::vector<double> out(coords.size());
  for (std::size_t i = 0; i < coords.size(); i += 3) {
    out[i] = (coords[i] - t.ox) * t.s;
    out[i + 1] = (coords[i + 1] - t.oy) * t.s;
    out[i + 2] = (coords[i + 2] - t.oz) * t.s;
  }
  return out;
}

std::vector<double> scale_scene_coords(const std::vector<double>& coords) {
  return apply_scale(coords, compute_scale_transform(coords));
}

std::vector<double> relative_distances(const std::vector<double>& coords_i, int ni,
                                       const std::vector<double>& coords_j, int nj,
                                       Metric m) {
  std::vector<double> d(static_cast<std::size_t>(ni) * nj);
  const int mi = static_cast<int>(m);
  for (int i = 0; i < ni; ++i) {
    const double* pi = coords_i.data() + static_cast<std::size_t>(i) * 3;
    for (int j = 0; j < nj; ++j) {
      const double* pj = coords_j.data() + static_cast<std::size_t>(j) * 3;
      double v;
      switch (m) {
        case Metric::X:
        case Metric::Y:
        case Metric::Z:
          v = pj[mi] - pi[mi];
          break;
        case Metric::Euclid: {
          const double dx = pi[0] - pj[0], dy = pi[1] - pj[1], dz = pi[2] - pj[2];
          v = std::sqrt(dx * dx + dy * dy + dz * dz);
          break;
        }
        default:
          throw std::invalid_argument("relative_distances: unknown metric");
      }
      d[static_cast<std::size_t>(i) * nj + j] = v;
    }
  }
  return d;
}

RelPosIndexTables build_index_tables(const std::vector<double>& coords_q, int nq,
                                     const std::vector<double>& coords_kv, int nkv,
                                     const IndexFnParams& p) {
  p.validate();
  RelPosIndexTables t;
  t.cap_k = p.cap_k;
  for (int m = 0; m < kNumMetrics; ++m) {
    const auto d = relative_distances(coords_q, nq, coords_kv, nkv, static_cast<Metric>(m));
    IntMat mat(nq, nkv);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < nkv; ++j)
        mat.at(i, j) = piecewise_index(d[static_cast<std::size_t>(i) * nkv + j], p) + p.cap_k;
    t.idx[m] = std::move(mat);
  }
  return t;
}

RelPosIndexTables build_index_tables(const std::vector<double>& coords, int n,
                                     const IndexFnParams& p) {
  return build_index_tables(coords, n, coords, n, p);
}

IntMat reverse_indices(const IntMat& fwd, Metric m, int cap_k) {
  if (m == Metric::Euclid) return fwd;
  IntMat rev(fwd.rows, fwd.cols);
  for (int i = 0; i < fwd.rows; ++i)
    for (int j = 0; j < fwd.cols; ++j) rev.at(i, j) = 2 * cap_k - fwd.at(i, j);
  return rev;
}

RelPosEncodingTable make_encoding_table(const std::string& name_prefix, int cap_k,
                                        int d_head, Rng& rng) {
  RelPosEncodingTable t;
  const int rows = 2 * cap_k + 1;
  t.r_q = make_param(name_prefix + ".r_q", {rows, d_head}, rng);
  t.r_k = make_param(name_prefix + ".r_k", {rows, d_head}, rng);
  return t;
}

}  // namespace rp3d
