#pragma once

#include <string>
#include <vector>

#include "rp3d/relpos.hpp"
#include "rp3d/tensor.hpp"

namespace rp3d {

// Ablation switches. use_o1r/use_ro2 gate the two relative score terms
// (query->encoding and encoding->key); they only matter when use_rel is on
// and the module was built with encoding tables. metric_on masks the
// relative terms per distance metric (indexed by Metric), so heads assigned
// a disabled metric fall back to plain scores on the same scale.
struct AttnConfig {
  bool use_rel = true;
  bool use_o1r = true;
  bool use_ro2 = true;
  bool metric_on[kNumMetrics] = {true, true, true, true};
};

struct MhaParams {
  int n_heads = 0;
  int d_model = 0;
  int d_head = 0;
  bool relative = false;  // built with encoding tables
  Tensor wq, wk, wv, wo;  // [d_model x d_model], no biases
  std::vector<RelPosEncodingTable> head_tables;  // per head, when relative
  std::vector<Metric> head_metric;               // h mod 4 -> X, Y, Z, Euclid
};

MhaParams make_mha_params(const std::string& prefix, int d_model, int n_heads,
                          bool relative, int cap_k, Rng& rng);
void collect_params(const MhaParams& p, std::vector<Tensor>& out);

// Optional introspection of per-head score matrices.
struct MhaDebug {
  std::vector<Tensor> head_presoftmax;
  std::vector<Tensor> head_weights;
};

// Plain multi-head attention: a = q k^T / sqrt(d_head), softmax, aggregate,
// concat heads, output projection.
Tensor std_attention(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p,
                     MhaDebug* dbg = nullptr);

// Pre-softmax scores of one relative head:
//   (q k^T + [o1r] q.r_k + [ro2] r_q.k) / sqrt(3 d_head)
// r_k_rows/r_q_rows are the gathered encoding rows ([n_q x n_kv x d_head]);
// pass undefined tensors for disabled terms.
Tensor rp_attention_weights(const Tensor& q, const Tensor& k, const Tensor& r_k_rows,
                            const Tensor& r_q_rows, const AttnConfig& cfg, int d_head);

// Full relative-position multi-head attention. Each head gathers encoding
// rows through the index matrix of its assigned metric. With relative terms
// off the scores keep the sqrt(3 d_head) divisor so ablations stay on the
// same scale; a module built with relative=false uses sqrt(d_head).
Tensor mha_3drp(const Tensor& x_q, const Tensor& x_kv, const RelPosIndexTables& tables,
                const MhaParams& p, const AttnConfig& cfg, MhaDebug* dbg = nullptr);

}  // namespace rp3d
