#include "rp3d/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace rp3d {

MhaParams make_mha_params(const std::string& prefix, int d_model, int n_heads,
                          bool relative, int cap_k, Rng& rng) {
  if (n_heads <= 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("make_mha_params: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  MhaParams p;
  p.n_heads = n_heads;
  p.d_model = d_model;
  p.d_head = d_model / n_heads;
  p.relative = relative;
  p.wq = make_param(prefix + ".wq", {d_model, d_model}, rng);
  p.wk = make_param(prefix + ".wk", {d_model, d_model}, rng);
  p.wv = make_param(prefix + ".wv", {d_model, d_model}, rng);
  p.wo = make_param(prefix + ".wo", {d_model, d_model}, rng);
  if (relative) {
    for (int h = 0; h < n_heads; ++h) {
      p.head_tables.push_back(
          make_encoding_table(prefix + ".head" + std::to_string(h), cap_k, p.d_head, rng));
      p.head_metric.push_back(static_cast<Metric>(h % kNumMetrics));
    }
  }
  return p;
}

void collect_params(const MhaParams& p, std::vector<Tensor>& out) {
  out.push_back(p.wq);
  out.push_back(p.wk);
  out.push_back(p.wv);
  out.push_back(p.wo);
  for (const auto& t : p.head_tables) {
    out.push_back(t.r_q);
    out.push_back(t.r_k);
  }
}

namespace {

void check_dims(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p, const char* op) {
  if (x_q.ndim() != 2 || x_q.dim(1) != p.d_model || x_kv.ndim() != 2 ||
      x_kv.dim(1) != p.d_model) {
    throw std::invalid_argument(std::string(op) + ": inputs " + shape_str(x_q.shape()) + ", " +
                                shape_str(x_kv.shape()) + " do not match d_model " +
                                std::to_string(p.d_model));
  }
}

}  // namespace

Tensor std_attention(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p,
                     MhaDebug* dbg) {
  check_dims(x_q, x_kv, p, "std_attention");
  auto q_all = matmul(x_q, p.wq);
  auto k_all = matmul(x_kv, p.wk);
  auto v_all = matmul(x_kv, p.wv);
  const double inv = 1.0 / std::sqrt(static_cast<double>(p.d_head));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(p.n_heads));
  for (int h = 0; h < p.n_heads; ++h) {
    auto q = slice_cols(q_all, h * p.d_head, p.d_head);
    auto k = slice_cols(k_all, h * p.d_head, p.d_head);
    auto v = slice_cols(v_all, h * p.d_head, p.d_head);
    auto a = scale(matmul(q, transpose(k)), inv);
    auto w = softmax_rows(a);
    if (dbg) {
      dbg->head_presoftmax.push_back(a);
      dbg->head_weights.push_back(w);
    }
    heads.push_back(matmul(w, v));
  }
  return matmul(concat_cols(heads), p.wo);
}

Tensor rp_attention_weights(const Tensor& q, const Tensor& k, const Tensor& r_k_rows,
                            const Tensor& r_q_rows, const AttnConfig& cfg, int d_head) {
  auto a = matmul(q, transpose(k));
  if (cfg.use_rel && cfg.use_o1r) {
    if (!r_k_rows.defined()) {
      throw std::invalid_argument("rp_attention_weights: missing r_k rows for enabled term");
    }
    a = add(a, qr_scores(q, r_k_rows));
  }
  if (cfg.use_rel && cfg.use_ro2) {
    if (!r_q_rows.defined()) {
      throw std::invalid_argument("rp_attention_weights: missing r_q rows for enabled term");
    }
    a = add(a, rk_scores(r_q_rows, k));
  }
  return scale(a, 1.0 / std::sqrt(3.0 * d_head));
}

Tensor mha_3drp(const Tensor& x_q, const Tensor& x_kv, const RelPosIndexTables& tables,
                const MhaParams& p, const AttnConfig& cfg, MhaDebug* dbg) {
  check_dims(x_q, x_kv, p, "mha_3drp");
  if (!p.relative) return std_attention(x_q, x_kv, p, dbg);
  const int nq = x_q.dim(0), nkv = x_kv.dim(0);
  auto q_all = matmul(x_q, p.wq);
  auto k_all = matmul(x_kv, p.wk);
  auto v_all = matmul(x_kv, p.wv);
  const double inv = 1.0 / std::sqrt(3.0 * p.d_head);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(p.n_heads));
  for (int h = 0; h < p.n_heads; ++h) {
    auto q = slice_cols(q_all, h * p.d_head, p.d_head);
    auto k = slice_cols(k_all, h * p.d_head, p.d_head);
    auto v = slice_cols(v_all, h * p.d_head, p.d_head);
    auto a = matmul(q, transpose(k));
    const Metric metric = p.head_metric[static_cast<std::size_t>(h)];
    const bool mon = cfg.metric_on[static_cast<int>(metric)];
    const bool o1r = cfg.use_rel && cfg.use_o1r && mon;
    const bool ro2 = cfg.use_rel && cfg.use_ro2 && mon;
    // Gather only when a term is live, so disabled runs cannot depend on
    // table contents in any way.
    if (o1r || ro2) {
      const IntMat& fwd = tables.of(metric);
      if (fwd.rows != nq || fwd.cols != nkv) {
        throw std::invalid_argument(
            "mha_3drp: index table for metric " + std::string(metric_name(metric)) + " is " +
            std::to_string(fwd.rows) + "x" + std::to_string(fwd.cols) + ", need " +
            std::to_string(nq) + "x" + std::to_string(nkv));
      }
      const auto& enc = p.head_tables[static_cast<std::size_t>(h)];
      if (o1r) {
        a = add(a, qr_scores(q, gather_rows(enc.r_k, fwd)));
      }
      if (ro2) {
        IntMat rev = reverse_indices(fwd, metric, tables.cap_k);
        a = add(a, rk_scores(gather_rows(enc.r_q, rev), k));
      }
    }
    a = scale(a, inv);
    auto w = softmax_rows(a);
    if (dbg) {
      dbg->head_presoftmax.push_back(a);
      dbg->head_weights.push_back(w);
    }
    heads.push_back(matmul(w, v));
  }
  return matmul(concat_cols(heads), p.wo);
}

}  // namespace rp3d
