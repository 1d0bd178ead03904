#include "rp3d/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rp3d {

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_seeds <= 0 || n_keypoints <= 0 || n_heads <= 0 ||
      n_lang_layers <= 0 || n_classes <= 0 || max_tokens <= 0)
    throw std::invalid_argument("model config: all structural sizes must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  if (n_keypoints > n_seeds)
    throw std::invalid_argument("model config: n_keypoints " + std::to_string(n_keypoints) +
                                " exceeds n_seeds " + std::to_string(n_seeds));
  if (neighbor_radius <= 0) throw std::invalid_argument("model config: neighbor_radius <= 0");
  if (dropout < 0 || dropout >= 1) throw std::invalid_argument("model config: dropout outside [0,1)");
  index_fn.validate();
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"n_layers", n_layers},
          {"n_seeds", n_seeds},
          {"n_keypoints", n_keypoints},
          {"n_heads", n_heads},
          {"n_lang_layers", n_lang_layers},
          {"vocab_size", vocab_size},
          {"n_classes", n_classes},
          {"max_tokens", max_tokens},
          {"neighbor_radius", neighbor_radius},
          {"dropout", dropout},
          {"relative", relative},
          {"index_fn",
           {{"alpha", index_fn.alpha}, {"cap_k", index_fn.cap_k}, {"gamma", index_fn.gamma}}},
          {"ablation",
           {{"sa1_rel", ablation.sa1_rel},
            {"ca_rel", ablation.ca_rel},
            {"sa2_rel", ablation.sa2_rel},
            {"use_o1r", ablation.use_o1r},
            {"use_ro2", ablation.use_ro2},
            {"metric_on",
             {ablation.metric_on[0], ablation.metric_on[1], ablation.metric_on[2],
              ablation.metric_on[3]}}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("d_model", c.d_model);
  get("n_layers", c.n_layers);
  get("n_seeds", c.n_seeds);
  get("n_keypoints", c.n_keypoints);
  get("n_heads", c.n_heads);
  get("n_lang_layers", c.n_lang_layers);
  get("vocab_size", c.vocab_size);
  get("n_classes", c.n_classes);
  get("max_tokens", c.max_tokens);
  get("neighbor_radius", c.neighbor_radius);
  get("dropout", c.dropout);
  get("relative", c.relative);
  if (j.contains("index_fn")) {
    const nlohmann::json& f = j.at("index_fn");
    if (f.contains("alpha")) c.index_fn.alpha = f.at("alpha").get<double>();
    if (f.contains("cap_k")) c.index_fn.cap_k = f.at("cap_k").get<int>();
    if (f.contains("gamma")) c.index_fn.gamma = f.at("gamma").get<double>();
  }
  if (j.contains("ablation")) {
    const nlohmann::json& a = j.at("ablation");
    auto getb = [&](const char* key, bool& field) {
      if (a.contains(key)) field = a.at(key).get<bool>();
    };
    getb("sa1_rel", c.ablation.sa1_rel);
    getb("ca_rel", c.ablation.ca_rel);
    getb("sa2_rel", c.ablation.sa2_rel);
    getb("use_o1r", c.ablation.use_o1r);
    getb("use_ro2", c.ablation.use_ro2);
    if (a.contains("metric_on")) {
      auto v = a.at("metric_on").get<std::vector<bool>>();
      if (static_cast<int>(v.size()) != kNumMetrics)
        throw std::invalid_argument("model config: metric_on needs " +
                                    std::to_string(kNumMetrics) + " flags");
      for (int i = 0; i < kNumMetrics; ++i) c.ablation.metric_on[i] = v[static_cast<std::size_t>(i)];
    }
  }
  c.validate();
  return c;
}

namespace {

bool row_less(const std::vector<double>& content, int n_cols, int a, int b) {
  const double* ra = content.data() + static_cast<std::size_t>(a) * n_cols;
  const double* rb = content.data() + static_cast<std::size_t>(b) * n_cols;
  for (int c = 0; c < n_cols; ++c) {
    if (ra[c] != rb[c]) return ra[c] < rb[c];
  }
  return a < b;
}

double sq_dist3(const std::vector<double>& content, int n_cols, int a, int b) {
  const double* ra = content.data() + static_cast<std::size_t>(a) * n_cols;
  const double* rb = content.data() + static_cast<std::size_t>(b) * n_cols;
  double s = 0;
  for (int c = 0; c < 3; ++c) s += (ra[c] - rb[c]) * (ra[c] - rb[c]);
  return s;
}

}  // namespace

std::vector<int> farthest_point_sample(const std::vector<double>& content, int n_cols, int n,
                                       int m) {
  if (n_cols < 3 || static_cast<long long>(n) * n_cols != static_cast<long long>(content.size()))
    throw std::invalid_argument("farthest_point_sample: content is not n rows of n_cols values");
  if (m <= 0 || m > n)
    throw std::invalid_argument("farthest_point_sample: need " + std::to_string(m) +
                                " samples from " + std::to_string(n) + " points");
  int start = 0;
  for (int i = 1; i < n; ++i)
    if (row_less(content, n_cols, i, start)) start = i;

  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(m));
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  std::vector<double> mind(static_cast<std::size_t>(n), 0.0);
  picked.push_back(start);
  taken[static_cast<std::size_t>(start)] = 1;
  for (int i = 0; i < n; ++i)
    if (!taken[static_cast<std::size_t>(i)]) mind[static_cast<std::size_t>(i)] = sq_dist3(content, n_cols, i, start);

  while (static_cast<int>(picked.size()) < m) {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || mind[static_cast<std::size_t>(i)] > mind[static_cast<std::size_t>(best)] ||
          (mind[static_cast<std::size_t>(i)] == mind[static_cast<std::size_t>(best)] &&
           row_less(content, n_cols, i, best)))
        best = i;
    }
    picked.push_back(best);
    taken[static_cast<std::size_t>(best)] = 1;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      mind[static_cast<std::size_t>(i)] =
          std::min(mind[static_cast<std::size_t>(i)], sq_dist3(content, n_cols, i, best));
    }
  }
  return picked;
}

std::vector<int> top_k_indices(const std::vector<double>& scores, int k) {
  const int n = static_cast<int>(scores.size());
  if (k <= 0 || k > n)
    throw std::invalid_argument("top_k_indices: k=" + std::to_string(k) + " of " +
                                std::to_string(n));
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Box scale_box(const Box& b, const ScaleTransform& t) {
  return {(b.cx - t.ox) * t.s, (b.cy - t.oy) * t.s, (b.cz - t.oz) * t.s,
          b.sx * t.s,          b.sy * t.s,          b.sz * t.s};
}

PreparedScene prepare_scene(const Scene& scene, const ModelConfig& cfg) {
  cfg.validate();
  const int n = scene.n_points();
  if (n < cfg.n_seeds)
    throw std::invalid_argument("scene has " + std::to_string(n) + " points, need at least " +
                                std::to_string(cfg.n_seeds));
  if (scene.colors.size() != scene.coords.size() || scene.normals.size() != scene.coords.size())
    throw std::invalid_argument("scene point attribute arrays disagree in size");

  PreparedScene ps;
  ps.transform = compute_scale_transform(scene.coords);
  std::vector<double> scaled = apply_scale(scene.coords, ps.transform);
  ps.n_points = n;
  ps.content.resize(static_cast<std::size_t>(n) * 9);
  for (int i = 0; i < n; ++i) {
    double* row = ps.content.data() + static_cast<std::size_t>(i) * 9;
    for (int a = 0; a < 3; ++a) {
      row[a] = scaled[static_cast<std::size_t>(i) * 3 + a];
      row[3 + a] = scene.colors[static_cast<std::size_t>(i) * 3 + a];
      row[6 + a] = scene.normals[static_cast<std::size_t>(i) * 3 + a];
    }
  }
  ps.seed_idx = farthest_point_sample(ps.content, 9, n, cfg.n_seeds);
  ps.seed_pos.resize(static_cast<std::size_t>(cfg.n_seeds) * 3);
  for (int s = 0; s < cfg.n_seeds; ++s)
    for (int a = 0; a < 3; ++a)
      ps.seed_pos[static_cast<std::size_t>(s) * 3 + a] =
          scaled[static_cast<std::size_t>(ps.seed_idx[static_cast<std::size_t>(s)]) * 3 + a];

  const double r2 = cfg.neighbor_radius * cfg.neighbor_radius;
  ps.seed_groups.resize(static_cast<std::size_t>(cfg.n_seeds));
  for (int s = 0; s < cfg.n_seeds; ++s) {
    auto& group = ps.seed_groups[static_cast<std::size_t>(s)];
    const double* sp = ps.seed_pos.data() + static_cast<std::size_t>(s) * 3;
    for (int i = 0; i < n; ++i) {
      const double* p = scaled.data() + static_cast<std::size_t>(i) * 3;
      double d2 = 0;
      for (int a = 0; a < 3; ++a) d2 += (p[a] - sp[a]) * (p[a] - sp[a]);
      if (d2 <= r2) group.push_back(i);
    }
  }
  ps.objects.reserve(scene.objects.size());
  for (const GtObject& o : scene.objects)
    ps.objects.push_back({o.class_id, scale_box(o.box, ps.transform)});
  return ps;
}

namespace {

SublayerParams make_sublayer(const std::string& prefix, int d, Rng& rng) {
  SublayerParams s;
  std::vector<double> ones(static_cast<std::size_t>(d), 1.0);
  std::vector<double> zeros_d(static_cast<std::size_t>(d), 0.0);
  std::vector<double> zeros_2d(static_cast<std::size_t>(2 * d), 0.0);
  s.ln_attn_g = make_param_value(prefix + ".ln_attn.g", {d}, ones);
  s.ln_attn_b = make_param_value(prefix + ".ln_attn.b", {d}, zeros_d);
  s.ffn_w1 = make_param(prefix + ".ffn.w1", {d, 2 * d}, rng);
  s.ffn_b1 = make_param_value(prefix + ".ffn.b1", {2 * d}, zeros_2d);
  s.ffn_w2 = make_param(prefix + ".ffn.w2", {2 * d, d}, rng);
  s.ffn_b2 = make_param_value(prefix + ".ffn.b2", {d}, zeros_d);
  s.ln_ffn_g = make_param_value(prefix + ".ln_ffn.g", {d}, ones);
  s.ln_ffn_b = make_param_value(prefix + ".ln_ffn.b", {d}, zeros_d);
  return s;
}

MlpHead make_head(const std::string& prefix, int d_in, int d_hidden, int d_out, Rng& rng) {
  MlpHead h;
  h.w1 = make_param(prefix + ".w1", {d_in, d_hidden}, rng);
  h.b1 = make_param_value(prefix + ".b1", {d_hidden},
                          std::vector<double>(static_cast<std::size_t>(d_hidden), 0.0));
  h.w2 = make_param(prefix + ".w2", {d_hidden, d_out}, rng);
  h.b2 = make_param_value(prefix + ".b2", {d_out},
                          std::vector<double>(static_cast<std::size_t>(d_out), 0.0));
  return h;
}

void collect_sublayer(const SublayerParams& s, std::vector<Tensor>& out) {
  out.insert(out.end(),
             {s.ln_attn_g, s.ln_attn_b, s.ffn_w1, s.ffn_b1, s.ffn_w2, s.ffn_b2, s.ln_ffn_g,
              s.ln_ffn_b});
}

void collect_head(const MlpHead& h, std::vector<Tensor>& out) {
  out.insert(out.end(), {h.w1, h.b1, h.w2, h.b2});
}

Tensor head_apply(const Tensor& x, const MlpHead& h) {
  return add_bias(matmul(relu(add_bias(matmul(x, h.w1), h.b1)), h.w2), h.b2);
}

Tensor ffn_apply(const Tensor& x, const SublayerParams& s) {
  return add_bias(matmul(relu(add_bias(matmul(x, s.ffn_w1), s.ffn_b1)), s.ffn_w2), s.ffn_b2);
}

// Post-norm residual wrapper: LN(x + sub), then its own FFN block LN(h + FFN(h)).
Tensor sublayer_post(const Tensor& x, Tensor sub, const SublayerParams& s, double rate,
                     Rng* rng) {
  if (rng && rate > 0) sub = dropout(sub, rate, *rng);
  Tensor h = layer_norm_rows(add(x, sub), s.ln_attn_g, s.ln_attn_b);
  Tensor f = ffn_apply(h, s);
  if (rng && rate > 0) f = dropout(f, rate, *rng);
  return layer_norm_rows(add(h, f), s.ln_ffn_g, s.ln_ffn_b);
}

AttnConfig sublayer_attn_config(bool rel_flag, const AblationConfig& ab) {
  AttnConfig c;
  c.use_rel = rel_flag;
  c.use_o1r = ab.use_o1r;
  c.use_ro2 = ab.use_ro2;
  for (int i = 0; i < kNumMetrics; ++i) c.metric_on[i] = ab.metric_on[i];
  return c;
}

}  // namespace

Model make_model(const ModelConfig& cfg_in, Rng& rng) {
  ModelConfig cfg = cfg_in;
  if (cfg.vocab_size == 0) cfg.vocab_size = static_cast<int>(vocabulary().size());
  cfg.validate();
  const int d = cfg.d_model;

  Model m;
  m.cfg = cfg;
  m.pe1_w1 = make_param("pe1.w1", {9, d}, rng);
  m.pe1_b1 = make_param_value("pe1.b1", {d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  m.pe1_w2 = make_param("pe1.w2", {d, d}, rng);
  m.pe1_b2 = make_param_value("pe1.b2", {d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  m.pe2_w1 = make_param("pe2.w1", {9 + d, d}, rng);
  m.pe2_b1 = make_param_value("pe2.b1", {d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  m.pe2_w2 = make_param("pe2.w2", {d, d}, rng);
  m.pe2_b2 = make_param_value("pe2.b2", {d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));

  m.tok_emb = make_param("lang.emb", {cfg.vocab_size, d}, rng);
  m.pos_emb = make_param("lang.pos", {cfg.max_tokens, d}, rng);
  for (int l = 0; l < cfg.n_lang_layers; ++l) {
    const std::string prefix = "lang.layer" + std::to_string(l);
    Model::LangLayer layer;
    layer.attn = make_mha_params(prefix + ".attn", d, cfg.n_heads, false, cfg.index_fn.cap_k, rng);
    layer.block = make_sublayer(prefix, d, rng);
    m.lang_layers.push_back(std::move(layer));
  }

  m.sel_w1 = make_param("sel.w1", {2 * d, d}, rng);
  m.sel_b1 = make_param_value("sel.b1", {d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  m.sel_w2 = make_param("sel.w2", {d, 1}, rng);
  m.sel_b2 = make_param_value("sel.b2", {1}, {0.0});

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string prefix = "dec.layer" + std::to_string(l);
    Model::DecoderLayer layer;
    layer.sa1 = make_mha_params(prefix + ".sa1", d, cfg.n_heads, cfg.relative, cfg.index_fn.cap_k, rng);
    layer.sa1_block = make_sublayer(prefix + ".sa1_block", d, rng);
    layer.ca = make_mha_params(prefix + ".ca", d, cfg.n_heads, cfg.relative, cfg.index_fn.cap_k, rng);
    layer.ca_block = make_sublayer(prefix + ".ca_block", d, rng);
    layer.sa2 = make_mha_params(prefix + ".sa2", d, cfg.n_heads, cfg.relative, cfg.index_fn.cap_k, rng);
    layer.sa2_block = make_sublayer(prefix + ".sa2_block", d, rng);
    layer.la = make_mha_params(prefix + ".la", d, cfg.n_heads, false, cfg.index_fn.cap_k, rng);
    layer.la_block = make_sublayer(prefix + ".la_block", d, rng);
    m.layers.push_back(std::move(layer));
  }

  m.offset_head = make_head("head.offset", d, d, 3, rng);
  m.size_head = make_head("head.size", d, d, 3, rng);
  m.obj_head = make_head("head.obj", d, d, 1, rng);
  m.cls_head = make_head("head.cls", d, d, cfg.n_classes, rng);
  m.ref_head = make_head("head.ref", d, d, 1, rng);
  m.lang_cls_w = make_param("lang_cls.w", {d, cfg.n_classes}, rng);
  m.lang_cls_b = make_param_value("lang_cls.b", {cfg.n_classes},
                                  std::vector<double>(static_cast<std::size_t>(cfg.n_classes), 0.0));
  return m;
}

Model::ParamGroups Model::param_groups() const {
  ParamGroups g;
  g.body.insert(g.body.end(), {pe1_w1, pe1_b1, pe1_w2, pe1_b2, pe2_w1, pe2_b1, pe2_w2, pe2_b2,
                               tok_emb, pos_emb, sel_w1, sel_b1, sel_w2, sel_b2});
  collect_head(offset_head, g.body);
  collect_head(size_head, g.body);
  collect_head(obj_head, g.body);
  collect_head(cls_head, g.body);
  collect_head(ref_head, g.body);
  g.body.insert(g.body.end(), {lang_cls_w, lang_cls_b});

  for (const LangLayer& l : lang_layers) {
    collect_params(l.attn, g.transformer);
    collect_sublayer(l.block, g.transformer);
  }
  for (const DecoderLayer& l : layers) {
    collect_params(l.sa1, g.transformer);
    collect_sublayer(l.sa1_block, g.transformer);
    collect_params(l.ca, g.transformer);
    collect_sublayer(l.ca_block, g.transformer);
    collect_params(l.sa2, g.transformer);
    collect_sublayer(l.sa2_block, g.transformer);
    collect_params(l.la, g.transformer);
    collect_sublayer(l.la_block, g.transformer);
  }
  return g;
}

std::vector<Tensor> Model::parameters() const {
  ParamGroups g = param_groups();
  std::vector<Tensor> out = std::move(g.body);
  out.insert(out.end(), g.transformer.begin(), g.transformer.end());
  return out;
}

Model clone_rounded_f32(const Model& m) {
  Rng rng(0);
  Model c = make_model(m.cfg, rng);
  std::vector<Tensor> src = m.parameters();
  std::vector<Tensor> dst = c.parameters();
  if (src.size() != dst.size()) throw std::logic_error("model clone parameter count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (dst[i].name() != src[i].name()) throw std::logic_error("model clone parameter order mismatch");
    dst[i].value() = round_trip_f32(src[i].value());
  }
  return c;
}

std::vector<CheckpointEntry> export_parameters(const Model& m) {
  std::vector<CheckpointEntry> out;
  for (const Tensor& p : m.parameters()) out.push_back({p.name(), p.shape(), p.value()});
  return out;
}

void import_parameters(Model& m, const Checkpoint& ckpt) {
  for (Tensor& p : m.parameters()) {
    const CheckpointEntry* e = ckpt.find(p.name());
    if (!e) throw std::runtime_error("checkpoint is missing parameter '" + p.name() + "'");
    if (e->shape != p.shape())
      throw std::runtime_error("checkpoint parameter '" + p.name() + "' has the wrong shape");
    p.value() = e->values;
  }
}

std::vector<int> tokens_to_ids(const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(token_id(t));
  return ids;
}

GroundingOutput model_forward(const Model& m, const PreparedScene& ps,
                              const std::vector<int>& token_ids, bool training,
                              Rng* dropout_rng) {
  const ModelConfig& cfg = m.cfg;
  const int n = ps.n_points, M = cfg.n_seeds, K = cfg.n_keypoints;
  if (static_cast<int>(ps.seed_idx.size()) != M)
    throw std::invalid_argument("prepared scene has " + std::to_string(ps.seed_idx.size()) +
                                " seeds, model wants " + std::to_string(M));
  const int L = static_cast<int>(token_ids.size());
  if (L == 0) throw std::invalid_argument("empty utterance");
  if (L > cfg.max_tokens)
    throw std::invalid_argument("utterance has " + std::to_string(L) + " tokens, max is " +
                                std::to_string(cfg.max_tokens));
  const double rate = training ? cfg.dropout : 0.0;
  Rng* drng = (training && rate > 0) ? dropout_rng : nullptr;

  // Point encoder: per-point MLP, neighborhood max-pool, seed MLP.
  Tensor pts = Tensor::constant({n, 9}, ps.content);
  Tensor h = relu(add_bias(matmul(pts, m.pe1_w1), m.pe1_b1));
  h = relu(add_bias(matmul(h, m.pe1_w2), m.pe1_b2));
  Tensor pooled = group_max_rows(h, ps.seed_groups);
  std::vector<double> seed_raw(static_cast<std::size_t>(M) * 9);
  for (int s = 0; s < M; ++s)
    for (int c = 0; c < 9; ++c)
      seed_raw[static_cast<std::size_t>(s) * 9 + c] =
          ps.content[static_cast<std::size_t>(ps.seed_idx[static_cast<std::size_t>(s)]) * 9 + c];
  Tensor sx = concat_cols({Tensor::constant({M, 9}, seed_raw), pooled});
  sx = relu(add_bias(matmul(sx, m.pe2_w1), m.pe2_b1));
  Tensor seed_feats = add_bias(matmul(sx, m.pe2_w2), m.pe2_b2);

  // Language encoder.
  std::vector<int> posids(static_cast<std::size_t>(L));
  std::iota(posids.begin(), posids.end(), 0);
  Tensor wx = add(gather_rows(m.tok_emb, token_ids), gather_rows(m.pos_emb, posids));
  for (const Model::LangLayer& l : m.lang_layers)
    wx = sublayer_post(wx, std_attention(wx, wx, l.attn), l.block, rate, drng);
  Tensor sentence = mean_rows(wx);

  // Language-conditioned keypoint selection.
  Tensor selh = relu(add_bias(
      matmul(concat_cols({seed_feats, repeat_row(sentence, M)}), m.sel_w1), m.sel_b1));
  Tensor rel_logits = add_bias(matmul(selh, m.sel_w2), m.sel_b2);

  GroundingOutput out;
  out.relevance_logits = rel_logits;
  out.word_feats = wx;
  out.sentence_feat = sentence;
  out.keypoint_idx = top_k_indices(rel_logits.value(), K);
  out.keypoint_pos.resize(static_cast<std::size_t>(K) * 3);
  for (int i = 0; i < K; ++i)
    for (int a = 0; a < 3; ++a)
      out.keypoint_pos[static_cast<std::size_t>(i) * 3 + a] =
          ps.seed_pos[static_cast<std::size_t>(out.keypoint_idx[static_cast<std::size_t>(i)]) * 3 + a];

  RelPosIndexTables kk, ks;
  if (cfg.relative) {
    kk = build_index_tables(out.keypoint_pos, K, cfg.index_fn);
    ks = build_index_tables(out.keypoint_pos, K, ps.seed_pos, M, cfg.index_fn);
  }

  Tensor x = gather_rows(seed_feats, out.keypoint_idx);
  Tensor kpos_t = Tensor::constant({K, 3}, out.keypoint_pos);
  const AblationConfig& ab = cfg.ablation;
  for (const Model::DecoderLayer& dl : m.layers) {
    x = sublayer_post(x, mha_3drp(x, x, kk, dl.sa1, sublayer_attn_config(ab.sa1_rel, ab)),
                      dl.sa1_block, rate, drng);
    x = sublayer_post(x, mha_3drp(x, seed_feats, ks, dl.ca, sublayer_attn_config(ab.ca_rel, ab)),
                      dl.ca_block, rate, drng);
    x = sublayer_post(x, mha_3drp(x, x, kk, dl.sa2, sublayer_attn_config(ab.sa2_rel, ab)),
                      dl.sa2_block, rate, drng);
    x = sublayer_post(x, std_attention(x, wx, dl.la), dl.la_block, rate, drng);

    StageOutput so;
    so.feats = x;
    so.preds.center = add(head_apply(x, m.offset_head), kpos_t);
    so.preds.log_size = head_apply(x, m.size_head);
    so.preds.objectness = head_apply(x, m.obj_head);
    so.preds.class_logits = head_apply(x, m.cls_head);
    so.preds.ref_logits = head_apply(x, m.ref_head);
    out.stages.push_back(std::move(so));
  }
  out.lang_class_logits = add_bias(matmul(sentence, m.lang_cls_w), m.lang_cls_b);
  return out;
}

Box stage_box(const StagePreds& preds, int i) {
  if (i < 0 || i >= preds.center.dim(0)) throw std::out_of_range("stage_box: keypoint index");
  return {preds.center.at(i, 0),          preds.center.at(i, 1),
          preds.center.at(i, 2),          std::exp(preds.log_size.at(i, 0)),
          std::exp(preds.log_size.at(i, 1)), std::exp(preds.log_size.at(i, 2))};
}

Box infer_box(const GroundingOutput& out) {
  if (out.stages.empty()) throw std::invalid_argument("infer_box: no decoder stages");
  const StagePreds& last = out.stages.back().preds;
  const std::vector<double>& scores = last.ref_logits.value();
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i)
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
  return stage_box(last, best);
}

}  // namespace rp3d
