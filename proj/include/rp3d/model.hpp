#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "rp3d/attention.hpp"
#include "rp3d/checkpoint.hpp"
#include "rp3d/relpos.hpp"
#include "rp3d/supervision.hpp"
#include "rp3d/synthdata.hpp"
#include "rp3d/tensor.hpp"

namespace rp3d {

// Which decoder sublayers keep their relative-position terms, plus the two
// score-term switches and the per-metric mask shared by every relative
// sublayer.
struct AblationConfig {
  bool sa1_rel = true;
  bool ca_rel = true;
  bool sa2_rel = true;
  bool use_o1r = true;
  bool use_ro2 = true;
  bool metric_on[kNumMetrics] = {true, true, true, true};
};

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;     // decoder depth (= prediction stages)
  int n_seeds = 128;    // M
  int n_keypoints = 32;  // K
  int n_heads = 8;
  int n_lang_layers = 2;
  int vocab_size = 0;  // 0 -> built-in closed vocabulary size
  int n_classes = kNumClasses;
  int max_tokens = 16;
  double neighbor_radius = 10.0;  // scene units after canonical scaling
  double dropout = 0.1;           // applied to sublayer outputs during training
  bool relative = true;           // false -> plain-attention baseline model
  IndexFnParams index_fn;
  AblationConfig ablation;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Canonical deterministic farthest-point sampling over n rows of n_cols
// values whose first three columns are coordinates. The start point and all
// distance ties are resolved by full row content (then index), so permuting
// the input rows selects the same points in the same order.
std::vector<int> farthest_point_sample(const std::vector<double>& content, int n_cols, int n,
                                       int m);

// Highest-k positions, ties by lower index; returned ascending.
std::vector<int> top_k_indices(const std::vector<double>& scores, int k);

Box scale_box(const Box& b, const ScaleTransform& t);

// Parameter-independent per-scene precomputation (canonical scaling, seed
// sampling, neighborhoods, boxes in the scaled frame). Reusable across
// epochs and model instances sharing the same geometry settings.
struct PreparedScene {
  ScaleTransform transform;
  int n_points = 0;
  std::vector<double> content;  // n*9 rows: scaled xyz, rgb, normal
  std::vector<int> seed_idx;
  std::vector<double> seed_pos;  // M*3, scaled frame
  std::vector<std::vector<int>> seed_groups;
  std::vector<GtObject> objects;  // boxes in the scaled frame
};

PreparedScene prepare_scene(const Scene& scene, const ModelConfig& cfg);

struct SublayerParams {
  Tensor ln_attn_g, ln_attn_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln_ffn_g, ln_ffn_b;
};

struct MlpHead {
  Tensor w1, b1, w2, b2;
};

struct Model {
  ModelConfig cfg;
  // point encoder: per-point MLP, neighborhood max-pool, seed MLP
  Tensor pe1_w1, pe1_b1, pe1_w2, pe1_b2;
  Tensor pe2_w1, pe2_b1, pe2_w2, pe2_b2;
  // language encoder
  Tensor tok_emb, pos_emb;
  struct LangLayer {
    MhaParams attn;
    SublayerParams block;
  };
  std::vector<LangLayer> lang_layers;
  // language-conditioned keypoint selection
  Tensor sel_w1, sel_b1, sel_w2, sel_b2;
  // decoder: SA1 -> CA(seeds) -> SA2 -> LA(words) per layer
  struct DecoderLayer {
    MhaParams sa1, ca, sa2, la;
    SublayerParams sa1_block, ca_block, sa2_block, la_block;
  };
  std::vector<DecoderLayer> layers;
  // shared prediction heads (applied at every stage)
  MlpHead offset_head, size_head, obj_head, cls_head, ref_head;
  Tensor lang_cls_w, lang_cls_b;

  struct ParamGroups {
    std::vector<Tensor> body;         // encoders, selection, heads
    std::vector<Tensor> transformer;  // language + decoder layers (incl. tables)
  };
  ParamGroups param_groups() const;
  std::vector<Tensor> parameters() const;  // body then transformer, stable order
};

Model make_model(const ModelConfig& cfg, Rng& rng);

// Deep copy whose parameters went through float32, so its metrics match a
// model reloaded from a saved checkpoint bitwise.
Model clone_rounded_f32(const Model& m);

std::vector<CheckpointEntry> export_parameters(const Model& m);
// Assigns values to parameters matched by name; missing entry or shape
// mismatch is rejected.
void import_parameters(Model& m, const Checkpoint& ckpt);

struct StageOutput {
  Tensor feats;      // [K x d]
  StagePreds preds;  // center/log_size/objectness/class_logits/ref_logits
};

struct GroundingOutput {
  std::vector<int> keypoint_idx;     // into the seed list, ascending
  std::vector<double> keypoint_pos;  // K*3, scaled frame
  Tensor relevance_logits;           // [M x 1]
  Tensor word_feats;                 // [L x d]
  Tensor sentence_feat;              // [1 x d]
  Tensor lang_class_logits;          // [1 x n_classes]
  std::vector<StageOutput> stages;   // one per decoder layer
};

std::vector<int> tokens_to_ids(const std::vector<std::string>& tokens);

GroundingOutput model_forward(const Model& m, const PreparedScene& ps,
                              const std::vector<int>& token_ids, bool training = false,
                              Rng* dropout_rng = nullptr);

// Predicted box of keypoint i at one stage (size via exp of the log-size row).
Box stage_box(const StagePreds& preds, int i);

// Final-stage box of the highest referring score; ties by lowest index.
Box infer_box(const GroundingOutput& out);

}  // namespace rp3d
