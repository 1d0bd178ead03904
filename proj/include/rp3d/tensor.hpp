#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "rp3d/rng.hpp"

namespace rp3d {

using Shape = std::vector<int>;

int numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Integer index matrix (row-major), used for encoding-table lookups.
struct IntMat {
  int rows = 0;
  int cols = 0;
  std::vector<int> v;

  IntMat() = default;
  IntMat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0) {}
  int& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
  int at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
};

class GradTable;

// One recorded operation (or leaf) in the computation graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool is_param = false;
  std::string name;            // set for parameters
  std::vector<double> grad;    // persistent accumulator, parameters only
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's gradient (in `gt`) to its parents' entries in `gt`.
  std::function<void(Node&, GradTable&)> backward_fn;
};

// Value-semantics handle onto a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int numel() const { return static_cast<int>(n_->value.size()); }
  std::vector<double>& value() { return n_->value; }
  const std::vector<double>& value() const { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }
  const std::string& name() const { return n_->name; }
  std::shared_ptr<Node> node() const { return n_; }

  double at(int i) const { return n_->value[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const {
    return n_->value[static_cast<std::size_t>(i) * dim(1) + j];
  }

  // Persistent parameter gradient (allocated for parameters).
  std::vector<double>& grad() { return n_->grad; }
  const std::vector<double>& grad() const { return n_->grad; }
  void zero_grad();

 private:
  std::shared_ptr<Node> n_;
};

// Per-backward gradient storage. Keeps parameter accumulators untouched so
// several graphs can be differentiated independently and merged in a fixed
// order afterwards.
class GradTable {
 public:
  std::vector<double>& of(const Node* n);
  const std::vector<double>* find(const Node* n) const;

 private:
  std::unordered_map<const Node*, std::vector<double>> g_;
};

// Recorded operations in topological order (leaves first).
struct Graph {
  std::vector<Node*> topo;

  static Graph build(const Tensor& output);
  // Seeds d(output)/d(output) = 1 and visits each node exactly once in
  // reverse topological order. `output` must be scalar.
  GradTable backward(const Tensor& output) const;
};

GradTable backward(const Tensor& scalar_output);

// Adds each param's entry in `gt` into its persistent grad accumulator.
void accumulate_param_grads(const std::vector<Tensor>& params, const GradTable& gt);

// Parameters
Tensor make_param(const std::string& name, Shape shape, Rng& rng, double stddev = 0.02);
Tensor make_param_value(const std::string& name, Shape shape, std::vector<double> data);

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_bias(const Tensor& a, const Tensor& bias);   // [m×n] + [n]
Tensor repeat_row(const Tensor& v, int m);              // [1×n] -> [m×n]
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
Tensor gather_rows(const Tensor& table, const IntMat& idx);        // -> [r×c×d]
Tensor gather_rows(const Tensor& table, const std::vector<int>& idx);  // -> [n×d]
Tensor group_max_rows(const Tensor& feats, const std::vector<std::vector<int>>& groups);
Tensor qr_scores(const Tensor& q, const Tensor& r3);    // [nq×dh],[nq×nkv×dh] -> [nq×nkv]
Tensor rk_scores(const Tensor& r3, const Tensor& k);    // [nq×nkv×dh],[nkv×dh] -> [nq×nkv]
Tensor slice_cols(const Tensor& x, int lo, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor mean_rows(const Tensor& x);                      // [m×n] -> [1×n]
Tensor mean_all(const Tensor& x);                       // -> [1]
Tensor sum_all(const Tensor& x);                        // -> [1]
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Loss heads. Targets/weights are constants (no gradient).
Tensor bce_logits_mean(const Tensor& logits, const std::vector<double>& targets,
                       const std::vector<double>* weights = nullptr);
Tensor quality_focal_mean(const Tensor& logits, const std::vector<double>& targets,
                          double gamma = 2.0);
Tensor softmax_xent_mean(const Tensor& logits, const std::vector<int>& target,
                         const std::vector<double>* row_weights = nullptr);
Tensor smooth_l1_mean(const Tensor& pred, const std::vector<double>& target,
                      const std::vector<double>& row_mask, double beta = 1.0);

}  // namespace rp3d
