#include "rp3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rp3d {

int numel_of(const Shape& shape) {
  int n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

std::shared_ptr<Node> new_node(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<std::size_t>(numel_of(n->shape)), 0.0);
  n->requires_grad = requires_grad;
  return n;
}

// Attaches parents and the backward function only when the node needs grad,
// so inference graphs carry no history.
Tensor finish(std::shared_ptr<Node> n, std::vector<Tensor> parents,
              std::function<void(Node&, GradTable&)> fn) {
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
  }
  return Tensor(std::move(n));
}

bool any_grad(const Tensor& a) { return a.requires_grad(); }
bool any_grad(const Tensor& a, const Tensor& b) {
  return a.requires_grad() || b.requires_grad();
}

void check_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " +
                                shape_str(t.shape()));
  }
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  auto n = new_node(std::move(shape), false);
  if (data.size() != n->value.size()) {
    throw std::invalid_argument("Tensor::constant: data length " +
                                std::to_string(data.size()) + " does not match shape " +
                                shape_str(n->shape));
  }
  n->value = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) { return Tensor(new_node(std::move(shape), false)); }

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

void Tensor::zero_grad() {
  n_->grad.assign(n_->value.size(), 0.0);
}

std::vector<double>& GradTable::of(const Node* n) {
  auto it = g_.find(n);
  if (it == g_.end()) {
    it = g_.emplace(n, std::vector<double>(n->value.size(), 0.0)).first;
  }
  return it->second;
}

const std::vector<double>* GradTable::find(const Node* n) const {
  auto it = g_.find(n);
  return it == g_.end() ? nullptr : &it->second;
}

Graph Graph::build(const Tensor& output) {
  Graph g;
  if (!output.defined() || !output.requires_grad()) return g;
  std::unordered_map<const Node*, int> state;  // 0 unseen, 1 open, 2 done
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  state[output.node().get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && state[p] == 0) {
        state[p] = 1;
        stack.emplace_back(p, 0);
      }
    } else {
      state[node] = 2;
      g.topo.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

GradTable Graph::backward(const Tensor& output) const {
  if (output.numel() != 1) {
    throw std::invalid_argument("backward: output must be scalar, got " +
                                shape_str(output.shape()));
  }
  GradTable gt;
  gt.of(output.node().get())[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n, gt);
  }
  return gt;
}

GradTable backward(const Tensor& scalar_output) {
  return Graph::build(scalar_output).backward(scalar_output);
}

void accumulate_param_grads(const std::vector<Tensor>& params, const GradTable& gt) {
  for (const auto& p : params) {
    const auto* g = gt.find(p.node().get());
    if (!g) continue;
    auto& acc = p.node()->grad;
    if (acc.size() != g->size()) acc.assign(g->size(), 0.0);
    for (std::size_t i = 0; i < g->size(); ++i) acc[i] += (*g)[i];
  }
}

Tensor make_param(const std::string& name, Shape shape, Rng& rng, double stddev) {
  auto n = new_node(std::move(shape), true);
  n->is_param = true;
  n->name = name;
  n->grad.assign(n->value.size(), 0.0);
  for (auto& v : n->value) v = rng.normal(0.0, stddev);
  return Tensor(std::move(n));
}

Tensor make_param_value(const std::string& name, Shape shape, std::vector<double> data) {
  auto n = new_node(std::move(shape), true);
  n->is_param = true;
  n->name = name;
  if (data.size() != n->value.size()) {
    throw std::invalid_argument("make_param_value: data length does not match shape " +
                                shape_str(n->shape));
  }
  n->value = std::move(data);
  n->grad.assign(n->value.size(), 0.0);
  return Tensor(std::move(n));
}

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw std::invalid_argument("matmul: inner extents disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  auto out = new_node({m, n}, any_grad(a, b));
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* pc = out->value.data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double av = pa[static_cast<std::size_t>(i) * k + kk];
      const double* brow = pb + static_cast<std::size_t>(kk) * n;
      double* crow = pc + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return finish(out, {a, b}, [an, bn, m, k, n](Node& self, GradTable& gt) {
    const double* dc = gt.of(&self).data();
    if (an->requires_grad) {
      double* da = gt.of(an).data();
      const double* pb2 = bn->value.data();
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          const double* dcr = dc + static_cast<std::size_t>(i) * n;
          const double* br = pb2 + static_cast<std::size_t>(kk) * n;
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += dcr[j] * br[j];
          da[static_cast<std::size_t>(i) * k + kk] += s;
        }
      }
    }
    if (bn->requires_grad) {
      double* db = gt.of(bn).data();
      const double* pa2 = an->value.data();
      for (int i = 0; i < m; ++i) {
        const double* dcr = dc + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const double av = pa2[static_cast<std::size_t>(i) * k + kk];
          double* dbr = db + static_cast<std::size_t>(kk) * n;
          for (int j = 0; j < n; ++j) dbr[j] += av * dcr[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_2d(a, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  auto out = new_node({n, m}, any_grad(a));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->value[static_cast<std::size_t>(j) * m + i] = a.at(i, j);
  Node* an = a.node().get();
  return finish(out, {a}, [an, m, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& da = gt.of(an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        da[static_cast<std::size_t>(i) * n + j] += dc[static_cast<std::size_t>(j) * m + i];
  });
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch, " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = new_node(a.shape(), any_grad(a, b));
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] + b.value()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return finish(out, {a, b}, [an, bn](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    if (an->requires_grad) {
      auto& da = gt.of(an);
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
    }
    if (bn->requires_grad) {
      auto& db = gt.of(bn);
      for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = new_node(a.shape(), any_grad(a, b));
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] - b.value()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return finish(out, {a, b}, [an, bn](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    if (an->requires_grad) {
      auto& da = gt.of(an);
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
    }
    if (bn->requires_grad) {
      auto& db = gt.of(bn);
      for (std::size_t i = 0; i < dc.size(); ++i) db[i] -= dc[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = new_node(a.shape(), any_grad(a, b));
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] * b.value()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return finish(out, {a, b}, [an, bn](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    if (an->requires_grad) {
      auto& da = gt.of(an);
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& db = gt.of(bn);
      for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  auto out = new_node(a.shape(), any_grad(a));
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] * c;
  Node* an = a.node().get();
  return finish(out, {a}, [an, c](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& da = gt.of(an);
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * c;
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  check_2d(a, "add_bias");
  const int m = a.dim(0), n = a.dim(1);
  if (bias.numel() != n) {
    throw std::invalid_argument("add_bias: bias length " + std::to_string(bias.numel()) +
                                " does not match columns of " + shape_str(a.shape()));
  }
  auto out = new_node(a.shape(), any_grad(a, bias));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->value[static_cast<std::size_t>(i) * n + j] = a.at(i, j) + bias.at(j);
  Node* an = a.node().get();
  Node* bn = bias.node().get();
  return finish(out, {a, bias}, [an, bn, m, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    if (an->requires_grad) {
      auto& da = gt.of(an);
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
    }
    if (bn->requires_grad) {
      auto& db = gt.of(bn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) db[static_cast<std::size_t>(j)] += dc[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Tensor repeat_row(const Tensor& v, int m) {
  const int n = v.numel();
  auto out = new_node({m, n}, any_grad(v));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->value[static_cast<std::size_t>(i) * n + j] = v.value()[static_cast<std::size_t>(j)];
  Node* vn = v.node().get();
  return finish(out, {v}, [vn, m, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& dv = gt.of(vn);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dv[static_cast<std::size_t>(j)] += dc[static_cast<std::size_t>(i) * n + j];
  });
}

Tensor relu(const Tensor& a) {
  auto out = new_node(a.shape(), any_grad(a));
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  Node* an = a.node().get();
  return finish(out, {a}, [an](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& da = gt.of(an);
    for (std::size_t i = 0; i < dc.size(); ++i)
      if (an->value[i] > 0.0) da[i] += dc[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  auto out = new_node(a.shape(), any_grad(a));
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = 1.0 / (1.0 + std::exp(-a.value()[i]));
  Node* an = a.node().get();
  Node* on = out.get();
  return finish(out, {a}, [an, on](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& da = gt.of(an);
    for (std::size_t i = 0; i < dc.size(); ++i) {
      const double s = on->value[i];
      da[i] += dc[i] * s * (1.0 - s);
    }
  });
}

Tensor softmax_rows(const Tensor& a) {
  check_2d(a, "softmax_rows");
  const int m = a.dim(0), n = a.dim(1);
  for (double v : a.value()) {
    if (std::isnan(v)) throw std::invalid_argument("softmax_rows: NaN input");
  }
  auto out = new_node(a.shape(), any_grad(a));
  for (int i = 0; i < m; ++i) {
    const double* row = a.value().data() + static_cast<std::size_t>(i) * n;
    double* orow = out->value.data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) orow[j] *= inv;
  }
  Node* an = a.node().get();
  Node* on = out.get();
  return finish(out, {a}, [an, on, m, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& da = gt.of(an);
    for (int i = 0; i < m; ++i) {
      const double* s = on->value.data() + static_cast<std::size_t>(i) * n;
      const double* d = dc.data() + static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += d[j] * s[j];
      double* g = da.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) g[j] += s[j] * (d[j] - dot);
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_2d(x, "layer_norm_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n) {
    throw std::invalid_argument("layer_norm_rows: gamma/beta length mismatch with " +
                                shape_str(x.shape()));
  }
  auto out = new_node(x.shape(), any_grad(x) || gamma.requires_grad() || beta.requires_grad());
  // Cache normalized rows and inverse stddevs for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.value().size());
  auto istd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* row = x.value().data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*istd)[static_cast<std::size_t>(i)] = is;
    double* xh = xhat->data() + static_cast<std::size_t>(i) * n;
    double* o = out->value.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      xh[j] = (row[j] - mu) * is;
      o[j] = xh[j] * gamma.at(j) + beta.at(j);
    }
  }
  Node* xn = x.node().get();
  Node* gn = gamma.node().get();
  Node* bn = beta.node().get();
  return finish(out, {x, gamma, beta}, [xn, gn, bn, xhat, istd, m, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    for (int i = 0; i < m; ++i) {
      const double* d = dc.data() + static_cast<std::size_t>(i) * n;
      const double* xh = xhat->data() + static_cast<std::size_t>(i) * n;
      if (gn->requires_grad) {
        auto& dg = gt.of(gn);
        for (int j = 0; j < n; ++j) dg[static_cast<std::size_t>(j)] += d[j] * xh[j];
      }
      if (bn->requires_grad) {
        auto& db = gt.of(bn);
        for (int j = 0; j < n; ++j) db[static_cast<std::size_t>(j)] += d[j];
      }
      if (xn->requires_grad) {
        auto& dx = gt.of(xn);
        const double is = (*istd)[static_cast<std::size_t>(i)];
        double mean_dy = 0.0, mean_dyxh = 0.0;
        for (int j = 0; j < n; ++j) {
          const double dy = d[j] * gn->value[static_cast<std::size_t>(j)];
          mean_dy += dy;
          mean_dyxh += dy * xh[j];
        }
        mean_dy /= n;
        mean_dyxh /= n;
        double* g = dx.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          const double dy = d[j] * gn->value[static_cast<std::size_t>(j)];
          g[j] += is * (dy - mean_dy - xh[j] * mean_dyxh);
        }
      }
    }
  });
}

namespace {

void check_gather_index(int idx, int rows) {
  if (idx < 0 || idx >= rows) {
    throw std::out_of_range("gather_rows: index " + std::to_string(idx) +
                            " outside table with " + std::to_string(rows) + " rows");
  }
}

}  // namespace

Tensor gather_rows(const Tensor& table, const IntMat& idx) {
  check_2d(table, "gather_rows");
  const int rows = table.dim(0), d = table.dim(1);
  auto out = new_node({idx.rows, idx.cols, d}, any_grad(table));
  for (int i = 0; i < idx.rows; ++i) {
    for (int j = 0; j < idx.cols; ++j) {
      const int r = idx.at(i, j);
      check_gather_index(r, rows);
      const double* src = table.value().data() + static_cast<std::size_t>(r) * d;
      double* dst = out->value.data() + (static_cast<std::size_t>(i) * idx.cols + j) * d;
      std::copy(src, src + d, dst);
    }
  }
  Node* tn = table.node().get();
  auto idx_copy = std::make_shared<IntMat>(idx);
  return finish(out, {table}, [tn, idx_copy, d](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& dt = gt.of(tn);
    for (int i = 0; i < idx_copy->rows; ++i) {
      for (int j = 0; j < idx_copy->cols; ++j) {
        const int r = idx_copy->at(i, j);
        const double* src = dc.data() + (static_cast<std::size_t>(i) * idx_copy->cols + j) * d;
        double* dst = dt.data() + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& idx) {
  check_2d(table, "gather_rows");
  const int rows = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(idx.size());
  auto out = new_node({n, d}, any_grad(table));
  for (int i = 0; i < n; ++i) {
    const int r = idx[static_cast<std::size_t>(i)];
    check_gather_index(r, rows);
    const double* src = table.value().data() + static_cast<std::size_t>(r) * d;
    std::copy(src, src + d, out->value.data() + static_cast<std::size_t>(i) * d);
  }
  Node* tn = table.node().get();
  auto idx_copy = std::make_shared<std::vector<int>>(idx);
  return finish(out, {table}, [tn, idx_copy, d, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& dt = gt.of(tn);
    for (int i = 0; i < n; ++i) {
      const int r = (*idx_copy)[static_cast<std::size_t>(i)];
      const double* src = dc.data() + static_cast<std::size_t>(i) * d;
      double* dst = dt.data() + static_cast<std::size_t>(r) * d;
      for (int c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Tensor group_max_rows(const Tensor& feats, const std::vector<std::vector<int>>& groups) {
  check_2d(feats, "group_max_rows");
  const int n = feats.dim(0), d = feats.dim(1);
  const int g = static_cast<int>(groups.size());
  auto out = new_node({g, d}, any_grad(feats));
  // argmax per output cell; -1 marks an empty group (output stays 0).
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(g) * d, -1);
  for (int gi = 0; gi < g; ++gi) {
    const auto& members = groups[static_cast<std::size_t>(gi)];
    double* orow = out->value.data() + static_cast<std::size_t>(gi) * d;
    int* arow = arg->data() + static_cast<std::size_t>(gi) * d;
    bool first = true;
    for (int m : members) {
      if (m < 0 || m >= n) {
        throw std::out_of_range("group_max_rows: member index " + std::to_string(m) +
                                " outside " + std::to_string(n) + " rows");
      }
      const double* frow = feats.value().data() + static_cast<std::size_t>(m) * d;
      if (first) {
        for (int c = 0; c < d; ++c) {
          orow[c] = frow[c];
          arow[c] = m;
        }
        first = false;
      } else {
        for (int c = 0; c < d; ++c) {
          if (frow[c] > orow[c]) {
            orow[c] = frow[c];
            arow[c] = m;
          }
        }
      }
    }
  }
  Node* fn = feats.node().get();
  return finish(out, {feats}, [fn, arg, g, d](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& df = gt.of(fn);
    for (int gi = 0; gi < g; ++gi) {
      const int* arow = arg->data() + static_cast<std::size_t>(gi) * d;
      const double* drow = dc.data() + static_cast<std::size_t>(gi) * d;
      for (int c = 0; c < d; ++c) {
        if (arow[c] >= 0) df[static_cast<std::size_t>(arow[c]) * d + c] += drow[c];
      }
    }
  });
}

Tensor qr_scores(const Tensor& q, const Tensor& r3) {
  check_2d(q, "qr_scores");
  if (r3.ndim() != 3) throw std::invalid_argument("qr_scores: expected 3-d encodings");
  const int nq = q.dim(0), dh = q.dim(1);
  if (r3.dim(0) != nq || r3.dim(2) != dh) {
    throw std::invalid_argument("qr_scores: shape mismatch, " + shape_str(q.shape()) +
                                " vs " + shape_str(r3.shape()));
  }
  const int nkv = r3.dim(1);
  auto out = new_node({nq, nkv}, any_grad(q, r3));
  for (int i = 0; i < nq; ++i) {
    const double* qi = q.value().data() + static_cast<std::size_t>(i) * dh;
    for (int j = 0; j < nkv; ++j) {
      const double* rij = r3.value().data() + (static_cast<std::size_t>(i) * nkv + j) * dh;
      double s = 0.0;
      for (int c = 0; c < dh; ++c) s += qi[c] * rij[c];
      out->value[static_cast<std::size_t>(i) * nkv + j] = s;
    }
  }
  Node* qn = q.node().get();
  Node* rn = r3.node().get();
  return finish(out, {q, r3}, [qn, rn, nq, nkv, dh](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    if (qn->requires_grad) {
      auto& dq = gt.of(qn);
      for (int i = 0; i < nq; ++i) {
        double* dqi = dq.data() + static_cast<std::size_t>(i) * dh;
        for (int j = 0; j < nkv; ++j) {
          const double dv = dc[static_cast<std::size_t>(i) * nkv + j];
          const double* rij = rn->value.data() + (static_cast<std::size_t>(i) * nkv + j) * dh;
          for (int c = 0; c < dh; ++c) dqi[c] += dv * rij[c];
        }
      }
    }
    if (rn->requires_grad) {
      auto& dr = gt.of(rn);
      for (int i = 0; i < nq; ++i) {
        const double* qi = qn->value.data() + static_cast<std::size_t>(i) * dh;
        for (int j = 0; j < nkv; ++j) {
          const double dv = dc[static_cast<std::size_t>(i) * nkv + j];
          double* drij = dr.data() + (static_cast<std::size_t>(i) * nkv + j) * dh;
          for (int c = 0; c < dh; ++c) drij[c] += dv * qi[c];
        }
      }
    }
  });
}

Tensor rk_scores(const Tensor& r3, const Tensor& k) {
  if (r3.ndim() != 3) throw std::invalid_argument("rk_scores: expected 3-d encodings");
  check_2d(k, "rk_scores");
  const int nq = r3.dim(0), nkv = r3.dim(1), dh = r3.dim(2);
  if (k.dim(0) != nkv || k.dim(1) != dh) {
    throw std::invalid_argument("rk_scores: shape mismatch, " + shape_str(r3.shape()) +
                                " vs " + shape_str(k.shape()));
  }
  auto out = new_node({nq, nkv}, any_grad(r3, k));
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < nkv; ++j) {
      const double* rij = r3.value().data() + (static_cast<std::size_t>(i) * nkv + j) * dh;
      const double* kj = k.value().data() + static_cast<std::size_t>(j) * dh;
      double s = 0.0;
      for (int c = 0; c < dh; ++c) s += rij[c] * kj[c];
      out->value[static_cast<std::size_t>(i) * nkv + j] = s;
    }
  }
  Node* rn = r3.node().get();
  Node* kn = k.node().get();
  return finish(out, {r3, k}, [rn, kn, nq, nkv, dh](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    if (rn->requires_grad) {
      auto& dr = gt.of(rn);
      for (int i = 0; i < nq; ++i) {
        for (int j = 0; j < nkv; ++j) {
          const double dv = dc[static_cast<std::size_t>(i) * nkv + j];
          const double* kj = kn->value.data() + static_cast<std::size_t>(j) * dh;
          double* drij = dr.data() + (static_cast<std::size_t>(i) * nkv + j) * dh;
          for (int c = 0; c < dh; ++c) drij[c] += dv * kj[c];
        }
      }
    }
    if (kn->requires_grad) {
      auto& dk = gt.of(kn);
      for (int i = 0; i < nq; ++i) {
        for (int j = 0; j < nkv; ++j) {
          const double dv = dc[static_cast<std::size_t>(i) * nkv + j];
          const double* rij = rn->value.data() + (static_cast<std::size_t>(i) * nkv + j) * dh;
          double* dkj = dk.data() + static_cast<std::size_t>(j) * dh;
          for (int c = 0; c < dh; ++c) dkj[c] += dv * rij[c];
        }
      }
    }
  });
}

Tensor slice_cols(const Tensor& x, int lo, int len) {
  check_2d(x, "slice_cols");
  const int m = x.dim(0), n = x.dim(1);
  if (lo < 0 || len <= 0 || lo + len > n) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(lo) + ", " +
                                std::to_string(lo + len) + ") outside " + shape_str(x.shape()));
  }
  auto out = new_node({m, len}, any_grad(x));
  for (int i = 0; i < m; ++i) {
    const double* src = x.value().data() + static_cast<std::size_t>(i) * n + lo;
    std::copy(src, src + len, out->value.data() + static_cast<std::size_t>(i) * len);
  }
  Node* xn = x.node().get();
  return finish(out, {x}, [xn, lo, len, m, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& dx = gt.of(xn);
    for (int i = 0; i < m; ++i) {
      const double* src = dc.data() + static_cast<std::size_t>(i) * len;
      double* dst = dx.data() + static_cast<std::size_t>(i) * n + lo;
      for (int c = 0; c < len; ++c) dst[c] += src[c];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int m = parts[0].dim(0);
  int n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    if (p.dim(0) != m) {
      throw std::invalid_argument("concat_cols: row count mismatch, " +
                                  shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    n += p.dim(1);
    rg = rg || p.requires_grad();
  }
  auto out = new_node({m, n}, rg);
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i) {
      const double* src = p.value().data() + static_cast<std::size_t>(i) * w;
      std::copy(src, src + w, out->value.data() + static_cast<std::size_t>(i) * n + off);
    }
    off += w;
  }
  std::vector<std::pair<Node*, std::pair<int, int>>> spans;  // node, (offset, width)
  off = 0;
  for (const auto& p : parts) {
    spans.emplace_back(p.node().get(), std::make_pair(off, p.dim(1)));
    off += p.dim(1);
  }
  return finish(out, parts, [spans, m, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    for (const auto& [pn, span] : spans) {
      if (!pn->requires_grad) continue;
      auto& dp = gt.of(pn);
      const auto [o, w] = span;
      for (int i = 0; i < m; ++i) {
        const double* src = dc.data() + static_cast<std::size_t>(i) * n + o;
        double* dst = dp.data() + static_cast<std::size_t>(i) * w;
        for (int c = 0; c < w; ++c) dst[c] += src[c];
      }
    }
  });
}

Tensor mean_rows(const Tensor& x) {
  check_2d(x, "mean_rows");
  const int m = x.dim(0), n = x.dim(1);
  auto out = new_node({1, n}, any_grad(x));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->value[static_cast<std::size_t>(j)] += x.at(i, j);
  for (int j = 0; j < n; ++j) out->value[static_cast<std::size_t>(j)] /= m;
  Node* xn = x.node().get();
  return finish(out, {x}, [xn, m, n](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& dx = gt.of(xn);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dx[static_cast<std::size_t>(i) * n + j] += dc[static_cast<std::size_t>(j)] / m;
  });
}

Tensor mean_all(const Tensor& x) {
  const int n = x.numel();
  auto out = new_node({1}, any_grad(x));
  double s = 0.0;
  for (double v : x.value()) s += v;
  out->value[0] = s / n;
  Node* xn = x.node().get();
  return finish(out, {x}, [xn, n](Node& self, GradTable& gt) {
    const double d = gt.of(&self)[0] / n;
    auto& dx = gt.of(xn);
    for (auto& v : dx) v += d;
  });
}

Tensor sum_all(const Tensor& x) {
  auto out = new_node({1}, any_grad(x));
  double s = 0.0;
  for (double v : x.value()) s += v;
  out->value[0] = s;
  Node* xn = x.node().get();
  return finish(out, {x}, [xn](Node& self, GradTable& gt) {
    const double d = gt.of(&self)[0];
    auto& dx = gt.of(xn);
    for (auto& v : dx) v += d;
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const std::size_t n = x.value().size();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep = 1.0 - rate;
  for (std::size_t i = 0; i < n; ++i) (*mask)[i] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  auto out = new_node(x.shape(), any_grad(x));
  for (std::size_t i = 0; i < n; ++i) out->value[i] = x.value()[i] * (*mask)[i];
  Node* xn = x.node().get();
  return finish(out, {x}, [xn, mask](Node& self, GradTable& gt) {
    const auto& dc = gt.of(&self);
    auto& dx = gt.of(xn);
    for (std::size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * (*mask)[i];
  });
}

namespace {

// Numerically stable binary cross-entropy from a logit.
double bce_from_logit(double l, double t) {
  return std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
}

}  // namespace

Tensor bce_logits_mean(const Tensor& logits, const std::vector<double>& targets,
                       const std::vector<double>* weights) {
  const std::size_t n = logits.value().size();
  if (targets.size() != n) {
    throw std::invalid_argument("bce_logits_mean: target count " + std::to_string(targets.size()) +
                                " does not match " + std::to_string(n) + " logits");
  }
  double wsum = 0.0;
  if (weights) {
    for (double w : *weights) wsum += w;
  } else {
    wsum = static_cast<double>(n);
  }
  auto out = new_node({1}, any_grad(logits));
  if (wsum > 0.0) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights ? (*weights)[i] : 1.0;
      if (w != 0.0) s += w * bce_from_logit(logits.value()[i], targets[i]);
    }
    out->value[0] = s / wsum;
  }
  Node* ln = logits.node().get();
  auto t = std::make_shared<std::vector<double>>(targets);
  auto w = weights ? std::make_shared<std::vector<double>>(*weights) : nullptr;
  return finish(out, {logits}, [ln, t, w, wsum, n](Node& self, GradTable& gt) {
    if (wsum <= 0.0) return;
    const double d = gt.of(&self)[0] / wsum;
    auto& dl = gt.of(ln);
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w ? (*w)[i] : 1.0;
      if (wi == 0.0) continue;
      const double p = 1.0 / (1.0 + std::exp(-ln->value[i]));
      dl[i] += d * wi * (p - (*t)[i]);
    }
  });
}

Tensor quality_focal_mean(const Tensor& logits, const std::vector<double>& targets,
                          double gamma) {
  const std::size_t n = logits.value().size();
  if (targets.size() != n) {
    throw std::invalid_argument("quality_focal_mean: target count mismatch");
  }
  for (double t : targets) {
    if (t < 0.0 || t > 1.0) {
      throw std::invalid_argument("quality_focal_mean: target " + std::to_string(t) +
                                  " outside [0,1]");
    }
  }
  auto out = new_node({1}, any_grad(logits));
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = logits.value()[i];
    const double p = 1.0 / (1.0 + std::exp(-l));
    s += std::pow(std::abs(targets[i] - p), gamma) * bce_from_logit(l, targets[i]);
  }
  out->value[0] = s / static_cast<double>(n);
  Node* ln = logits.node().get();
  auto t = std::make_shared<std::vector<double>>(targets);
  return finish(out, {logits}, [ln, t, gamma, n](Node& self, GradTable& gt) {
    const double d = gt.of(&self)[0] / static_cast<double>(n);
    auto& dl = gt.of(ln);
    for (std::size_t i = 0; i < n; ++i) {
      const double l = ln->value[i];
      const double ti = (*t)[i];
      const double p = 1.0 / (1.0 + std::exp(-l));
      const double diff = ti - p;
      const double ad = std::abs(diff);
      const double bce = bce_from_logit(l, ti);
      // d/dl [|t-p|^g * bce]: modulating-factor term plus focal-weighted bce term.
      double g = std::pow(ad, gamma) * (p - ti);
      if (ad > 0.0) {
        const double sgn = diff > 0.0 ? 1.0 : -1.0;
        g += gamma * std::pow(ad, gamma - 1.0) * sgn * (-p * (1.0 - p)) * bce;
      }
      dl[i] += d * g;
    }
  });
}

Tensor softmax_xent_mean(const Tensor& logits, const std::vector<int>& target,
                         const std::vector<double>* row_weights) {
  check_2d(logits, "softmax_xent_mean");
  const int m = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(target.size()) != m) {
    throw std::invalid_argument("softmax_xent_mean: target count mismatch");
  }
  double wsum = 0.0;
  for (int i = 0; i < m; ++i) {
    const double w = row_weights ? (*row_weights)[static_cast<std::size_t>(i)] : 1.0;
    if (w != 0.0 && target[static_cast<std::size_t>(i)] >= 0) wsum += w;
  }
  auto probs = std::make_shared<std::vector<double>>(logits.value().size());
  auto out = new_node({1}, any_grad(logits));
  double s = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* row = logits.value().data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    double* prow = probs->data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    for (int j = 0; j < c; ++j) prow[j] /= sum;
    const int ti = target[static_cast<std::size_t>(i)];
    const double w = row_weights ? (*row_weights)[static_cast<std::size_t>(i)] : 1.0;
    if (ti >= 0 && w != 0.0) {
      if (ti >= c) throw std::out_of_range("softmax_xent_mean: target class out of range");
      s += w * -std::log(std::max(prow[ti], 1e-300));
    }
  }
  if (wsum > 0.0) out->value[0] = s / wsum;
  Node* ln = logits.node().get();
  auto t = std::make_shared<std::vector<int>>(target);
  auto w = row_weights ? std::make_shared<std::vector<double>>(*row_weights) : nullptr;
  return finish(out, {logits}, [ln, t, w, probs, wsum, m, c](Node& self, GradTable& gt) {
    if (wsum <= 0.0) return;
    const double d = gt.of(&self)[0] / wsum;
    auto& dl = gt.of(ln);
    for (int i = 0; i < m; ++i) {
      const int ti = (*t)[static_cast<std::size_t>(i)];
      const double wi = w ? (*w)[static_cast<std::size_t>(i)] : 1.0;
      if (ti < 0 || wi == 0.0) continue;
      const double* prow = probs->data() + static_cast<std::size_t>(i) * c;
      double* drow = dl.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) drow[j] += d * wi * (prow[j] - (j == ti ? 1.0 : 0.0));
    }
  });
}

Tensor smooth_l1_mean(const Tensor& pred, const std::vector<double>& target,
                      const std::vector<double>& row_mask, double beta) {
  check_2d(pred, "smooth_l1_mean");
  const int m = pred.dim(0), k = pred.dim(1);
  if (target.size() != pred.value().size()) {
    throw std::invalid_argument("smooth_l1_mean: target size mismatch");
  }
  if (static_cast<int>(row_mask.size()) != m) {
    throw std::invalid_argument("smooth_l1_mean: mask size mismatch");
  }
  int rows_in = 0;
  for (double w : row_mask)
    if (w != 0.0) ++rows_in;
  const double denom = static_cast<double>(rows_in) * k;
  auto out = new_node({1}, any_grad(pred));
  if (rows_in > 0) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) {
      if (row_mask[static_cast<std::size_t>(i)] == 0.0) continue;
      for (int j = 0; j < k; ++j) {
        const double e = pred.at(i, j) - target[static_cast<std::size_t>(i) * k + j];
        const double a = std::abs(e);
        s += a <= beta ? 0.5 * e * e / beta : a - 0.5 * beta;
      }
    }
    out->value[0] = s / denom;
  }
  Node* pn = pred.node().get();
  auto t = std::make_shared<std::vector<double>>(target);
  auto msk = std::make_shared<std::vector<double>>(row_mask);
  return finish(out, {pred}, [pn, t, msk, beta, denom, m, k](Node& self, GradTable& gt) {
    if (denom <= 0.0) return;
    const double d = gt.of(&self)[0] / denom;
    auto& dp = gt.of(pn);
    for (int i = 0; i < m; ++i) {
      if ((*msk)[static_cast<std::size_t>(i)] == 0.0) continue;
      for (int j = 0; j < k; ++j) {
        const std::size_t ix = static_cast<std::size_t>(i) * k + j;
        const double e = pn->value[ix] - (*t)[ix];
        dp[ix] += d * std::clamp(e / beta, -1.0, 1.0);
      }
    }
  });
}

}  // namespace rp3d
