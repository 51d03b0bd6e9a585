#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vmap/tensor.hpp"

namespace vmap::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;  // same shape as val, allocated by the tape before backward
  std::function<void(Node&)> backfn;  // propagates this->grad into parents
  bool needs_grad = true;
};

/// Named trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m, adam_v;

  explicit Parameter(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(shape), adam_m(shape), adam_v(shape) {}
};

/// Records ops in creation order; backward() runs them in reverse.
class Tape {
 public:
  Var make(Tensor val, std::function<void(Node&)> backfn, bool needs_grad = true);
  Var constant(Tensor val);
  /// Leaf node backed by a Parameter; backward accumulates into p.grad.
  Var leaf(Parameter& p);
  void backward(const Var& loss);
  size_t num_nodes() const { return order_.size(); }

 private:
  std::vector<Var> order_;
};

// ---- elementwise / structural ----
Var add(Tape& t, const Var& a, const Var& b);
Var scale(Tape& t, const Var& a, double s);
Var silu(Tape& t, const Var& a);
Var sigmoid(Tape& t, const Var& a);
Var concat_channels(Tape& t, const std::vector<Var>& xs);  // [Ci,H,W] -> [sum C,H,W]

// ---- conv / spatial ----
Var conv2d(Tape& t, const Var& x, const Var& w, const Var& b, int stride, int pad);
Var bilinear_resize(Tape& t, const Var& x, int out_h, int out_w);  // align-corners
/// Affine grid sample over a [0,1]^2 grid (align-corners, zero padding).
/// theta is [2,3]; source = theta * [x_t, y_t, 1].
Var grid_sample_affine(Tape& t, const Var& x, const Var& theta);
Var global_avg_pool(Tape& t, const Var& x);        // [C,H,W] -> [C]
Var flatten_cells(Tape& t, const Var& x);          // [C,H,W] -> [H*W, C]

// ---- dense ----
Var linear(Tape& t, const Var& x, const Var& w, const Var& b);  // [N,D]x[D,Do]
Var matmul(Tape& t, const Var& a, const Var& b);                 // [N,K]x[K,M]
Var matmul_nt(Tape& t, const Var& a, const Var& b);              // [N,D]x[M,D]^T -> [N,M]
Var softmax_rows(Tape& t, const Var& x);
Var layernorm_rows(Tape& t, const Var& x, const Var& gain, const Var& bias);
Var add_row_broadcast(Tape& t, const Var& x, const Var& r);      // [N,D] + [D]
/// q[m*P+p, :] = inst[m, :] + pt[p, :]
Var query_grid(Tape& t, const Var& inst, const Var& pt);
/// [M*P, D] -> [M, D], mean over the P rows of each group.
Var group_mean_rows(Tape& t, const Var& x, int groups, int group_size);

}  // namespace vmap::ad
