#pragma once

#include "lift3d/core.hpp"

#include <functional>
#include <memory>
#include <vector>

// Reverse-mode differentiation over dense matrices. Every op records its value and
// a closure that accumulates input gradients from its output gradient.
namespace lift3d::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// One attention block: a set of token rows that attend among themselves.
struct AttentionGroup {
  std::vector<int> tokens;
  Mat allowed;  // n x n, 1 where query i may attend key k at all
  Mat gate;     // n x n window multipliers, only read in multiplicative mode
};

struct AttentionPattern {
  std::vector<AttentionGroup> groups;
  /// false: gate zeros are removed from the softmax (weight exactly 0).
  /// true: logits are multiplied by the gate before the softmax.
  bool multiplicative = false;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  Var parameter(Mat value);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient accumulated by backward(); zero-sized if the node received none.
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var bias);
  Var scale_rows(Var a, const Vec& row_scale);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var gelu(Var x);
  Var concat_cols(Var a, Var b);
  /// x + table.row(index[r]) for every row r with index[r] >= 0.
  Var add_gathered_rows(Var x, Var table, std::vector<int> index);
  /// Multi-head scaled dot-product attention; heads are contiguous column blocks.
  Var attention(Var q, Var k, Var v, std::shared_ptr<const AttentionPattern> pattern, int heads, double scale);

  /// Post-softmax weights of an attention node, indexed [group][head].
  const std::vector<std::vector<Mat>>& attention_weights(Var out) const;

  void backward(Var out, const Mat& seed);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void()> backward;
    std::vector<std::vector<Mat>> probs;
  };

  Var push(Mat value, bool needs_grad);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Mat& grad_ref(Var v);

  std::vector<Node> nodes_;
};

/// Smooth rectifier used by every MLP (tanh-form GELU).
double gelu(double x);
double gelu_derivative(double x);

}  // namespace lift3d::ad
