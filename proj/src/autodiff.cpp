#include "lift3d/autodiff.hpp"

#include <cmath>
#include <limits>

namespace lift3d::ad {

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Var Tape::push(Mat value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Mat value) { return push(std::move(value), false); }

Var Tape::parameter(Mat value) { return push(std::move(value), true); }

Var Tape::matmul(Var a, Var b) {
  require_shape(value(a).cols() == value(b).rows(), "matmul inner dimensions differ");
  Mat out = value(a) * value(b);
  const Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, a, b, o] {
      const Mat& g = nodes_[o.id].grad;
      if (needs(a)) grad_ref(a).noalias() += g * value(b).transpose();
      if (needs(b)) grad_ref(b).noalias() += value(a).transpose() * g;
    };
  }
  return o;
}

Var Tape::add(Var a, Var b) {
  require_shape(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add shape mismatch");
  const Var o = push(value(a) + value(b), needs(a) || needs(b));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, a, b, o] {
      const Mat& g = nodes_[o.id].grad;
      if (needs(a)) grad_ref(a) += g;
      if (needs(b)) grad_ref(b) += g;
    };
  }
  return o;
}

Var Tape::add_row(Var a, Var bias) {
  require_shape(value(bias).rows() == 1 && value(bias).cols() == value(a).cols(), "bias shape mismatch");
  Mat out = value(a);
  out.rowwise() += value(bias).row(0);
  const Var o = push(std::move(out), needs(a) || needs(bias));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, a, bias, o] {
      const Mat& g = nodes_[o.id].grad;
      if (needs(a)) grad_ref(a) += g;
      if (needs(bias)) grad_ref(bias) += g.colwise().sum();
    };
  }
  return o;
}

Var Tape::scale_rows(Var a, const Vec& row_scale) {
  require_shape(row_scale.size() == value(a).rows(), "row scale length mismatch");
  const Var o = push(row_scale.asDiagonal() * value(a), needs(a));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, a, o, row_scale] { grad_ref(a) += row_scale.asDiagonal() * nodes_[o.id].grad; };
  }
  return o;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Mat& in = value(x);
  const Eigen::Index d = in.cols();
  require_shape(value(gain).cols() == d && value(bias).cols() == d, "layer norm parameter shape mismatch");
  Mat xhat(in.rows(), d);
  Vec inv(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mu = in.row(r).mean();
    const double var = (in.row(r).array() - mu).square().mean();
    inv[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv[r];
  }
  Mat out = xhat.array().rowwise() * value(gain).row(0).array();
  out.rowwise() += value(bias).row(0);
  const Var o = push(std::move(out), needs(x) || needs(gain) || needs(bias));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, x, gain, bias, o, xhat = std::move(xhat), inv = std::move(inv)] {
      const Mat& g = nodes_[o.id].grad;
      if (needs(gain)) grad_ref(gain) += g.cwiseProduct(xhat).colwise().sum();
      if (needs(bias)) grad_ref(bias) += g.colwise().sum();
      if (needs(x)) {
        const Mat dxhat = g.array().rowwise() * value(gain).row(0).array();
        const double dn = static_cast<double>(dxhat.cols());
        Mat& gx = grad_ref(x);
        for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
          const double s1 = dxhat.row(r).sum();
          const double s2 = dxhat.row(r).dot(xhat.row(r));
          gx.row(r).array() += inv[r] / dn * (dn * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
        }
      }
    };
  }
  return o;
}

Var Tape::gelu(Var x) {
  const Var o = push(value(x).unaryExpr([](double v) { return ad::gelu(v); }), needs(x));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, x, o] {
      grad_ref(x) += nodes_[o.id].grad.cwiseProduct(value(x).unaryExpr([](double v) { return gelu_derivative(v); }));
    };
  }
  return o;
}

Var Tape::concat_cols(Var a, Var b) {
  require_shape(value(a).rows() == value(b).rows(), "concat row mismatch");
  Mat out(value(a).rows(), value(a).cols() + value(b).cols());
  out << value(a), value(b);
  const Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, a, b, o] {
      const Mat& g = nodes_[o.id].grad;
      const Eigen::Index ca = value(a).cols();
      if (needs(a)) grad_ref(a) += g.leftCols(ca);
      if (needs(b)) grad_ref(b) += g.rightCols(g.cols() - ca);
    };
  }
  return o;
}

Var Tape::add_gathered_rows(Var x, Var table, std::vector<int> index) {
  require_shape(static_cast<Eigen::Index>(index.size()) == value(x).rows(), "gather index length mismatch");
  require_shape(value(table).cols() == value(x).cols(), "gather table width mismatch");
  Mat out = value(x);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    require_shape(index[r] < value(table).rows(), "gather index out of range");
    out.row(r) += value(table).row(index[r]);
  }
  const Var o = push(std::move(out), needs(x) || needs(table));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, x, table, o, index = std::move(index)] {
      const Mat& g = nodes_[o.id].grad;
      if (needs(x)) grad_ref(x) += g;
      if (needs(table)) {
        Mat& gt = grad_ref(table);
        for (std::size_t r = 0; r < index.size(); ++r) {
          if (index[r] >= 0) gt.row(index[r]) += g.row(r);
        }
      }
    };
  }
  return o;
}

Var Tape::attention(Var q, Var k, Var v, std::shared_ptr<const AttentionPattern> pattern, int heads,
                    double scale) {
  const Mat& qm = value(q);
  const Mat& km = value(k);
  const Mat& vm = value(v);
  require_shape(qm.rows() == km.rows() && km.rows() == vm.rows(), "attention token counts differ");
  require_shape(qm.cols() == km.cols() && qm.cols() == vm.cols(), "attention widths differ");
  require_shape(heads >= 1 && qm.cols() % heads == 0, "attention width not divisible by heads");
  const int dh = static_cast<int>(qm.cols()) / heads;

  Mat out = Mat::Zero(qm.rows(), qm.cols());
  std::vector<std::vector<Mat>> probs(pattern->groups.size());
  for (std::size_t gi = 0; gi < pattern->groups.size(); ++gi) {
    const AttentionGroup& grp = pattern->groups[gi];
    const int n = static_cast<int>(grp.tokens.size());
    require_shape(grp.allowed.rows() == n && grp.allowed.cols() == n, "attention mask shape mismatch");
    Mat qg(n, qm.cols()), kg(n, km.cols()), vg(n, vm.cols());
    for (int i = 0; i < n; ++i) {
      qg.row(i) = qm.row(grp.tokens[i]);
      kg.row(i) = km.row(grp.tokens[i]);
      vg.row(i) = vm.row(grp.tokens[i]);
    }
    probs[gi].resize(heads);
    for (int h = 0; h < heads; ++h) {
      Mat s = scale * qg.middleCols(h * dh, dh) * kg.middleCols(h * dh, dh).transpose();
      if (pattern->multiplicative) s = s.cwiseProduct(grp.gate);
      Mat p = Mat::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < n; ++c) {
          const bool ok = grp.allowed(i, c) != 0.0 && (pattern->multiplicative || grp.gate(i, c) != 0.0);
          if (ok) mx = std::max(mx, s(i, c));
        }
        if (!std::isfinite(mx)) continue;
        double z = 0.0;
        for (int c = 0; c < n; ++c) {
          const bool ok = grp.allowed(i, c) != 0.0 && (pattern->multiplicative || grp.gate(i, c) != 0.0);
          if (ok) {
            p(i, c) = std::exp(s(i, c) - mx);
            z += p(i, c);
          }
        }
        p.row(i) /= z;
      }
      const Mat o = p * vg.middleCols(h * dh, dh);
      for (int i = 0; i < n; ++i) out.row(grp.tokens[i]).segment(h * dh, dh) = o.row(i);
      probs[gi][h] = std::move(p);
    }
  }

  const Var o = push(std::move(out), needs(q) || needs(k) || needs(v));
  nodes_[o.id].probs = std::move(probs);
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].backward = [this, q, k, v, o, pattern, heads, dh, scale] {
      const Mat& g = nodes_[o.id].grad;
      const Mat& qm = value(q);
      const Mat& km = value(k);
      const Mat& vm = value(v);
      Mat* gq = needs(q) ? &grad_ref(q) : nullptr;
      Mat* gk = needs(k) ? &grad_ref(k) : nullptr;
      Mat* gv = needs(v) ? &grad_ref(v) : nullptr;
      for (std::size_t gi = 0; gi < pattern->groups.size(); ++gi) {
        const AttentionGroup& grp = pattern->groups[gi];
        const int n = static_cast<int>(grp.tokens.size());
        Mat qg(n, qm.cols()), kg(n, km.cols()), vg(n, vm.cols()), go(n, g.cols());
        for (int i = 0; i < n; ++i) {
          qg.row(i) = qm.row(grp.tokens[i]);
          kg.row(i) = km.row(grp.tokens[i]);
          vg.row(i) = vm.row(grp.tokens[i]);
          go.row(i) = g.row(grp.tokens[i]);
        }
        Mat dq = Mat::Zero(n, qm.cols()), dk = Mat::Zero(n, km.cols()), dv = Mat::Zero(n, vm.cols());
        for (int h = 0; h < heads; ++h) {
          const Mat& p = nodes_[o.id].probs[gi][h];
          const auto goh = go.middleCols(h * dh, dh);
          const Mat dp = goh * vg.middleCols(h * dh, dh).transpose();
          dv.middleCols(h * dh, dh).noalias() += p.transpose() * goh;
          const Vec row_dot = p.cwiseProduct(dp).rowwise().sum();
          Mat ds = p.cwiseProduct(dp.colwise() - row_dot);
          if (pattern->multiplicative) ds = ds.cwiseProduct(grp.gate);
          ds *= scale;
          dq.middleCols(h * dh, dh).noalias() += ds * kg.middleCols(h * dh, dh);
          dk.middleCols(h * dh, dh).noalias() += ds.transpose() * qg.middleCols(h * dh, dh);
        }
        for (int i = 0; i < n; ++i) {
          if (gq) gq->row(grp.tokens[i]) += dq.row(i);
          if (gk) gk->row(grp.tokens[i]) += dk.row(i);
          if (gv) gv->row(grp.tokens[i]) += dv.row(i);
        }
      }
    };
  }
  return o;
}

const std::vector<std::vector<Mat>>& Tape::attention_weights(Var out) const { return nodes_[out.id].probs; }

void Tape::backward(Var out, const Mat& seed) {
  require_shape(seed.rows() == value(out).rows() && seed.cols() == value(out).cols(), "backward seed shape mismatch");
  grad_ref(out) += seed;
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

}  // namespace lift3d::ad
