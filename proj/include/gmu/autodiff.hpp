#ifndef GMU_AUTODIFF_HPP
#define GMU_AUTODIFF_HPP

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gmu/common.hpp"

namespace gmu::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense double matrices. A tape is built per forward
/// pass; backward() walks the nodes in reverse creation order. Scalars are
/// 1x1 matrices. Custom ops (convolution, sampling) are added through node().
/// Node storage is a deque so references returned by value()/grad() stay
/// valid while further nodes are appended.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v) { return push(std::move(v), false); }
  Var leaf(Mat v) { return push(std::move(v), true); }

  const Mat& value(Var x) const { return nodes_[check(x)].value; }

  /// Gradient of the last backward() pass; zeros if the node was never reached.
  const Mat& grad(Var x) {
    Node& n = nodes_[check(x)];
    if (!n.grad_alloc) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  bool requires_grad(Var x) const { return nodes_[check(x)].requires_grad; }

  void accumulate(Var x, const Mat& g) {
    Node& n = nodes_[check(x)];
    if (!n.requires_grad) return;
    if (!n.grad_alloc) {
      n.grad = g;
      n.grad_alloc = true;
    } else {
      n.grad += g;
    }
  }

  /// Generic node: value, inputs, and a backward callback invoked with the
  /// tape and the node's own Var (read grad(self), accumulate into inputs).
  Var node(Mat value, const std::vector<Var>& inputs,
           std::function<void(Tape&, Var)> backward) {
    bool req = false;
    for (Var in : inputs) req = req || nodes_[check(in)].requires_grad;
    Var v = push(std::move(value), req);
    if (req) nodes_[v.id].backward = std::move(backward);
    return v;
  }

  void backward(Var loss) {
    Node& ln = nodes_[check(loss)];
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw NumericError("backward: loss must be a 1x1 scalar");
    if (!std::isfinite(ln.value(0, 0)))
      throw NumericError("backward: loss is not finite");
    accumulate(loss, Mat::Ones(1, 1));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.requires_grad && n.grad_alloc && n.backward) n.backward(*this, Var{id});
    }
  }

  size_t size() const { return nodes_.size(); }

  // ---- elementwise / broadcast -------------------------------------------

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    return node(value(a) + value(b), {a, b}, [a, b](Tape& t, Var self) {
      t.accumulate(a, t.grad(self));
      t.accumulate(b, t.grad(self));
    });
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    return node(value(a) - value(b), {a, b}, [a, b](Tape& t, Var self) {
      t.accumulate(a, t.grad(self));
      t.accumulate(b, -t.grad(self));
    });
  }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    return node(value(a).cwiseProduct(value(b)), {a, b}, [a, b](Tape& t, Var self) {
      t.accumulate(a, t.grad(self).cwiseProduct(t.value(b)));
      t.accumulate(b, t.grad(self).cwiseProduct(t.value(a)));
    });
  }

  Var scale(Var a, double c) {
    return node(value(a) * c, {a}, [a, c](Tape& t, Var self) {
      t.accumulate(a, t.grad(self) * c);
    });
  }

  /// X (R x C) + broadcast row vector v (1 x C).
  Var add_rowvec(Var x, Var v) {
    require_cols_match(x, v, "add_rowvec");
    Mat y = value(x);
    y.rowwise() += value(v).row(0);
    return node(std::move(y), {x, v}, [x, v](Tape& t, Var self) {
      t.accumulate(x, t.grad(self));
      t.accumulate(v, t.grad(self).colwise().sum());
    });
  }

  /// X (R x C) .* broadcast row vector v (1 x C).
  Var mul_rowvec(Var x, Var v) {
    require_cols_match(x, v, "mul_rowvec");
    Mat y = value(x).array().rowwise() * value(v).row(0).array();
    return node(std::move(y), {x, v}, [x, v](Tape& t, Var self) {
      const Mat& g = t.grad(self);
      t.accumulate(x, g.array().rowwise() * t.value(v).row(0).array());
      t.accumulate(v, g.cwiseProduct(t.value(x)).colwise().sum());
    });
  }

  /// X ((B*R) x C) where block b is multiplied rowwise by S.row(b), S (B x C).
  Var mul_block_rowvec(Var x, Var s, int rows_per_block) {
    const int B = static_cast<int>(value(s).rows());
    if (value(x).rows() != static_cast<long>(B) * rows_per_block || value(x).cols() != value(s).cols())
      throw NumericError("mul_block_rowvec: shape mismatch");
    Mat y = value(x);
    for (int b = 0; b < B; ++b)
      y.middleRows(b * rows_per_block, rows_per_block).array().rowwise() *=
          value(s).row(b).array();
    return node(std::move(y), {x, s}, [x, s, rows_per_block, B](Tape& t, Var self) {
      const Mat& g = t.grad(self);
      Mat gx = g;
      Mat gs = Mat::Zero(B, t.value(s).cols());
      for (int b = 0; b < B; ++b) {
        gx.middleRows(b * rows_per_block, rows_per_block).array().rowwise() *=
            t.value(s).row(b).array();
        gs.row(b) = g.middleRows(b * rows_per_block, rows_per_block)
                        .cwiseProduct(t.value(x).middleRows(b * rows_per_block, rows_per_block))
                        .colwise()
                        .sum();
      }
      t.accumulate(x, gx);
      t.accumulate(s, gs);
    });
  }

  /// X ((reps*R) x C) + P (R x C) tiled `reps` times along rows.
  Var add_tiled_rows(Var x, Var p, int reps) {
    const long R = value(p).rows();
    if (value(x).rows() != R * reps || value(x).cols() != value(p).cols())
      throw NumericError("add_tiled_rows: shape mismatch");
    Mat y = value(x);
    for (int b = 0; b < reps; ++b) y.middleRows(b * R, R) += value(p);
    return node(std::move(y), {x, p}, [x, p, reps, R](Tape& t, Var self) {
      const Mat& g = t.grad(self);
      t.accumulate(x, g);
      Mat gp = Mat::Zero(R, t.value(p).cols());
      for (int b = 0; b < reps; ++b) gp += g.middleRows(b * R, R);
      t.accumulate(p, gp);
    });
  }

  // ---- activations / pointwise -------------------------------------------

  Var relu(Var a) {
    return node(value(a).cwiseMax(0.0), {a}, [a](Tape& t, Var self) {
      const Mat mask = (t.value(a).array() > 0.0).cast<double>();
      t.accumulate(a, t.grad(self).cwiseProduct(mask));
    });
  }

  Var sigmoid(Var a) {
    Mat y = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    return node(std::move(y), {a}, [a](Tape& t, Var self) {
      const auto& y = t.value(self).array();
      t.accumulate(a, (t.grad(self).array() * y * (1.0 - y)).matrix());
    });
  }

  Var tanh_(Var a) {
    Mat y = value(a).array().tanh().matrix();
    return node(std::move(y), {a}, [a](Tape& t, Var self) {
      const auto& y = t.value(self).array();
      t.accumulate(a, (t.grad(self).array() * (1.0 - y * y)).matrix());
    });
  }

  /// Natural log; inputs must be positive (clamp first if unsure).
  Var log_(Var a) {
    return node(value(a).array().log().matrix(), {a}, [a](Tape& t, Var self) {
      t.accumulate(a, t.grad(self).cwiseQuotient(t.value(a)));
    });
  }

  /// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
  Var clamp(Var a, double lo, double hi) {
    Mat y = value(a).cwiseMax(lo).cwiseMin(hi);
    return node(std::move(y), {a}, [a, lo, hi](Tape& t, Var self) {
      const auto& x = t.value(a).array();
      const Mat mask = ((x > lo) && (x < hi)).cast<double>();
      t.accumulate(a, t.grad(self).cwiseProduct(mask));
    });
  }

  /// sqrt(max(x, 0)) with a guarded derivative at zero.
  Var sqrt_(Var a) {
    Mat y = value(a).cwiseMax(0.0).cwiseSqrt();
    return node(std::move(y), {a}, [a](Tape& t, Var self) {
      const auto& y = t.value(self).array();
      t.accumulate(a, (t.grad(self).array() * 0.5 / y.max(1e-12)).matrix());
    });
  }

  // ---- linear algebra ------------------------------------------------------

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw NumericError("matmul: inner dims differ");
    return node(value(a) * value(b), {a, b}, [a, b](Tape& t, Var self) {
      const Mat& g = t.grad(self);
      t.accumulate(a, g * t.value(b).transpose());
      t.accumulate(b, t.value(a).transpose() * g);
    });
  }

  Var transpose(Var a) {
    return node(value(a).transpose(), {a}, [a](Tape& t, Var self) {
      t.accumulate(a, t.grad(self).transpose());
    });
  }

  // ---- reductions ----------------------------------------------------------

  Var sum(Var a) {
    Mat y(1, 1);
    y(0, 0) = value(a).sum();
    return node(std::move(y), {a}, [a](Tape& t, Var self) {
      t.accumulate(a, Mat::Constant(t.value(a).rows(), t.value(a).cols(), t.grad(self)(0, 0)));
    });
  }

  /// Column sums: (R x C) -> (1 x C).
  Var colwise_sum(Var a) {
    return node(value(a).colwise().sum(), {a}, [a](Tape& t, Var self) {
      t.accumulate(a, t.grad(self).replicate(t.value(a).rows(), 1));
    });
  }

  // ---- softmax ---------------------------------------------------------------

  Var softmax_rows(Var a) {
    Mat y = value(a);
    for (long r = 0; r < y.rows(); ++r) {
      const double m = y.row(r).maxCoeff();
      y.row(r) = (y.row(r).array() - m).exp();
      y.row(r) /= y.row(r).sum();
    }
    return node(std::move(y), {a}, [a](Tape& t, Var self) {
      const Mat& y = t.value(self);
      const Mat& g = t.grad(self);
      Mat gx(y.rows(), y.cols());
      for (long r = 0; r < y.rows(); ++r) {
        const double dot = g.row(r).dot(y.row(r));
        gx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
      }
      t.accumulate(a, gx);
    });
  }

  /// Softmax over consecutive blocks of `block` rows of a column vector
  /// ((B*block) x 1): one distribution per block.
  Var softmax_col_blocks(Var a, int block) {
    const Mat& x = value(a);
    if (x.cols() != 1 || x.rows() % block != 0)
      throw NumericError("softmax_col_blocks: need (B*block) x 1 input");
    Mat y = x;
    const long B = x.rows() / block;
    for (long b = 0; b < B; ++b) {
      auto seg = y.block(b * block, 0, block, 1);
      const double m = seg.maxCoeff();
      seg = (seg.array() - m).exp();
      seg /= seg.sum();
    }
    return node(std::move(y), {a}, [a, block](Tape& t, Var self) {
      const Mat& y = t.value(self);
      const Mat& g = t.grad(self);
      Mat gx(y.rows(), 1);
      const long B = y.rows() / block;
      for (long b = 0; b < B; ++b) {
        const auto ys = y.block(b * block, 0, block, 1);
        const auto gs = g.block(b * block, 0, block, 1);
        const double dot = (ys.array() * gs.array()).sum();
        gx.block(b * block, 0, block, 1) = ys.cwiseProduct((gs.array() - dot).matrix());
      }
      t.accumulate(a, gx);
    });
  }

  // ---- structural -------------------------------------------------------------

  Var slice_rows(Var a, long r0, long n) {
    if (r0 < 0 || r0 + n > value(a).rows()) throw NumericError("slice_rows: out of range");
    return node(value(a).middleRows(r0, n), {a}, [a, r0, n](Tape& t, Var self) {
      Mat g = Mat::Zero(t.value(a).rows(), t.value(a).cols());
      g.middleRows(r0, n) = t.grad(self);
      t.accumulate(a, g);
    });
  }

  Var slice_cols(Var a, long c0, long n) {
    if (c0 < 0 || c0 + n > value(a).cols()) throw NumericError("slice_cols: out of range");
    return node(value(a).middleCols(c0, n), {a}, [a, c0, n](Tape& t, Var self) {
      Mat g = Mat::Zero(t.value(a).rows(), t.value(a).cols());
      g.middleCols(c0, n) = t.grad(self);
      t.accumulate(a, g);
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericError("concat_rows: empty");
    long rows = 0;
    const long cols = value(parts[0]).cols();
    for (Var p : parts) {
      if (value(p).cols() != cols) throw NumericError("concat_rows: col mismatch");
      rows += value(p).rows();
    }
    Mat y(rows, cols);
    long r = 0;
    for (Var p : parts) {
      y.middleRows(r, value(p).rows()) = value(p);
      r += value(p).rows();
    }
    return node(std::move(y), parts, [parts](Tape& t, Var self) {
      const Mat& g = t.grad(self);
      long r = 0;
      for (Var p : parts) {
        const long n = t.value(p).rows();
        t.accumulate(p, g.middleRows(r, n));
        r += n;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericError("concat_cols: empty");
    long cols = 0;
    const long rows = value(parts[0]).rows();
    for (Var p : parts) {
      if (value(p).rows() != rows) throw NumericError("concat_cols: row mismatch");
      cols += value(p).cols();
    }
    Mat y(rows, cols);
    long c = 0;
    for (Var p : parts) {
      y.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    return node(std::move(y), parts, [parts](Tape& t, Var self) {
      const Mat& g = t.grad(self);
      long c = 0;
      for (Var p : parts) {
        const long n = t.value(p).cols();
        t.accumulate(p, g.middleCols(c, n));
        c += n;
      }
    });
  }

  /// Gather rows of `table` at the given indices (embedding lookup).
  Var rows_gather(Var table, std::vector<int> idx) {
    const Mat& tab = value(table);
    for (int i : idx)
      if (i < 0 || i >= tab.rows())
        throw DataError("rows_gather: index " + std::to_string(i) + " out of range");
    Mat y(static_cast<long>(idx.size()), tab.cols());
    for (size_t k = 0; k < idx.size(); ++k) y.row(k) = tab.row(idx[k]);
    return node(std::move(y), {table}, [table, idx = std::move(idx)](Tape& t, Var self) {
      Mat g = Mat::Zero(t.value(table).rows(), t.value(table).cols());
      const Mat& gs = t.grad(self);
      for (size_t k = 0; k < idx.size(); ++k) g.row(idx[k]) += gs.row(k);
      t.accumulate(table, g);
    });
  }

  /// Row-wise L2 normalization: y_r = x_r / max(||x_r||, eps).
  Var l2_normalize_rows(Var a, double eps) {
    const Mat& x = value(a);
    Mat y(x.rows(), x.cols());
    for (long r = 0; r < x.rows(); ++r) y.row(r) = x.row(r) / std::max(x.row(r).norm(), eps);
    return node(std::move(y), {a}, [a, eps](Tape& t, Var self) {
      const Mat& x = t.value(a);
      const Mat& y = t.value(self);
      const Mat& g = t.grad(self);
      Mat gx(x.rows(), x.cols());
      for (long r = 0; r < x.rows(); ++r) {
        const double n = x.row(r).norm();
        if (n > eps) {
          gx.row(r) = (g.row(r) - y.row(r) * y.row(r).dot(g.row(r))) / n;
        } else {
          gx.row(r) = g.row(r) / eps;
        }
      }
      t.accumulate(a, gx);
    });
  }

  // ---- batch normalization ---------------------------------------------------

  struct BatchNormResult {
    Var y;
    Eigen::RowVectorXd batch_mean;
    Eigen::RowVectorXd batch_var;  // biased
  };

  /// Training-mode batch normalization over rows, per column, with learned
  /// scale gamma and shift beta (both 1 x C). Returns the batch statistics so
  /// the caller can update running estimates.
  BatchNormResult batchnorm_train(Var x, Var gamma, Var beta, double eps) {
    const Mat& X = value(x);
    const long R = X.rows(), C = X.cols();
    if (R < 2) throw NumericError("batchnorm_train: needs at least 2 rows");
    Eigen::RowVectorXd mean = X.colwise().mean();
    Eigen::RowVectorXd var =
        ((X.rowwise() - mean).array().square().colwise().sum() / double(R)).matrix();
    Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt().matrix();
    Mat xhat = (X.rowwise() - mean).array().rowwise() * inv_std.array();
    Mat y = (xhat.array().rowwise() * value(gamma).row(0).array()).matrix();
    y.rowwise() += value(beta).row(0);
    Var out = node(std::move(y), {x, gamma, beta},
                   [x, gamma, beta, xhat, inv_std, R, C](Tape& t, Var self) {
                     const Mat& g = t.grad(self);
                     t.accumulate(beta, g.colwise().sum());
                     t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                     // dxhat = g * gamma (broadcast)
                     Mat dxhat = g.array().rowwise() * t.value(gamma).row(0).array();
                     Eigen::RowVectorXd m1 = dxhat.colwise().mean();
                     Eigen::RowVectorXd m2 = dxhat.cwiseProduct(xhat).colwise().mean();
                     Mat gx = dxhat;
                     gx.rowwise() -= m1;
                     gx -= (xhat.array().rowwise() * m2.array()).matrix();
                     gx = gx.array().rowwise() * inv_std.array();
                     t.accumulate(x, gx);
                   });
    return BatchNormResult{out, mean, var};
  }

  /// Inference-mode normalization with fixed (running) statistics.
  Var batchnorm_eval(Var x, Var gamma, Var beta, const Eigen::RowVectorXd& mean,
                     const Eigen::RowVectorXd& var, double eps) {
    Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt().matrix();
    Var centered = add_rowvec(x, constant((-mean).matrix()));
    Var scale_vec = mul(gamma, constant(Mat(inv_std)));
    return add_rowvec(mul_rowvec(centered, scale_vec), beta);
  }

  // ---- 2D convolution over flattened maps -------------------------------------

  /// 2D convolution, stride 1, dilation 1, square kernel k, symmetric zero
  /// padding. Input holds B samples of an H x W map with C_in channels,
  /// flattened row-major to ((B*H*W) x C_in). Weights: ((k*k*C_in) x C_out),
  /// bias (1 x C_out). Output: ((B*Ho*Wo) x C_out) with Ho = H + 2*pad - k + 1.
  Var conv2d(Var x, Var w, Var b, int B, int H, int W, int k, int pad) {
    const Mat& X = value(x);
    const long Cin = X.cols();
    if (value(w).rows() != static_cast<long>(k) * k * Cin)
      throw NumericError("conv2d: weight rows != k*k*C_in");
    const long Cout = value(w).cols();
    if (value(b).rows() != 1 || value(b).cols() != Cout) throw NumericError("conv2d: bad bias shape");
    if (X.rows() != static_cast<long>(B) * H * W) throw NumericError("conv2d: bad input rows");
    const int Ho = H + 2 * pad - k + 1;
    const int Wo = W + 2 * pad - k + 1;
    if (Ho < 1 || Wo < 1) throw NumericError("conv2d: output collapses to zero size");

    auto im2col = [&](const Mat& src, int sample) {
      Mat M = Mat::Zero(static_cast<long>(Ho) * Wo, static_cast<long>(k) * k * Cin);
      const long base = static_cast<long>(sample) * H * W;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          const long orow = static_cast<long>(oy) * Wo + ox;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox - pad + kx;
              if (ix < 0 || ix >= W) continue;
              M.block(orow, (static_cast<long>(ky) * k + kx) * Cin, 1, Cin) =
                  src.row(base + static_cast<long>(iy) * W + ix);
            }
          }
        }
      }
      return M;
    };

    std::vector<Mat> cols(B);
    Mat y(static_cast<long>(B) * Ho * Wo, Cout);
    for (int s = 0; s < B; ++s) {
      cols[s] = im2col(X, s);
      y.middleRows(static_cast<long>(s) * Ho * Wo, static_cast<long>(Ho) * Wo) =
          cols[s] * value(w);
    }
    y.rowwise() += value(b).row(0);

    return node(std::move(y), {x, w, b},
                [x, w, b, B, H, W, k, pad, Ho, Wo, Cin, Cout, cols = std::move(cols)](
                    Tape& t, Var self) {
                  const Mat& g = t.grad(self);
                  const long cells = static_cast<long>(Ho) * Wo;
                  Mat gw = Mat::Zero(static_cast<long>(k) * k * Cin, Cout);
                  Mat gx = Mat::Zero(static_cast<long>(B) * H * W, Cin);
                  for (int s = 0; s < B; ++s) {
                    const Mat gs = g.middleRows(s * cells, cells);
                    gw += cols[s].transpose() * gs;
                    const Mat gcol = gs * t.value(w).transpose();
                    const long base = static_cast<long>(s) * H * W;
                    for (int oy = 0; oy < Ho; ++oy) {
                      for (int ox = 0; ox < Wo; ++ox) {
                        const long orow = static_cast<long>(oy) * Wo + ox;
                        for (int ky = 0; ky < k; ++ky) {
                          const int iy = oy - pad + ky;
                          if (iy < 0 || iy >= H) continue;
                          for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            gx.row(base + static_cast<long>(iy) * W + ix) +=
                                gcol.block(orow, (static_cast<long>(ky) * k + kx) * Cin, 1, Cin);
                          }
                        }
                      }
                    }
                  }
                  t.accumulate(w, gw);
                  t.accumulate(x, gx);
                  t.accumulate(b, g.colwise().sum());
                });
  }

  /// Per-channel max over masked rows within each block of `rows_per_block`
  /// rows: ((B*R) x C) -> (B x C). mask[r] == 0 rows never win. Gradient is
  /// routed to the argmax row of each (block, channel).
  Var masked_block_max(Var x, int rows_per_block, const std::vector<uint8_t>& mask) {
    const Mat& X = value(x);
    if (static_cast<int>(mask.size()) != rows_per_block)
      throw NumericError("masked_block_max: mask size mismatch");
    if (X.rows() % rows_per_block != 0) throw NumericError("masked_block_max: bad row count");
    const int B = static_cast<int>(X.rows() / rows_per_block);
    const long C = X.cols();
    Mat y(B, C);
    std::vector<int> arg(static_cast<size_t>(B) * C);
    for (int b = 0; b < B; ++b) {
      for (long c = 0; c < C; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        int best_r = -1;
        for (int r = 0; r < rows_per_block; ++r) {
          if (!mask[r]) continue;
          const double v = X(static_cast<long>(b) * rows_per_block + r, c);
          if (v > best) {
            best = v;
            best_r = r;
          }
        }
        if (best_r < 0) throw NumericError("masked_block_max: empty mask");
        y(b, c) = best;
        arg[static_cast<size_t>(b) * C + c] = best_r;
      }
    }
    return node(std::move(y), {x},
                [x, rows_per_block, arg = std::move(arg), B, C](Tape& t, Var self) {
                  const Mat& g = t.grad(self);
                  Mat gx = Mat::Zero(t.value(x).rows(), t.value(x).cols());
                  for (int b = 0; b < B; ++b)
                    for (long c = 0; c < C; ++c)
                      gx(static_cast<long>(b) * rows_per_block + arg[static_cast<size_t>(b) * C + c],
                         c) += g(b, c);
                  t.accumulate(x, gx);
                });
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, Var)> backward;
    bool requires_grad = false;
    bool grad_alloc = false;
  };

  Var push(Mat v, bool req) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, req, false});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  int check(Var x) const {
    if (!x.valid() || x.id >= static_cast<int>(nodes_.size()))
      throw NumericError("invalid tape variable");
    return x.id;
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw NumericError(std::string(op) + ": shape mismatch");
  }

  void require_cols_match(Var x, Var v, const char* op) const {
    if (value(v).rows() != 1 || value(v).cols() != value(x).cols())
      throw NumericError(std::string(op) + ": broadcast vector must be 1 x cols(x)");
  }

  std::deque<Node> nodes_;
};

}  // namespace gmu::ad

#endif  // GMU_AUTODIFF_HPP
