#include "splice/ops.hpp"

#include <cmath>

namespace splice::ad {

namespace {

constexpr Scalar kInvSqrt2 = 0.70710678118654752440f;
constexpr Scalar kInvSqrt2Pi = 0.39894228040143267794f;

void maybe_acc(const Var& p, const Tensor& g) {
  if (p->requires_grad) p->accumulate(g);
}

MatrixRM as_mat(const Var& v) {
  if (v->value.rank() != 2)
    throw std::invalid_argument("matmul operand must be rank-2, got " +
                                v->value.shape_str());
  return v->value.mat();
}

struct ConvDims {
  Index cin, h, w, cout, kh, kw, hout, wout;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, Index stride, Index pad) {
  if (x.rank() != 3 || w.rank() != 4)
    throw std::invalid_argument("conv2d: expected x [C,H,W], w [O,I,kh,kw]");
  ConvDims d;
  d.cin = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.cout = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (w.dim(1) != d.cin)
    throw std::invalid_argument("conv2d: input channels mismatch");
  d.hout = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wout = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.hout < 1 || d.wout < 1)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  return d;
}

// Fills col [Cin*kh*kw, rows*Wout] for output rows [row0, row0+rows).
void im2col_rows(const Tensor& x, const ConvDims& d, Index stride, Index pad,
                 Index row0, Index rows, MatrixRM& col) {
  col.setZero();
  const Scalar* xp = x.data();
  for (Index c = 0; c < d.cin; ++c) {
    const Scalar* xc = xp + c * d.h * d.w;
    for (Index ki = 0; ki < d.kh; ++ki) {
      for (Index kj = 0; kj < d.kw; ++kj) {
        const Index r = (c * d.kh + ki) * d.kw + kj;
        Scalar* dst = col.row(r).data();
        for (Index oy = 0; oy < rows; ++oy) {
          const Index iy = (row0 + oy) * stride - pad + ki;
          if (iy < 0 || iy >= d.h) continue;
          const Scalar* src = xc + iy * d.w;
          Scalar* out = dst + oy * d.wout;
          for (Index ox = 0; ox < d.wout; ++ox) {
            const Index ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < d.w) out[ox] = src[ix];
          }
        }
      }
    }
  }
}

// Scatter-add of a column block back into dx.
void col2im_rows(const MatrixRM& col, const ConvDims& d, Index stride,
                 Index pad, Index row0, Index rows, Tensor& dx) {
  Scalar* xp = dx.data();
  for (Index c = 0; c < d.cin; ++c) {
    Scalar* xc = xp + c * d.h * d.w;
    for (Index ki = 0; ki < d.kh; ++ki) {
      for (Index kj = 0; kj < d.kw; ++kj) {
        const Index r = (c * d.kh + ki) * d.kw + kj;
        const Scalar* src_row = col.row(r).data();
        for (Index oy = 0; oy < rows; ++oy) {
          const Index iy = (row0 + oy) * stride - pad + ki;
          if (iy < 0 || iy >= d.h) continue;
          Scalar* out = xc + iy * d.w;
          const Scalar* src = src_row + oy * d.wout;
          for (Index ox = 0; ox < d.wout; ++ox) {
            const Index ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < d.w) out[ix] += src[ox];
          }
        }
      }
    }
  }
}

Index conv_chunk_rows(const ConvDims& d) {
  // Bound the transient column buffer to ~16 MB.
  const Index budget = 4 * 1024 * 1024;
  Index rows = budget / std::max<Index>(1, d.cin * d.kh * d.kw * d.wout);
  return std::clamp<Index>(rows, 1, d.hout);
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor v(a->value.shape(), a->value.array() + b->value.array());
  return make_op(std::move(v), {a, b}, [a, b](const Tensor& g) {
    maybe_acc(a, g);
    maybe_acc(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "sub");
  Tensor v(a->value.shape(), a->value.array() - b->value.array());
  return make_op(std::move(v), {a, b}, [a, b](const Tensor& g) {
    maybe_acc(a, g);
    if (b->requires_grad)
      b->accumulate(Tensor(g.shape(), -g.array()));
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "mul");
  Tensor v(a->value.shape(), a->value.array() * b->value.array());
  return make_op(std::move(v), {a, b}, [a, b](const Tensor& g) {
    if (a->requires_grad)
      a->accumulate(Tensor(g.shape(), g.array() * b->value.array()));
    if (b->requires_grad)
      b->accumulate(Tensor(g.shape(), g.array() * a->value.array()));
  });
}

Var scale(const Var& a, Scalar c) {
  Tensor v(a->value.shape(), a->value.array() * c);
  return make_op(std::move(v), {a}, [a, c](const Tensor& g) {
    if (a->requires_grad) a->accumulate(Tensor(g.shape(), g.array() * c));
  });
}

Var add_row_bias(const Var& a, const Var& bias) {
  const Index cols = bias->value.size();
  if (a->value.size() % cols != 0)
    throw std::invalid_argument("add_row_bias: width mismatch");
  const Index rows = a->value.size() / cols;
  Tensor v = a->value;
  v.mat(rows, cols).rowwise() += bias->value.vec().transpose();
  return make_op(std::move(v), {a, bias},
                 [a, bias, rows, cols](const Tensor& g) {
                   maybe_acc(a, g);
                   if (bias->requires_grad) {
                     Tensor db({cols});
                     db.vec() = g.mat(rows, cols).colwise().sum().transpose();
                     bias->accumulate(db);
                   }
                 });
}

Var square(const Var& a) {
  Tensor v(a->value.shape(), a->value.array().square());
  return make_op(std::move(v), {a}, [a](const Tensor& g) {
    if (a->requires_grad)
      a->accumulate(Tensor(g.shape(), 2.0f * g.array() * a->value.array()));
  });
}

Var sigmoid(const Var& a) {
  Tensor v(a->value.shape(),
           (1.0f / (1.0f + (-a->value.array()).exp())));
  Var out = make_op(std::move(v), {a}, nullptr);
  if (out->requires_grad) {
    Node* raw = out.get();
    out->backward_fn = [a, raw](const Tensor& g) {
      const auto& y = raw->value.array();
      a->accumulate(Tensor(g.shape(), g.array() * y * (1.0f - y)));
    };
  }
  return out;
}

Var leaky_relu(const Var& a, Scalar slope) {
  const auto& x = a->value.array();
  Tensor v(a->value.shape(), (x > 0).select(x, x * slope));
  return make_op(std::move(v), {a}, [a, slope](const Tensor& g) {
    const auto& x = a->value.array();
    a->accumulate(
        Tensor(g.shape(), (x > 0).select(g.array(), g.array() * slope)));
  });
}

Var gelu(const Var& a) {
  const auto& x = a->value.array();
  Tensor v(a->value.shape(),
           x.unaryExpr([](Scalar t) {
             return Scalar(0.5) * t * (Scalar(1) + std::erf(t * kInvSqrt2));
           }));
  return make_op(std::move(v), {a}, [a](const Tensor& g) {
    const auto& x = a->value.array();
    ArrayX d = x.unaryExpr([](Scalar t) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(t * kInvSqrt2));
      const Scalar pdf = kInvSqrt2Pi * std::exp(Scalar(-0.5) * t * t);
      return cdf + t * pdf;
    });
    a->accumulate(Tensor(g.shape(), g.array() * d));
  });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& a) {
  Tensor v = Tensor::scalar(a->value.array().sum());
  return make_op(std::move(v), {a}, [a](const Tensor& g) {
    a->accumulate(Tensor::full(a->value.shape(), g[0]));
  });
}

Var l2_diff(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "l2_diff");
  ArrayX d = a->value.array() - b->value.array();
  const Scalar norm = std::sqrt(d.square().sum());
  Tensor v = Tensor::scalar(norm);
  return make_op(std::move(v), {a, b},
                 [a, b, d = std::move(d), norm](const Tensor& g) {
                   if (norm <= Scalar(0)) return;
                   ArrayX gd = d * (g[0] / norm);
                   if (a->requires_grad)
                     a->accumulate(Tensor(a->value.shape(), gd));
                   if (b->requires_grad)
                     b->accumulate(Tensor(b->value.shape(), -gd));
                 });
}

Var mean_square_diff(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "mean_square_diff");
  ArrayX d = a->value.array() - b->value.array();
  const Scalar n = static_cast<Scalar>(d.size());
  Tensor v = Tensor::scalar(d.square().sum() / n);
  return make_op(std::move(v), {a, b},
                 [a, b, d = std::move(d), n](const Tensor& g) {
                   ArrayX gd = d * (Scalar(2) * g[0] / n);
                   if (a->requires_grad)
                     a->accumulate(Tensor(a->value.shape(), gd));
                   if (b->requires_grad)
                     b->accumulate(Tensor(b->value.shape(), -gd));
                 });
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  MatrixRM A = as_mat(a), B = as_mat(b);
  MatrixRM C;
  if (!trans_a && !trans_b) C = A * B;
  else if (trans_a && !trans_b) C = A.transpose() * B;
  else if (!trans_a && trans_b) C = A * B.transpose();
  else C = A.transpose() * B.transpose();
  return make_op(Tensor::from_matrix(C), {a, b},
                 [a, b, trans_a, trans_b](const Tensor& gt) {
                   auto g = gt.mat();
                   MatrixRM A = a->value.mat(), B = b->value.mat();
                   if (a->requires_grad) {
                     MatrixRM dA;
                     if (!trans_a && !trans_b) dA = g * B.transpose();
                     else if (trans_a && !trans_b) dA = B * g.transpose();
                     else if (!trans_a && trans_b) dA = g * B;
                     else dA = B.transpose() * g.transpose();
                     a->accumulate(Tensor::from_matrix(dA).reshaped(a->value.shape()));
                   }
                   if (b->requires_grad) {
                     MatrixRM dB;
                     if (!trans_a && !trans_b) dB = A.transpose() * g;
                     else if (trans_a && !trans_b) dB = A * g;
                     else if (!trans_a && trans_b) dB = g.transpose() * A;
                     else dB = g.transpose() * A.transpose();
                     b->accumulate(Tensor::from_matrix(dB).reshaped(b->value.shape()));
                   }
                 });
}

Var softmax_rows(const Var& a) {
  MatrixRM y = a->value.mat();
  for (Index r = 0; r < y.rows(); ++r) {
    auto row = y.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
  }
  Var out = make_op(Tensor::from_matrix(y).reshaped(a->value.shape()), {a},
                    nullptr);
  if (out->requires_grad) {
    Node* raw = out.get();
    out->backward_fn = [a, raw](const Tensor& gt) {
      auto g = gt.mat();
      auto y = raw->value.mat();
      MatrixRM dx(g.rows(), g.cols());
      for (Index r = 0; r < g.rows(); ++r) {
        const Scalar dot = g.row(r).dot(y.row(r));
        dx.row(r) = y.row(r).array() * (g.row(r).array() - dot);
      }
      a->accumulate(Tensor::from_matrix(dx).reshaped(a->value.shape()));
    };
  }
  return out;
}

Var row_l2_normalize(const Var& a) {
  auto x = a->value.mat();
  MatrixRM y(x.rows(), x.cols());
  VectorX norms(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar n = std::max(x.row(r).norm(), Scalar(1e-12));
    norms[r] = n;
    y.row(r) = x.row(r) / n;
  }
  Var out = make_op(Tensor::from_matrix(y).reshaped(a->value.shape()), {a},
                    nullptr);
  if (out->requires_grad) {
    Node* raw = out.get();
    out->backward_fn = [a, raw, norms = std::move(norms)](const Tensor& gt) {
      auto g = gt.mat();
      auto y = raw->value.mat();
      MatrixRM dx(g.rows(), g.cols());
      for (Index r = 0; r < g.rows(); ++r) {
        const Scalar dot = g.row(r).dot(y.row(r));
        dx.row(r) = (g.row(r) - dot * y.row(r)) / norms[r];
      }
      a->accumulate(Tensor::from_matrix(dx).reshaped(a->value.shape()));
    };
  }
  return out;
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    Scalar eps) {
  auto xm = x->value.mat();
  const Index rows = xm.rows(), cols = xm.cols();
  if (gamma->value.size() != cols || beta->value.size() != cols)
    throw std::invalid_argument("layer_norm_rows: affine size mismatch");
  MatrixRM xhat(rows, cols);
  VectorX inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mu = xm.row(r).mean();
    const Scalar var = (xm.row(r).array() - mu).square().mean();
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    xhat.row(r) = (xm.row(r).array() - mu) * is;
  }
  MatrixRM y(rows, cols);
  {
    const auto gv = gamma->value.vec().transpose().array();
    const auto bv = beta->value.vec().transpose().array();
    for (Index r = 0; r < rows; ++r)
      y.row(r) = xhat.row(r).array() * gv + bv;
  }
  return make_op(
      Tensor::from_matrix(y).reshaped(x->value.shape()),
      {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
       rows, cols](const Tensor& gt) {
        auto g = gt.mat();
        if (gamma->requires_grad) {
          Tensor dg({cols});
          dg.vec() = (g.array() * xhat.array()).colwise().sum().transpose();
          gamma->accumulate(dg);
        }
        if (beta->requires_grad) {
          Tensor db({cols});
          db.vec() = g.colwise().sum().transpose();
          beta->accumulate(db);
        }
        if (x->requires_grad) {
          MatrixRM dx(rows, cols);
          const auto gv = gamma->value.vec().transpose().array();
          for (Index r = 0; r < rows; ++r) {
            Eigen::Array<Scalar, 1, Eigen::Dynamic> gy =
                g.row(r).array() * gv;
            const Scalar m1 = gy.mean();
            const Scalar m2 = (gy * xhat.row(r).array()).mean();
            dx.row(r) =
                (gy - m1 - xhat.row(r).array() * m2) * inv_std[r];
          }
          x->accumulate(Tensor::from_matrix(dx).reshaped(x->value.shape()));
        }
      });
}

// ------------------------------------------------------------ slicing/concat

Var slice_rows(const Var& a, Index r0, Index nrows) {
  auto x = a->value.mat();
  if (r0 < 0 || r0 + nrows > x.rows())
    throw std::out_of_range("slice_rows: out of range");
  MatrixRM y = x.middleRows(r0, nrows);
  const Index cols = x.cols();
  return make_op(Tensor::from_matrix(y), {a},
                 [a, r0, nrows, cols](const Tensor& gt) {
                   Tensor dx = Tensor::zeros(a->value.shape());
                   dx.mat().middleRows(r0, nrows) = gt.mat(nrows, cols);
                   a->accumulate(dx);
                 });
}

Var slice_cols(const Var& a, Index c0, Index ncols) {
  auto x = a->value.mat();
  if (c0 < 0 || c0 + ncols > x.cols())
    throw std::out_of_range("slice_cols: out of range");
  MatrixRM y = x.middleCols(c0, ncols);
  const Index rows = x.rows();
  return make_op(Tensor::from_matrix(y), {a},
                 [a, c0, ncols, rows](const Tensor& gt) {
                   Tensor dx = Tensor::zeros(a->value.shape());
                   dx.mat().middleCols(c0, ncols) = gt.mat(rows, ncols);
                   a->accumulate(dx);
                 });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const Index cols = parts[0]->value.mat().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p->value.mat().cols() != cols)
      throw std::invalid_argument("concat_rows: column mismatch");
    rows += p->value.mat().rows();
  }
  MatrixRM y(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    const Index r = p->value.mat().rows();
    y.middleRows(at, r) = p->value.mat();
    at += r;
  }
  return make_op(Tensor::from_matrix(y), parts,
                 [parts, cols](const Tensor& gt) {
                   auto g = gt.mat();
                   Index at = 0;
                   for (const auto& p : parts) {
                     const Index r = p->value.mat().rows();
                     if (p->requires_grad) {
                       MatrixRM slice = g.middleRows(at, r);
                       p->accumulate(
                           Tensor::from_matrix(slice).reshaped(p->value.shape()));
                     }
                     at += r;
                   }
                 });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const Index rows = parts[0]->value.mat().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p->value.mat().rows() != rows)
      throw std::invalid_argument("concat_cols: row mismatch");
    cols += p->value.mat().cols();
  }
  MatrixRM y(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    const Index c = p->value.mat().cols();
    y.middleCols(at, c) = p->value.mat();
    at += c;
  }
  return make_op(Tensor::from_matrix(y), parts,
                 [parts](const Tensor& gt) {
                   auto g = gt.mat();
                   Index at = 0;
                   for (const auto& p : parts) {
                     const Index c = p->value.mat().cols();
                     if (p->requires_grad) {
                       MatrixRM slice = g.middleCols(at, c);
                       p->accumulate(
                           Tensor::from_matrix(slice).reshaped(p->value.shape()));
                     }
                     at += c;
                   }
                 });
}

Var transpose(const Var& a) {
  MatrixRM y = as_mat(a).transpose();
  return make_op(Tensor::from_matrix(y), {a}, [a](const Tensor& gt) {
    MatrixRM dx = gt.mat().transpose();
    a->accumulate(Tensor::from_matrix(dx).reshaped(a->value.shape()));
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor v = a->value.reshaped(shape);
  return make_op(std::move(v), {a}, [a](const Tensor& gt) {
    a->accumulate(gt.reshaped(a->value.shape()));
  });
}

// ------------------------------------------------------------------ image ops

Var conv2d(const Var& x, const Var& w, const Var& b, Index stride, Index pad) {
  const ConvDims d = conv_dims(x->value, w->value, stride, pad);
  if (b && b->value.size() != d.cout)
    throw std::invalid_argument("conv2d: bias size mismatch");
  auto wm = w->value.mat(d.cout, d.cin * d.kh * d.kw);
  Tensor y({d.cout, d.hout, d.wout});
  MatMap ym = y.mat(d.cout, d.hout * d.wout);
  const Index chunk = conv_chunk_rows(d);
  for (Index r0 = 0; r0 < d.hout; r0 += chunk) {
    const Index rows = std::min(chunk, d.hout - r0);
    MatrixRM block(d.cin * d.kh * d.kw, rows * d.wout);
    im2col_rows(x->value, d, stride, pad, r0, rows, block);
    ym.middleCols(r0 * d.wout, rows * d.wout).noalias() = wm * block;
  }
  if (b)
    for (Index c = 0; c < d.cout; ++c) ym.row(c).array() += b->value[c];

  std::vector<Var> parents = {x, w};
  if (b) parents.push_back(b);
  return make_op(
      std::move(y), std::move(parents),
      [x, w, b, d, stride, pad](const Tensor& gt) {
        auto g = gt.mat(d.cout, d.hout * d.wout);
        const Index chunk = conv_chunk_rows(d);
        Tensor dw_t, dx_t;
        const bool need_dw = w->requires_grad;
        const bool need_dx = x->requires_grad;
        if (need_dw) dw_t = Tensor::zeros(w->value.shape());
        if (need_dx) dx_t = Tensor::zeros(x->value.shape());
        MatMap dwm = need_dw ? dw_t.mat(d.cout, d.cin * d.kh * d.kw)
                             : MatMap(nullptr, 0, 0);
        auto wm = w->value.mat(d.cout, d.cin * d.kh * d.kw);
        for (Index r0 = 0; r0 < d.hout; r0 += chunk) {
          const Index rows = std::min(chunk, d.hout - r0);
          auto gblock = g.middleCols(r0 * d.wout, rows * d.wout);
          if (need_dw) {
            MatrixRM col(d.cin * d.kh * d.kw, rows * d.wout);
            im2col_rows(x->value, d, stride, pad, r0, rows, col);
            dwm.noalias() += gblock * col.transpose();
          }
          if (need_dx) {
            MatrixRM dcol = wm.transpose() * gblock;
            col2im_rows(dcol, d, stride, pad, r0, rows, dx_t);
          }
        }
        if (need_dw) w->accumulate(dw_t);
        if (need_dx) x->accumulate(dx_t);
        if (b && b->requires_grad) {
          Tensor db({d.cout});
          db.vec() = g.rowwise().sum();
          b->accumulate(db);
        }
      });
}

Var scale_channels(const Var& x, const Var& s) {
  if (x->value.rank() != 3 || s->value.size() != x->value.dim(0))
    throw std::invalid_argument("scale_channels: shape mismatch");
  const Index c = x->value.dim(0);
  const Index hw = x->value.dim(1) * x->value.dim(2);
  Tensor y = x->value;
  MatMap ym = y.mat(c, hw);
  for (Index i = 0; i < c; ++i) ym.row(i) *= s->value[i];
  return make_op(std::move(y), {x, s}, [x, s, c, hw](const Tensor& gt) {
    auto g = gt.mat(c, hw);
    if (x->requires_grad) {
      Tensor dx = gt;
      MatMap dxm = dx.mat(c, hw);
      for (Index i = 0; i < c; ++i) dxm.row(i) *= s->value[i];
      dx = dx.reshaped(x->value.shape());
      x->accumulate(dx);
    }
    if (s->requires_grad) {
      Tensor ds({c});
      auto xm = x->value.mat(c, hw);
      for (Index i = 0; i < c; ++i) ds[i] = g.row(i).dot(xm.row(i));
      s->accumulate(ds);
    }
  });
}

Var add_channel_bias(const Var& x, const Var& b) {
  if (x->value.rank() != 3 || b->value.size() != x->value.dim(0))
    throw std::invalid_argument("add_channel_bias: shape mismatch");
  const Index c = x->value.dim(0);
  const Index hw = x->value.dim(1) * x->value.dim(2);
  Tensor y = x->value;
  MatMap ym = y.mat(c, hw);
  for (Index i = 0; i < c; ++i) ym.row(i).array() += b->value[i];
  return make_op(std::move(y), {x, b}, [x, b, c, hw](const Tensor& gt) {
    maybe_acc(x, gt);
    if (b->requires_grad) {
      Tensor db({c});
      db.vec() = gt.mat(c, hw).rowwise().sum();
      b->accumulate(db);
    }
  });
}

Var demod_coeff(const Var& w, const Var& s, Scalar eps) {
  if (w->value.rank() != 4 || s->value.size() != w->value.dim(1))
    throw std::invalid_argument("demod_coeff: shape mismatch");
  const Index o = w->value.dim(0), in = w->value.dim(1);
  const Index kk = w->value.dim(2) * w->value.dim(3);
  auto wm = w->value.mat(o, in * kk);
  Tensor d({o});
  // q[o] = sum_i s_i^2 * sum_k w^2
  MatrixRM w2row(o, in);  // per (o,i) sum over kernel of w^2
  for (Index i = 0; i < o; ++i)
    for (Index j = 0; j < in; ++j)
      w2row(i, j) = wm.row(i).segment(j * kk, kk).squaredNorm();
  ArrayX s2 = s->value.array().square();
  for (Index i = 0; i < o; ++i)
    d[i] = Scalar(1) /
           std::sqrt((w2row.row(i).transpose().array() * s2).sum() + eps);
  return make_op(
      std::move(d), {w, s},
      [w, s, eps, w2row = std::move(w2row), o, in, kk](const Tensor& gt) {
        // d = q^{-1/2}  =>  dL/dq_o = -0.5 * g_o * d_o^3
        ArrayX s2 = s->value.array().square();
        ArrayX d(o);
        for (Index i = 0; i < o; ++i)
          d[i] = Scalar(1) /
                 std::sqrt((w2row.row(i).transpose().array() * s2).sum() + eps);
        ArrayX dq(o);
        for (Index i = 0; i < o; ++i)
          dq[i] = Scalar(-0.5) * gt[i] * d[i] * d[i] * d[i];
        if (w->requires_grad) {
          Tensor dw = Tensor::zeros(w->value.shape());
          MatMap dwm = dw.mat(o, in * kk);
          auto wm = w->value.mat(o, in * kk);
          for (Index i = 0; i < o; ++i)
            for (Index j = 0; j < in; ++j)
              dwm.row(i).segment(j * kk, kk) =
                  wm.row(i).segment(j * kk, kk) * (2 * dq[i] * s2[j]);
          w->accumulate(dw);
        }
        if (s->requires_grad) {
          Tensor ds({in});
          for (Index j = 0; j < in; ++j) {
            Scalar acc = 0;
            for (Index i = 0; i < o; ++i) acc += dq[i] * w2row(i, j);
            ds[j] = 2 * s->value[j] * acc;
          }
          s->accumulate(ds);
        }
      });
}

Var upsample_nearest2x(const Var& x) {
  if (x->value.rank() != 3)
    throw std::invalid_argument("upsample_nearest2x: expected [C,H,W]");
  const Index c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensor y({c, 2 * h, 2 * w});
  const Scalar* xp = x->value.data();
  Scalar* yp = y.data();
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < 2 * h; ++i) {
      const Scalar* src = xp + (ch * h + i / 2) * w;
      Scalar* dst = yp + (ch * 2 * h + i) * 2 * w;
      for (Index j = 0; j < 2 * w; ++j) dst[j] = src[j / 2];
    }
  return make_op(std::move(y), {x}, [x, c, h, w](const Tensor& gt) {
    Tensor dx = Tensor::zeros(x->value.shape());
    const Scalar* gp = gt.data();
    Scalar* dp = dx.data();
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < 2 * h; ++i) {
        const Scalar* src = gp + (ch * 2 * h + i) * 2 * w;
        Scalar* dst = dp + (ch * h + i / 2) * w;
        for (Index j = 0; j < 2 * w; ++j) dst[j / 2] += src[j];
      }
    x->accumulate(dx);
  });
}

Var avg_pool2d(const Var& x, Index window) {
  if (x->value.rank() != 3)
    throw std::invalid_argument("avg_pool2d: expected [C,H,W]");
  const Index c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (h % window != 0 || w % window != 0)
    throw std::invalid_argument("avg_pool2d: window must divide spatial dims");
  const Index ho = h / window, wo = w / window;
  const Scalar inv = Scalar(1) / Scalar(window * window);
  Tensor y({c, ho, wo});
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        Scalar acc = 0;
        for (Index di = 0; di < window; ++di)
          for (Index dj = 0; dj < window; ++dj)
            acc += x->value[(ch * h + i * window + di) * w + j * window + dj];
        y[(ch * ho + i) * wo + j] = acc * inv;
      }
  return make_op(std::move(y), {x}, [x, c, h, w, ho, wo, window,
                                     inv](const Tensor& gt) {
    Tensor dx = Tensor::zeros(x->value.shape());
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < ho; ++i)
        for (Index j = 0; j < wo; ++j) {
          const Scalar g = gt[(ch * ho + i) * wo + j] * inv;
          for (Index di = 0; di < window; ++di)
            for (Index dj = 0; dj < window; ++dj)
              dx[(ch * h + i * window + di) * w + j * window + dj] += g;
        }
    x->accumulate(dx);
  });
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Scalar eps,
                 Tensor* saved_mean, Tensor* saved_var) {
  if (x->value.rank() != 3)
    throw std::invalid_argument("batch_norm2d: expected [C,H,W]");
  const Index c = x->value.dim(0);
  const Index hw = x->value.dim(1) * x->value.dim(2);
  auto xm = x->value.mat(c, hw);
  VectorX mu(c), inv_std(c), var(c);
  MatrixRM xhat(c, hw);
  for (Index i = 0; i < c; ++i) {
    mu[i] = xm.row(i).mean();
    var[i] = (xm.row(i).array() - mu[i]).square().mean();
    inv_std[i] = Scalar(1) / std::sqrt(var[i] + eps);
    xhat.row(i) = (xm.row(i).array() - mu[i]) * inv_std[i];
  }
  if (saved_mean) *saved_mean = Tensor::from_vector(mu);
  if (saved_var) *saved_var = Tensor::from_vector(var);
  Tensor y({x->value.dim(0), x->value.dim(1), x->value.dim(2)});
  MatMap ym = y.mat(c, hw);
  for (Index i = 0; i < c; ++i)
    ym.row(i) = (xhat.row(i).array() * gamma->value[i]) + beta->value[i];
  return make_op(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), c,
       hw](const Tensor& gt) {
        auto g = gt.mat(c, hw);
        if (gamma->requires_grad) {
          Tensor dg({c});
          for (Index i = 0; i < c; ++i)
            dg[i] = (g.row(i).array() * xhat.row(i).array()).sum();
          gamma->accumulate(dg);
        }
        if (beta->requires_grad) {
          Tensor db({c});
          db.vec() = g.rowwise().sum();
          beta->accumulate(db);
        }
        if (x->requires_grad) {
          Tensor dx({x->value.dim(0), x->value.dim(1), x->value.dim(2)});
          MatMap dxm = dx.mat(c, hw);
          for (Index i = 0; i < c; ++i) {
            const auto gi = g.row(i).array();
            const Scalar m1 = gi.mean();
            const Scalar m2 = (gi * xhat.row(i).array()).mean();
            dxm.row(i) = (gi - m1 - xhat.row(i).array() * m2) *
                         (gamma->value[i] * inv_std[i]);
          }
          x->accumulate(dx);
        }
      });
}

Var resize_linear(const Var& x, const MatrixRM& row_w, const MatrixRM& col_w) {
  if (x->value.rank() != 3)
    throw std::invalid_argument("resize_linear: expected [C,H,W]");
  const Index c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (row_w.cols() != h || col_w.cols() != w)
    throw std::invalid_argument("resize_linear: weight shape mismatch");
  const Index ho = row_w.rows(), wo = col_w.rows();
  Tensor y({c, ho, wo});
  for (Index ch = 0; ch < c; ++ch) {
    ConstMatMap xc(x->value.data() + ch * h * w, h, w);
    MatMap yc(y.data() + ch * ho * wo, ho, wo);
    yc.noalias() = row_w * xc * col_w.transpose();
  }
  return make_op(std::move(y), {x},
                 [x, row_w, col_w, c, h, w, ho, wo](const Tensor& gt) {
                   Tensor dx({c, h, w});
                   for (Index ch = 0; ch < c; ++ch) {
                     ConstMatMap gc(gt.data() + ch * ho * wo, ho, wo);
                     MatMap dc(dx.data() + ch * h * w, h, w);
                     dc.noalias() = row_w.transpose() * gc * col_w;
                   }
                   x->accumulate(dx);
                 });
}

MatrixRM bicubic_matrix(Index out_size, Index in_size) {
  auto kernel = [](Scalar t) -> Scalar {
    constexpr Scalar a = -0.5f;
    t = std::abs(t);
    if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
    if (t < 2) return (((t - 5) * t + 8) * t - 4) * a;
    return 0;
  };
  MatrixRM m = MatrixRM::Zero(out_size, in_size);
  const Scalar scale = static_cast<Scalar>(in_size) / out_size;
  for (Index i = 0; i < out_size; ++i) {
    const Scalar src = (i + Scalar(0.5)) * scale - Scalar(0.5);
    const Index base = static_cast<Index>(std::floor(src));
    for (Index k = base - 1; k <= base + 2; ++k) {
      const Scalar wgt = kernel(src - k);
      const Index idx = std::clamp<Index>(k, 0, in_size - 1);
      m(i, idx) += wgt;
    }
  }
  return m;
}

}  // namespace splice::ad
