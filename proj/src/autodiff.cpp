#include "vmap/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace vmap::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var Tape::make(Tensor val, std::function<void(Node&)> backfn, bool needs_grad) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->backfn = std::move(backfn);
  n->needs_grad = needs_grad;
  order_.push_back(n);
  return n;
}

Var Tape::constant(Tensor val) { return make(std::move(val), nullptr, false); }

Var Tape::leaf(Parameter& p) {
  Parameter* pp = &p;
  return make(p.value, [pp](Node& n) {
    for (int64_t i = 0; i < n.grad.size(); ++i) pp->grad[static_cast<size_t>(i)] += n.grad[static_cast<size_t>(i)];
  });
}

void Tape::backward(const Var& loss) {
  if (loss->val.size() != 1) throw std::logic_error("backward: loss must be scalar");
  for (auto& n : order_) {
    n->grad = Tensor(n->val.shape);
  }
  loss->grad.v[0] = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (n.backfn && n.needs_grad) n.backfn(n);
  }
}

namespace {
bool track(const Var& v) { return v->needs_grad; }
}  // namespace

Var add(Tape& t, const Var& a, const Var& b) {
  if (!a->val.same_shape(b->val)) throw std::logic_error("add: shape mismatch");
  Tensor out = a->val;
  for (int64_t i = 0; i < out.size(); ++i) out[static_cast<size_t>(i)] += b->val[static_cast<size_t>(i)];
  Var pa = a, pb = b;
  return t.make(std::move(out), [pa, pb](Node& n) {
    for (int64_t i = 0; i < n.grad.size(); ++i) {
      size_t k = static_cast<size_t>(i);
      if (pa->needs_grad) pa->grad[k] += n.grad[k];
      if (pb->needs_grad) pb->grad[k] += n.grad[k];
    }
  });
}

Var scale(Tape& t, const Var& a, double s) {
  Tensor out = a->val;
  for (auto& x : out.v) x *= s;
  Var pa = a;
  return t.make(std::move(out), [pa, s](Node& n) {
    if (!pa->needs_grad) return;
    for (int64_t i = 0; i < n.grad.size(); ++i)
      pa->grad[static_cast<size_t>(i)] += s * n.grad[static_cast<size_t>(i)];
  });
}

Var silu(Tape& t, const Var& a) {
  Tensor out = a->val;
  for (auto& x : out.v) {
    double sg = 1.0 / (1.0 + std::exp(-x));
    x = x * sg;
  }
  Var pa = a;
  return t.make(std::move(out), [pa](Node& n) {
    if (!pa->needs_grad) return;
    for (int64_t i = 0; i < n.grad.size(); ++i) {
      size_t k = static_cast<size_t>(i);
      double x = pa->val[k];
      double sg = 1.0 / (1.0 + std::exp(-x));
      n.grad[k] *= sg * (1.0 + x * (1.0 - sg));
      pa->grad[k] += n.grad[k];
    }
  });
}

Var sigmoid(Tape& t, const Var& a) {
  Tensor out = a->val;
  for (auto& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
  Var pa = a;
  auto vals = std::make_shared<Tensor>(out);
  return t.make(std::move(out), [pa, vals](Node& n) {
    if (!pa->needs_grad) return;
    for (int64_t i = 0; i < n.grad.size(); ++i) {
      size_t k = static_cast<size_t>(i);
      double y = (*vals)[k];
      pa->grad[k] += n.grad[k] * y * (1.0 - y);
    }
  });
}

Var concat_channels(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw std::logic_error("concat_channels: empty input");
  int h = xs[0]->val.dim(1), w = xs[0]->val.dim(2);
  int ctot = 0;
  for (const Var& x : xs) {
    if (x->val.shape.size() != 3 || x->val.dim(1) != h || x->val.dim(2) != w)
      throw std::logic_error("concat_channels: shape mismatch");
    ctot += x->val.dim(0);
  }
  Tensor out({ctot, h, w});
  size_t off = 0;
  for (const Var& x : xs) {
    std::copy(x->val.v.begin(), x->val.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(off));
    off += x->val.v.size();
  }
  std::vector<Var> ps = xs;
  return t.make(std::move(out), [ps](Node& n) {
    size_t off = 0;
    for (const Var& x : ps) {
      if (x->needs_grad)
        for (size_t i = 0; i < x->val.v.size(); ++i) x->grad[i] += n.grad[off + i];
      off += x->val.v.size();
    }
  });
}

namespace {

void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow, RowMat& col) {
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  col.resize(c * kh * kw, oh * ow);
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        int row = (ci * kh + ki) * kw + kj;
        for (int oi = 0; oi < oh; ++oi) {
          int yi = oi * stride + ki - pad;
          const bool yok = yi >= 0 && yi < h;
          for (int oj = 0; oj < ow; ++oj) {
            int xj = oj * stride + kj - pad;
            double v = 0.0;
            if (yok && xj >= 0 && xj < w) v = x.v[(static_cast<size_t>(ci) * h + yi) * w + xj];
            col(row, oi * ow + oj) = v;
          }
        }
      }
    }
  }
}

void col2im_accum(const RowMat& col, int c, int h, int w, int kh, int kw, int stride, int pad,
                  int oh, int ow, Tensor& gx) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        int row = (ci * kh + ki) * kw + kj;
        for (int oi = 0; oi < oh; ++oi) {
          int yi = oi * stride + ki - pad;
          if (yi < 0 || yi >= h) continue;
          for (int oj = 0; oj < ow; ++oj) {
            int xj = oj * stride + kj - pad;
            if (xj < 0 || xj >= w) continue;
            gx.v[(static_cast<size_t>(ci) * h + yi) * w + xj] += col(row, oi * ow + oj);
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Tape& t, const Var& x, const Var& w, const Var& b, int stride, int pad) {
  int ci = x->val.dim(0), h = x->val.dim(1), ww = x->val.dim(2);
  int co = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
  if (w->val.dim(1) != ci) throw std::logic_error("conv2d: channel mismatch");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (ww + 2 * pad - kw) / stride + 1;

  auto col = std::make_shared<RowMat>();
  im2col(x->val, kh, kw, stride, pad, oh, ow, *col);

  Tensor out({co, oh, ow});
  CMapMat wm(w->val.v.data(), co, ci * kh * kw);
  MapMat om(out.v.data(), co, oh * ow);
  om.noalias() = wm * (*col);
  for (int c = 0; c < co; ++c) om.row(c).array() += b->val[static_cast<size_t>(c)];

  Var px = x, pw = w, pb = b;
  return t.make(std::move(out), [px, pw, pb, col, stride, pad, ci, h, ww, co, kh, kw, oh, ow](Node& n) {
    CMapMat gy(n.grad.v.data(), co, oh * ow);
    if (pw->needs_grad) {
      MapMat gw(pw->grad.v.data(), co, ci * kh * kw);
      gw.noalias() += gy * col->transpose();
    }
    if (pb->needs_grad) {
      for (int c = 0; c < co; ++c) pb->grad[static_cast<size_t>(c)] += gy.row(c).sum();
    }
    if (px->needs_grad) {
      CMapMat wm(pw->val.v.data(), co, ci * kh * kw);
      RowMat gcol = wm.transpose() * gy;
      col2im_accum(gcol, ci, h, ww, kh, kw, stride, pad, oh, ow, px->grad);
    }
  });
}

Var bilinear_resize(Tape& t, const Var& x, int out_h, int out_w) {
  int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  if (out_h == h && out_w == w) {
    Var px = x;
    return t.make(x->val, [px](Node& n) {
      if (!px->needs_grad) return;
      for (size_t i = 0; i < n.grad.v.size(); ++i) px->grad[i] += n.grad[i];
    });
  }
  Tensor out({c, out_h, out_w});
  double sy = out_h > 1 ? double(h - 1) / (out_h - 1) : 0.0;
  double sx = out_w > 1 ? double(w - 1) / (out_w - 1) : 0.0;
  struct Tap {
    int i0, j0;
    double fy, fx;
  };
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(out_h) * out_w);
  for (int oi = 0; oi < out_h; ++oi) {
    double yy = oi * sy;
    int i0 = std::min(static_cast<int>(yy), h - 2 < 0 ? 0 : h - 2);
    double fy = yy - i0;
    for (int oj = 0; oj < out_w; ++oj) {
      double xx = oj * sx;
      int j0 = std::min(static_cast<int>(xx), w - 2 < 0 ? 0 : w - 2);
      double fx = xx - j0;
      (*taps)[static_cast<size_t>(oi) * out_w + oj] = {i0, j0, fy, fx};
    }
  }
  for (int ci = 0; ci < c; ++ci) {
    const double* src = &x->val.v[static_cast<size_t>(ci) * h * w];
    double* dst = &out.v[static_cast<size_t>(ci) * out_h * out_w];
    for (size_t k = 0; k < taps->size(); ++k) {
      const Tap& tp = (*taps)[k];
      int i1 = std::min(tp.i0 + 1, h - 1), j1 = std::min(tp.j0 + 1, w - 1);
      double a = src[tp.i0 * w + tp.j0], bb = src[tp.i0 * w + j1];
      double cc = src[i1 * w + tp.j0], d = src[i1 * w + j1];
      dst[k] = (1 - tp.fy) * ((1 - tp.fx) * a + tp.fx * bb) + tp.fy * ((1 - tp.fx) * cc + tp.fx * d);
    }
  }
  Var px = x;
  return t.make(std::move(out), [px, taps, c, h, w, out_h, out_w](Node& n) {
    if (!px->needs_grad) return;
    for (int ci = 0; ci < c; ++ci) {
      double* gsrc = &px->grad.v[static_cast<size_t>(ci) * h * w];
      const double* gdst = &n.grad.v[static_cast<size_t>(ci) * out_h * out_w];
      for (size_t k = 0; k < taps->size(); ++k) {
        const Tap& tp = (*taps)[k];
        int i1 = std::min(tp.i0 + 1, h - 1), j1 = std::min(tp.j0 + 1, w - 1);
        double g = gdst[k];
        gsrc[tp.i0 * w + tp.j0] += (1 - tp.fy) * (1 - tp.fx) * g;
        gsrc[tp.i0 * w + j1] += (1 - tp.fy) * tp.fx * g;
        gsrc[i1 * w + tp.j0] += tp.fy * (1 - tp.fx) * g;
        gsrc[i1 * w + j1] += tp.fy * tp.fx * g;
      }
    }
  });
}

Var grid_sample_affine(Tape& t, const Var& x, const Var& theta) {
  int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  if (theta->val.shape != std::vector<int>{2, 3})
    throw std::logic_error("grid_sample_affine: theta must be 2x3");
  const double* th = theta->val.v.data();
  Tensor out({c, h, w});

  // Forward pass; backward recomputes the sampling geometry from saved theta.
  auto theta_copy = std::make_shared<Tensor>(theta->val);
  for (int i = 0; i < h; ++i) {
    double yt = h > 1 ? double(i) / (h - 1) : 0.0;
    for (int j = 0; j < w; ++j) {
      double xt = w > 1 ? double(j) / (w - 1) : 0.0;
      double xs = th[0] * xt + th[1] * yt + th[2];
      double ys = th[3] * xt + th[4] * yt + th[5];
      double xp = xs * (w - 1), yp = ys * (h - 1);
      int j0 = static_cast<int>(std::floor(xp)), i0 = static_cast<int>(std::floor(yp));
      double fx = xp - j0, fy = yp - i0;
      auto sample = [&](int ii, int jj, int ci) -> double {
        if (ii < 0 || ii >= h || jj < 0 || jj >= w) return 0.0;
        return x->val.v[(static_cast<size_t>(ci) * h + ii) * w + jj];
      };
      for (int ci = 0; ci < c; ++ci) {
        double v = (1 - fy) * ((1 - fx) * sample(i0, j0, ci) + fx * sample(i0, j0 + 1, ci)) +
                   fy * ((1 - fx) * sample(i0 + 1, j0, ci) + fx * sample(i0 + 1, j0 + 1, ci));
        out.v[(static_cast<size_t>(ci) * h + i) * w + j] = v;
      }
    }
  }

  Var px = x, pth = theta;
  return t.make(std::move(out), [px, pth, theta_copy, c, h, w](Node& n) {
    const double* th = theta_copy->v.data();
    auto sample = [&](int ii, int jj, int ci) -> double {
      if (ii < 0 || ii >= h || jj < 0 || jj >= w) return 0.0;
      return px->val.v[(static_cast<size_t>(ci) * h + ii) * w + jj];
    };
    auto add_gx = [&](int ii, int jj, int ci, double g) {
      if (ii < 0 || ii >= h || jj < 0 || jj >= w) return;
      px->grad.v[(static_cast<size_t>(ci) * h + ii) * w + jj] += g;
    };
    for (int i = 0; i < h; ++i) {
      double yt = h > 1 ? double(i) / (h - 1) : 0.0;
      for (int j = 0; j < w; ++j) {
        double xt = w > 1 ? double(j) / (w - 1) : 0.0;
        double xs = th[0] * xt + th[1] * yt + th[2];
        double ys = th[3] * xt + th[4] * yt + th[5];
        double xp = xs * (w - 1), yp = ys * (h - 1);
        int j0 = static_cast<int>(std::floor(xp)), i0 = static_cast<int>(std::floor(yp));
        double fx = xp - j0, fy = yp - i0;
        double dxp = 0.0, dyp = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          double g = n.grad.v[(static_cast<size_t>(ci) * h + i) * w + j];
          if (g == 0.0) continue;
          double a = sample(i0, j0, ci), b = sample(i0, j0 + 1, ci);
          double cc = sample(i0 + 1, j0, ci), d = sample(i0 + 1, j0 + 1, ci);
          if (px->needs_grad) {
            add_gx(i0, j0, ci, g * (1 - fy) * (1 - fx));
            add_gx(i0, j0 + 1, ci, g * (1 - fy) * fx);
            add_gx(i0 + 1, j0, ci, g * fy * (1 - fx));
            add_gx(i0 + 1, j0 + 1, ci, g * fy * fx);
          }
          dxp += g * ((1 - fy) * (b - a) + fy * (d - cc));
          dyp += g * ((1 - fx) * (cc - a) + fx * (d - b));
        }
        if (pth->needs_grad && (dxp != 0.0 || dyp != 0.0)) {
          double dxs = dxp * (w - 1), dys = dyp * (h - 1);
          pth->grad[0] += dxs * xt;
          pth->grad[1] += dxs * yt;
          pth->grad[2] += dxs;
          pth->grad[3] += dys * xt;
          pth->grad[4] += dys * yt;
          pth->grad[5] += dys;
        }
      }
    }
  });
}

Var global_avg_pool(Tape& t, const Var& x) {
  int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  Tensor out({c});
  double inv = 1.0 / (h * w);
  for (int ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (int k = 0; k < h * w; ++k) s += x->val.v[static_cast<size_t>(ci) * h * w + k];
    out[static_cast<size_t>(ci)] = s * inv;
  }
  Var px = x;
  return t.make(std::move(out), [px, c, h, w, inv](Node& n) {
    if (!px->needs_grad) return;
    for (int ci = 0; ci < c; ++ci) {
      double g = n.grad[static_cast<size_t>(ci)] * inv;
      for (int k = 0; k < h * w; ++k) px->grad.v[static_cast<size_t>(ci) * h * w + k] += g;
    }
  });
}

Var flatten_cells(Tape& t, const Var& x) {
  int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  Tensor out({h * w, c});
  for (int ci = 0; ci < c; ++ci)
    for (int k = 0; k < h * w; ++k)
      out.v[static_cast<size_t>(k) * c + ci] = x->val.v[static_cast<size_t>(ci) * h * w + k];
  Var px = x;
  return t.make(std::move(out), [px, c, h, w](Node& n) {
    if (!px->needs_grad) return;
    for (int ci = 0; ci < c; ++ci)
      for (int k = 0; k < h * w; ++k)
        px->grad.v[static_cast<size_t>(ci) * h * w + k] += n.grad.v[static_cast<size_t>(k) * c + ci];
  });
}

Var linear(Tape& t, const Var& x, const Var& w, const Var& b) {
  int n = x->val.dim(0), d = x->val.dim(1), dout = w->val.dim(1);
  if (w->val.dim(0) != d || b->val.dim(0) != dout) throw std::logic_error("linear: shape mismatch");
  Tensor out({n, dout});
  CMapMat xm(x->val.v.data(), n, d);
  CMapMat wm(w->val.v.data(), d, dout);
  MapMat om(out.v.data(), n, dout);
  om.noalias() = xm * wm;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dout; ++j) out.v[static_cast<size_t>(i) * dout + j] += b->val[static_cast<size_t>(j)];
  Var px = x, pw = w, pb = b;
  return t.make(std::move(out), [px, pw, pb, n, d, dout](Node& ng) {
    CMapMat gy(ng.grad.v.data(), n, dout);
    if (pw->needs_grad) {
      CMapMat xm(px->val.v.data(), n, d);
      MapMat gw(pw->grad.v.data(), d, dout);
      gw.noalias() += xm.transpose() * gy;
    }
    if (pb->needs_grad)
      for (int j = 0; j < dout; ++j) pb->grad[static_cast<size_t>(j)] += gy.col(j).sum();
    if (px->needs_grad) {
      CMapMat wm(pw->val.v.data(), d, dout);
      MapMat gx(px->grad.v.data(), n, d);
      gx.noalias() += gy * wm.transpose();
    }
  });
}

Var matmul(Tape& t, const Var& a, const Var& b) {
  int n = a->val.dim(0), k = a->val.dim(1), m = b->val.dim(1);
  if (b->val.dim(0) != k) throw std::logic_error("matmul: shape mismatch");
  Tensor out({n, m});
  CMapMat am(a->val.v.data(), n, k);
  CMapMat bm(b->val.v.data(), k, m);
  MapMat om(out.v.data(), n, m);
  om.noalias() = am * bm;
  Var pa = a, pb = b;
  return t.make(std::move(out), [pa, pb, n, k, m](Node& ng) {
    CMapMat gy(ng.grad.v.data(), n, m);
    if (pa->needs_grad) {
      CMapMat bm(pb->val.v.data(), k, m);
      MapMat ga(pa->grad.v.data(), n, k);
      ga.noalias() += gy * bm.transpose();
    }
    if (pb->needs_grad) {
      CMapMat am(pa->val.v.data(), n, k);
      MapMat gb(pb->grad.v.data(), k, m);
      gb.noalias() += am.transpose() * gy;
    }
  });
}

Var matmul_nt(Tape& t, const Var& a, const Var& b) {
  int n = a->val.dim(0), d = a->val.dim(1), m = b->val.dim(0);
  if (b->val.dim(1) != d) throw std::logic_error("matmul_nt: shape mismatch");
  Tensor out({n, m});
  CMapMat am(a->val.v.data(), n, d);
  CMapMat bm(b->val.v.data(), m, d);
  MapMat om(out.v.data(), n, m);
  om.noalias() = am * bm.transpose();
  Var pa = a, pb = b;
  return t.make(std::move(out), [pa, pb, n, d, m](Node& ng) {
    CMapMat gy(ng.grad.v.data(), n, m);
    if (pa->needs_grad) {
      CMapMat bm(pb->val.v.data(), m, d);
      MapMat ga(pa->grad.v.data(), n, d);
      ga.noalias() += gy * bm;
    }
    if (pb->needs_grad) {
      CMapMat am(pa->val.v.data(), n, d);
      MapMat gb(pb->grad.v.data(), m, d);
      gb.noalias() += gy.transpose() * am;
    }
  });
}

Var softmax_rows(Tape& t, const Var& x) {
  int n = x->val.dim(0), m = x->val.dim(1);
  Tensor out = x->val;
  for (int i = 0; i < n; ++i) {
    double* row = &out.v[static_cast<size_t>(i) * m];
    double mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int j = 0; j < m; ++j) row[j] /= s;
  }
  auto vals = std::make_shared<Tensor>(out);
  Var px = x;
  return t.make(std::move(out), [px, vals, n, m](Node& ng) {
    if (!px->needs_grad) return;
    for (int i = 0; i < n; ++i) {
      const double* y = &vals->v[static_cast<size_t>(i) * m];
      const double* g = &ng.grad.v[static_cast<size_t>(i) * m];
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += y[j] * g[j];
      double* gx = &px->grad.v[static_cast<size_t>(i) * m];
      for (int j = 0; j < m; ++j) gx[j] += y[j] * (g[j] - dot);
    }
  });
}

Var layernorm_rows(Tape& t, const Var& x, const Var& gain, const Var& bias) {
  int n = x->val.dim(0), d = x->val.dim(1);
  constexpr double eps = 1e-5;
  Tensor out({n, d});
  auto mu = std::make_shared<std::vector<double>>(n);
  auto istd = std::make_shared<std::vector<double>>(n);
  for (int i = 0; i < n; ++i) {
    const double* row = &x->val.v[static_cast<size_t>(i) * d];
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += row[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    (*mu)[static_cast<size_t>(i)] = m;
    (*istd)[static_cast<size_t>(i)] = is;
    double* o = &out.v[static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j)
      o[j] = (row[j] - m) * is * gain->val[static_cast<size_t>(j)] + bias->val[static_cast<size_t>(j)];
  }
  Var px = x, pg = gain, pb = bias;
  return t.make(std::move(out), [px, pg, pb, mu, istd, n, d](Node& ng) {
    for (int i = 0; i < n; ++i) {
      const double* row = &px->val.v[static_cast<size_t>(i) * d];
      const double* g = &ng.grad.v[static_cast<size_t>(i) * d];
      double m = (*mu)[static_cast<size_t>(i)], is = (*istd)[static_cast<size_t>(i)];
      double sum_gh = 0.0, sum_ghx = 0.0;
      for (int j = 0; j < d; ++j) {
        double xh = (row[j] - m) * is;
        double gh = g[j] * pg->val[static_cast<size_t>(j)];
        sum_gh += gh;
        sum_ghx += gh * xh;
        if (pg->needs_grad) pg->grad[static_cast<size_t>(j)] += g[j] * xh;
        if (pb->needs_grad) pb->grad[static_cast<size_t>(j)] += g[j];
      }
      if (px->needs_grad) {
        double* gx = &px->grad.v[static_cast<size_t>(i) * d];
        for (int j = 0; j < d; ++j) {
          double xh = (row[j] - m) * is;
          double gh = g[j] * pg->val[static_cast<size_t>(j)];
          gx[j] += is * (gh - sum_gh / d - xh * sum_ghx / d);
        }
      }
    }
  });
}

Var add_row_broadcast(Tape& t, const Var& x, const Var& r) {
  int n = x->val.dim(0), d = x->val.dim(1);
  if (r->val.dim(0) != d) throw std::logic_error("add_row_broadcast: shape mismatch");
  Tensor out = x->val;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.v[static_cast<size_t>(i) * d + j] += r->val[static_cast<size_t>(j)];
  Var px = x, pr = r;
  return t.make(std::move(out), [px, pr, n, d](Node& ng) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        double g = ng.grad.v[static_cast<size_t>(i) * d + j];
        if (px->needs_grad) px->grad.v[static_cast<size_t>(i) * d + j] += g;
        if (pr->needs_grad) pr->grad[static_cast<size_t>(j)] += g;
      }
  });
}

Var query_grid(Tape& t, const Var& inst, const Var& pt) {
  int m = inst->val.dim(0), d = inst->val.dim(1), p = pt->val.dim(0);
  if (pt->val.dim(1) != d) throw std::logic_error("query_grid: dim mismatch");
  Tensor out({m * p, d});
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < p; ++k)
      for (int j = 0; j < d; ++j)
        out.v[(static_cast<size_t>(i) * p + k) * d + j] =
            inst->val.v[static_cast<size_t>(i) * d + j] + pt->val.v[static_cast<size_t>(k) * d + j];
  Var pi = inst, pp = pt;
  return t.make(std::move(out), [pi, pp, m, p, d](Node& ng) {
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < p; ++k)
        for (int j = 0; j < d; ++j) {
          double g = ng.grad.v[(static_cast<size_t>(i) * p + k) * d + j];
          if (pi->needs_grad) pi->grad.v[static_cast<size_t>(i) * d + j] += g;
          if (pp->needs_grad) pp->grad.v[static_cast<size_t>(k) * d + j] += g;
        }
  });
}

Var group_mean_rows(Tape& t, const Var& x, int groups, int group_size) {
  int d = x->val.dim(1);
  if (x->val.dim(0) != groups * group_size) throw std::logic_error("group_mean_rows: shape mismatch");
  Tensor out({groups, d});
  double inv = 1.0 / group_size;
  for (int i = 0; i < groups; ++i)
    for (int k = 0; k < group_size; ++k)
      for (int j = 0; j < d; ++j)
        out.v[static_cast<size_t>(i) * d + j] +=
            x->val.v[(static_cast<size_t>(i) * group_size + k) * d + j] * inv;
  Var px = x;
  return t.make(std::move(out), [px, groups, group_size, d, inv](Node& ng) {
    if (!px->needs_grad) return;
    for (int i = 0; i < groups; ++i)
      for (int k = 0; k < group_size; ++k)
        for (int j = 0; j < d; ++j)
          px->grad.v[(static_cast<size_t>(i) * group_size + k) * d + j] +=
              ng.grad.v[static_cast<size_t>(i) * d + j] * inv;
  });
}

}  // namespace vmap::ad
