#include "cvsa/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cvsa {

namespace {

void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace

NodeId GradientTape::push(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tensor& GradientTape::grad_buf(NodeId id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.value.shape());
    n.grad_alloc = true;
  }
  return n.grad;
}

const Tensor& GradientTape::grad(NodeId id) const {
  if (!nodes_[id].grad_alloc) {
    throw std::logic_error("gradient requested for a node that received none");
  }
  return nodes_[id].grad;
}

void GradientTape::backward(NodeId root, double seed) {
  expect(root < nodes_.size(), "backward: bad root id");
  expect(nodes_[root].value.size() == 1, "backward: root must be scalar, got shape " +
                                             shape_str(nodes_[root].value.shape()));
  grad_buf(root)[0] += seed;
  run_backward();
}

void GradientTape::accumulate_seed(NodeId node, const Tensor& cotangent) {
  expect(node < nodes_.size(), "accumulate_seed: bad node id");
  expect(nodes_[node].value.same_shape(cotangent),
         "accumulate_seed: cotangent shape " + shape_str(cotangent.shape()) +
             " does not match node shape " + shape_str(nodes_[node].value.shape()));
  Tensor& g = grad_buf(node);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += cotangent[i];
}

void GradientTape::run_backward() {
  for (NodeId i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_alloc && n.backward) n.backward(*this, i);
  }
}

// ---- helpers for op construction ----

namespace {

bool wants(GradientTape& t, std::initializer_list<NodeId> parents) {
  for (NodeId p : parents) {
    if (t.requires_grad(p)) return true;
  }
  return false;
}

NodeId emit(GradientTape& t, Tensor value, std::initializer_list<NodeId> parents,
            GradientTape::BackwardFn fn) {
  const bool req = wants(t, parents);
  NodeId id = t.push(std::move(value), req);
  if (req) t.set_backward(id, std::move(fn));
  return id;
}

}  // namespace

// ---- matmul family ----

NodeId matmul(GradientTape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  expect(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
         "matmul: incompatible shapes " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * bv.at(p, j);
    }
  }
  return emit(t, std::move(out), {a, b}, [a, b, m, k, n](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buf(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g.at(i, j);
          for (std::size_t p = 0; p < k; ++p) ga.at(i, p) += gij * bv.at(p, j);
        }
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buf(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av.at(i, p);
          for (std::size_t j = 0; j < n; ++j) gb.at(p, j) += aip * g.at(i, j);
        }
    }
  });
}

NodeId matmul_nt(GradientTape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  expect(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
         "matmul_nt: incompatible shapes " + shape_str(av.shape()) + " x " +
             shape_str(bv.shape()) + "ᵀ");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av.at(i, p) * bv.at(j, p);
      out.at(i, j) = s;
    }
  return emit(t, std::move(out), {a, b}, [a, b, m, k, n](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buf(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g.at(i, j);
          for (std::size_t p = 0; p < k; ++p) ga.at(i, p) += gij * bv.at(j, p);
        }
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buf(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g.at(i, j);
          for (std::size_t p = 0; p < k; ++p) gb.at(j, p) += gij * av.at(i, p);
        }
    }
  });
}

// ---- elementwise primitives ----

NodeId sigmoid(GradientTape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  return emit(t, std::move(out), {x}, [x](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    const double sign = tp.faults().flip_sigmoid_grad ? -1.0 : 1.0;
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sign * g[i] * y[i] * (1.0 - y[i]);
  });
}

NodeId relu(GradientTape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  std::uint64_t sig = 0x9e37;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const bool active = xv[i] > 0.0;
    out[i] = active ? xv[i] : 0.0;
    sig = (sig ^ (active ? i * 2 + 1 : i * 2)) * 0x100000001b3ULL;
  }
  t.note_selection(sig);
  return emit(t, std::move(out), {x}, [x](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

NodeId scale(GradientTape& t, NodeId x, double c) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  return emit(t, std::move(out), {x}, [x, c](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

namespace {

template <class Fwd, class BwdA, class BwdB>
NodeId binary_elementwise(GradientTape& t, NodeId a, NodeId b, const char* name, Fwd fwd,
                          BwdA bwd_a, BwdB bwd_b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  expect_same_shape(av, bv, name);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return emit(t, std::move(out), {a, b}, [a, b, bwd_a, bwd_b](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd_a(av[i], bv[i]);
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buf(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * bwd_b(av[i], bv[i]);
    }
  });
}

}  // namespace

NodeId add(GradientTape& t, NodeId a, NodeId b) {
  return binary_elementwise(
      t, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

NodeId sub(GradientTape& t, NodeId a, NodeId b) {
  return binary_elementwise(
      t, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

NodeId mul(GradientTape& t, NodeId a, NodeId b) {
  return binary_elementwise(
      t, a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

NodeId divide(GradientTape& t, NodeId a, NodeId b) {
  const Tensor& bv = t.value(b);
  for (std::size_t i = 0; i < bv.size(); ++i) {
    expect(bv[i] != 0.0, "divide: zero denominator");
  }
  return binary_elementwise(
      t, a, b, "divide", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

NodeId sqrt_elem(GradientTape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    expect(xv[i] > 0.0, "sqrt_elem: input must be strictly positive");
    out[i] = std::sqrt(xv[i]);
  }
  return emit(t, std::move(out), {x}, [x](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * 0.5 / y[i];
  });
}

NodeId add_rowwise(GradientTape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  expect(av.rank() == 2 && bv.rank() == 1 && av.dim(1) == bv.dim(0),
         "add_rowwise: incompatible shapes " + shape_str(av.shape()) + " + " +
             shape_str(bv.shape()));
  const std::size_t n = av.dim(0), f = av.dim(1);
  Tensor out({n, f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out.at(i, j) = av.at(i, j) + bv[j];
  return emit(t, std::move(out), {a, b}, [a, b, n, f](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buf(b);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) gb[j] += g.at(i, j);
    }
  });
}

// ---- reductions / selections ----

RowMax reduce_max_rows(GradientTape& t, NodeId a) {
  const Tensor& av = t.value(a);
  expect(av.rank() == 2, "reduce_max_rows: input must be 2-D, got " + shape_str(av.shape()));
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out({m});
  std::vector<std::size_t> arg(m, 0);
  std::uint64_t sig = 0x7a11;
  for (std::size_t i = 0; i < m; ++i) {
    double best = av.at(i, 0);
    std::size_t best_j = 0;
    bool tie = false;
    for (std::size_t j = 1; j < n; ++j) {
      const double v = av.at(i, j);
      if (v > best) {
        best = v;
        best_j = j;
        tie = false;
      } else if (v == best) {
        tie = true;
      }
    }
    if (tie) t.note_exact_max_tie();
    out[i] = best;
    arg[i] = best_j;
    sig = (sig ^ (i * 131071 + best_j)) * 0x100000001b3ULL;
  }
  t.note_selection(sig);
  NodeId values = emit(t, std::move(out), {a}, [a, arg](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad_buf(a);
    const std::size_t n = tp.value(a).dim(1);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i * n + arg[i]] += g[i];
  });
  return RowMax{values, std::move(arg)};
}

// ---- bilinear resize ----

namespace {

struct Taps {
  std::size_t i0, i1;
  double frac;
};

inline Taps axis_taps(std::size_t dst, std::size_t in_size, std::size_t out_size) {
  double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in_size) /
                   static_cast<double>(out_size) -
               0.5;
  if (src < 0.0) src = 0.0;
  const double last = static_cast<double>(in_size - 1);
  if (src > last) src = last;
  std::size_t i0 = static_cast<std::size_t>(src);
  if (i0 > in_size - 1) i0 = in_size - 1;
  const std::size_t i1 = std::min(i0 + 1, in_size - 1);
  return Taps{i0, i1, src - static_cast<double>(i0)};
}

}  // namespace

void bilinear_resample_raw(const double* src, std::size_t h, std::size_t w, double* dst,
                           std::size_t out_h, std::size_t out_w, std::size_t channels) {
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const Taps ty = axis_taps(oy, h, out_h);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const Taps tx = axis_taps(ox, w, out_w);
      const double w00 = (1.0 - ty.frac) * (1.0 - tx.frac);
      const double w01 = (1.0 - ty.frac) * tx.frac;
      const double w10 = ty.frac * (1.0 - tx.frac);
      const double w11 = ty.frac * tx.frac;
      for (std::size_t c = 0; c < channels; ++c) {
        dst[(oy * out_w + ox) * channels + c] =
            w00 * src[(ty.i0 * w + tx.i0) * channels + c] +
            w01 * src[(ty.i0 * w + tx.i1) * channels + c] +
            w10 * src[(ty.i1 * w + tx.i0) * channels + c] +
            w11 * src[(ty.i1 * w + tx.i1) * channels + c];
      }
    }
  }
}

NodeId bilinear_resize(GradientTape& t, NodeId x, std::size_t out_h, std::size_t out_w) {
  const Tensor& xv = t.value(x);
  expect(xv.rank() == 2, "bilinear_resize: input must be 2-D, got " + shape_str(xv.shape()));
  expect(out_h >= 1 && out_w >= 1, "bilinear_resize: output dims must be >= 1");
  const std::size_t h = xv.dim(0), w = xv.dim(1);
  Tensor out({out_h, out_w});
  bilinear_resample_raw(xv.data().data(), h, w, out.data().data(), out_h, out_w, 1);
  return emit(t, std::move(out), {x}, [x, h, w, out_h, out_w](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Taps ty = axis_taps(oy, h, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Taps tx = axis_taps(ox, w, out_w);
        const double go = g.at(oy, ox);
        gx.at(ty.i0, tx.i0) += go * (1.0 - ty.frac) * (1.0 - tx.frac);
        gx.at(ty.i0, tx.i1) += go * (1.0 - ty.frac) * tx.frac;
        gx.at(ty.i1, tx.i0) += go * ty.frac * (1.0 - tx.frac);
        gx.at(ty.i1, tx.i1) += go * ty.frac * tx.frac;
      }
    }
  });
}

// ---- convolutions ----

NodeId conv1x1(GradientTape& t, NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  expect(xv.rank() == 3 && wv.rank() == 2 && bv.rank() == 1,
         "conv1x1: expected x[H×W×Cin], w[Cin×Cout], b[Cout]");
  expect(xv.dim(2) == wv.dim(0) && wv.dim(1) == bv.dim(0),
         "conv1x1: channel mismatch " + shape_str(xv.shape()) + " vs " + shape_str(wv.shape()) +
             " vs " + shape_str(bv.shape()));
  const std::size_t pixels = xv.dim(0) * xv.dim(1);
  const std::size_t ci = wv.dim(0), co = wv.dim(1);
  Tensor out({xv.dim(0), xv.dim(1), co});
  const auto xd = xv.data();
  auto od = out.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t j = 0; j < co; ++j) od[p * co + j] = bv[j];
    for (std::size_t i = 0; i < ci; ++i) {
      const double xi = xd[p * ci + i];
      for (std::size_t j = 0; j < co; ++j) od[p * co + j] += xi * wv.at(i, j);
    }
  }
  return emit(t, std::move(out), {x, w, b},
              [x, w, b, pixels, ci, co](GradientTape& tp, NodeId self) {
                const Tensor& g = tp.grad(self);
                const Tensor& xv = tp.value(x);
                const Tensor& wv = tp.value(w);
                const auto gd = g.data();
                if (tp.requires_grad(x)) {
                  Tensor& gx = tp.grad_buf(x);
                  for (std::size_t p = 0; p < pixels; ++p)
                    for (std::size_t i = 0; i < ci; ++i) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < co; ++j) s += gd[p * co + j] * wv.at(i, j);
                      gx.data()[p * ci + i] += s;
                    }
                }
                if (tp.requires_grad(w)) {
                  Tensor& gw = tp.grad_buf(w);
                  for (std::size_t p = 0; p < pixels; ++p)
                    for (std::size_t i = 0; i < ci; ++i) {
                      const double xi = xv.data()[p * ci + i];
                      for (std::size_t j = 0; j < co; ++j) gw.at(i, j) += xi * gd[p * co + j];
                    }
                }
                if (tp.requires_grad(b)) {
                  Tensor& gb = tp.grad_buf(b);
                  for (std::size_t p = 0; p < pixels; ++p)
                    for (std::size_t j = 0; j < co; ++j) gb[j] += gd[p * co + j];
                }
              });
}

NodeId conv2d(GradientTape& t, NodeId x, NodeId w, NodeId b, std::size_t stride,
              std::size_t pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  expect(xv.rank() == 3 && wv.rank() == 4 && bv.rank() == 1,
         "conv2d: expected x[H×W×Cin], w[kh×kw×Cin×Cout], b[Cout]");
  expect(xv.dim(2) == wv.dim(2) && wv.dim(3) == bv.dim(0),
         "conv2d: channel mismatch " + shape_str(xv.shape()) + " vs " + shape_str(wv.shape()));
  const std::size_t h = xv.dim(0), wd = xv.dim(1), ci = xv.dim(2);
  const std::size_t kh = wv.dim(0), kw = wv.dim(1), co = wv.dim(3);
  expect(stride >= 1, "conv2d: stride must be >= 1");
  expect(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel larger than padded input");
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({oh, ow, co});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* op = &out.at(oy, ox, 0);
      for (std::size_t j = 0; j < co; ++j) op[j] = bv[j];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                  static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
          const double* xp =
              xv.data().data() + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * ci;
          const double* wp = wv.data().data() + (ky * kw + kx) * ci * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const double xi = xp[i];
            for (std::size_t j = 0; j < co; ++j) op[j] += xi * wp[i * co + j];
          }
        }
      }
    }
  }
  return emit(t, std::move(out), {x, w, b},
              [x, w, b, h, wd, ci, kh, kw, co, oh, ow, stride, pad](GradientTape& tp, NodeId self) {
                const Tensor& g = tp.grad(self);
                const Tensor& xv = tp.value(x);
                const Tensor& wv = tp.value(w);
                const bool want_x = tp.requires_grad(x);
                const bool want_w = tp.requires_grad(w);
                const bool want_b = tp.requires_grad(b);
                Tensor* gx = want_x ? &tp.grad_buf(x) : nullptr;
                Tensor* gw = want_w ? &tp.grad_buf(w) : nullptr;
                Tensor* gb = want_b ? &tp.grad_buf(b) : nullptr;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double* gp = g.data().data() + (oy * ow + ox) * co;
                    if (want_b) {
                      for (std::size_t j = 0; j < co; ++j) (*gb)[j] += gp[j];
                    }
                    if (!want_x && !want_w) continue;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                static_cast<std::ptrdiff_t>(pad);
                      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                      for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                        const std::size_t uy = static_cast<std::size_t>(iy);
                        const std::size_t ux = static_cast<std::size_t>(ix);
                        const double* xp = xv.data().data() + (uy * wd + ux) * ci;
                        const double* wp = wv.data().data() + (ky * kw + kx) * ci * co;
                        if (want_x) {
                          double* gxp = &gx->at(uy, ux, 0);
                          for (std::size_t i = 0; i < ci; ++i) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < co; ++j) s += gp[j] * wp[i * co + j];
                            gxp[i] += s;
                          }
                        }
                        if (want_w) {
                          double* gwp = &gw->data()[(ky * kw + kx) * ci * co];
                          for (std::size_t i = 0; i < ci; ++i) {
                            const double xi = xp[i];
                            for (std::size_t j = 0; j < co; ++j) gwp[i * co + j] += xi * gp[j];
                          }
                        }
                      }
                    }
                  }
                }
              });
}

// ---- batch normalization ----

NodeId batchnorm(GradientTape& t, NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  expect(xv.rank() == 2, "batchnorm: input must be 2-D [N×F], got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), f = xv.dim(1);
  expect(n >= 2, "batchnorm: training mode requires N >= 2 rows, got N = " + std::to_string(n));
  expect(gv.rank() == 1 && gv.dim(0) == f && bv.rank() == 1 && bv.dim(0) == f,
         "batchnorm: gamma/beta must be [F] = [" + std::to_string(f) + "]");
  std::vector<double> mu(f, 0.0), inv_std(f, 0.0);
  for (std::size_t j = 0; j < f; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += xv.at(i, j);
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = xv.at(i, j) - m;
      var += d * d;
    }
    var /= static_cast<double>(n);
    mu[j] = m;
    inv_std[j] = 1.0 / std::sqrt(var + eps);
  }
  Tensor out({n, f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j)
      out.at(i, j) = gv[j] * (xv.at(i, j) - mu[j]) * inv_std[j] + bv[j];
  return emit(t, std::move(out), {x, gamma, beta},
              [x, gamma, beta, n, f, mu, inv_std](GradientTape& tp, NodeId self) {
                const Tensor& g = tp.grad(self);
                const Tensor& xv = tp.value(x);
                const Tensor& gv = tp.value(gamma);
                const double dn = static_cast<double>(n);
                if (tp.requires_grad(gamma)) {
                  Tensor& gg = tp.grad_buf(gamma);
                  for (std::size_t j = 0; j < f; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < n; ++i)
                      s += g.at(i, j) * (xv.at(i, j) - mu[j]) * inv_std[j];
                    gg[j] += s;
                  }
                }
                if (tp.requires_grad(beta)) {
                  Tensor& gb = tp.grad_buf(beta);
                  for (std::size_t j = 0; j < f; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < n; ++i) s += g.at(i, j);
                    gb[j] += s;
                  }
                }
                if (tp.requires_grad(x)) {
                  Tensor& gx = tp.grad_buf(x);
                  for (std::size_t j = 0; j < f; ++j) {
                    // dxhat = g * gamma; reduce the two sums once per feature
                    double sum_dxhat = 0.0, sum_dxhat_xc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                      const double dxh = g.at(i, j) * gv[j];
                      sum_dxhat += dxh;
                      sum_dxhat_xc += dxh * (xv.at(i, j) - mu[j]);
                    }
                    const double is = inv_std[j];
                    for (std::size_t i = 0; i < n; ++i) {
                      const double dxh = g.at(i, j) * gv[j];
                      const double xc = xv.at(i, j) - mu[j];
                      gx.at(i, j) += is * (dxh - sum_dxhat / dn - xc * is * is * sum_dxhat_xc / dn);
                    }
                  }
                }
              });
}

// ---- structure ops ----

NodeId stop_gradient(GradientTape& t, NodeId x) {
  Tensor v = t.value(x);
  if (StopGradLog* log = t.sg_log()) {
    if (log->mode == StopGradLog::Mode::record) {
      log->values.push_back(v);
    } else {
      if (log->cursor >= log->values.size()) {
        throw std::logic_error("stop_gradient replay log exhausted");
      }
      const Tensor& rec = log->values[log->cursor++];
      if (!rec.same_shape(v)) {
        throw std::logic_error("stop_gradient replay shape mismatch");
      }
      v = rec;
    }
  }
  return t.constant(std::move(v));
}

NodeId reshape(GradientTape& t, NodeId x, std::vector<std::size_t> new_shape) {
  const Tensor& xv = t.value(x);
  std::size_t prod = 1;
  for (std::size_t d : new_shape) prod *= d;
  expect(prod == xv.size(), "reshape: size mismatch " + shape_str(xv.shape()) + " -> " +
                                shape_str(new_shape));
  Tensor out(new_shape, std::vector<double>(xv.data().begin(), xv.data().end()));
  return emit(t, std::move(out), {x}, [x](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

NodeId mean_all(GradientTape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  const double inv = 1.0 / static_cast<double>(xv.size());
  return emit(t, Tensor::scalar(s * inv), {x}, [x, inv](GradientTape& tp, NodeId self) {
    const double g = tp.grad(self)[0];
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * inv;
  });
}

NodeId sum_all(GradientTape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  return emit(t, Tensor::scalar(s), {x}, [x](GradientTape& tp, NodeId self) {
    const double g = tp.grad(self)[0];
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

NodeId mean_rows(GradientTape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  expect(xv.rank() == 2, "mean_rows: input must be 2-D, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), f = xv.dim(1);
  Tensor out({f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[j] += xv.at(i, j);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < f; ++j) out[j] *= inv;
  return emit(t, std::move(out), {x}, [x, n, f, inv](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad_buf(x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) gx.at(i, j) += g[j] * inv;
  });
}

NodeId dot(GradientTape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  expect(av.size() == bv.size(), "dot: size mismatch " + shape_str(av.shape()) + " vs " +
                                     shape_str(bv.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return emit(t, Tensor::scalar(s), {a, b}, [a, b](GradientTape& tp, NodeId self) {
    const double g = tp.grad(self)[0];
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buf(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
    }
  });
}

NodeId concat_rows(GradientTape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  expect(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
         "concat_rows: incompatible shapes " + shape_str(av.shape()) + " / " +
             shape_str(bv.shape()));
  const std::size_t ma = av.dim(0), mb = bv.dim(0), f = av.dim(1);
  Tensor out({ma + mb, f});
  std::copy(av.data().begin(), av.data().end(), out.data().begin());
  std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + ma * f);
  return emit(t, std::move(out), {a, b}, [a, b, ma, mb, f](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buf(a);
      for (std::size_t i = 0; i < ma * f; ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buf(b);
      for (std::size_t i = 0; i < mb * f; ++i) gb[i] += g[ma * f + i];
    }
  });
}

NodeId take_row(GradientTape& t, NodeId a, std::size_t row) {
  const Tensor& av = t.value(a);
  expect(av.rank() == 2, "take_row: input must be 2-D, got " + shape_str(av.shape()));
  expect(row < av.dim(0), "take_row: row " + std::to_string(row) + " out of range");
  const std::size_t f = av.dim(1);
  Tensor out({f});
  for (std::size_t j = 0; j < f; ++j) out[j] = av.at(row, j);
  return emit(t, std::move(out), {a}, [a, row, f](GradientTape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad_buf(a);
    for (std::size_t j = 0; j < f; ++j) ga.at(row, j) += g[j];
  });
}

}  // namespace cvsa
