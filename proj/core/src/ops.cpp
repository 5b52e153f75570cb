#include "stprog/ops.hpp"

#include <cmath>

#include "op_common.hpp"

namespace stprog {

using detail::graph_of;
using detail::require;
using detail::require_same_shape;
using detail::same_graph;

double gelu_exact(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

double gelu_exact_grad(double x) {
  const double phi_cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
  const double phi_pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;
  return phi_cdf + x * phi_pdf;
}

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  Graph& g = same_graph("add", a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const NodeId ia = a.id(), ib = b.id();
  return g.make("add", std::move(out), {ia, ib}, [ia, ib](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    if (gg.needs_grad(ia)) {
      Tensor& da = gg.grad_buf(ia);
      for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
    }
    if (gg.needs_grad(ib)) {
      Tensor& db = gg.grad_buf(ib);
      for (std::size_t i = 0; i < go.size(); ++i) db[i] += go[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Graph& g = same_graph("sub", a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const NodeId ia = a.id(), ib = b.id();
  return g.make("sub", std::move(out), {ia, ib}, [ia, ib](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    if (gg.needs_grad(ia)) {
      Tensor& da = gg.grad_buf(ia);
      for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
    }
    if (gg.needs_grad(ib)) {
      Tensor& db = gg.grad_buf(ib);
      for (std::size_t i = 0; i < go.size(); ++i) db[i] -= go[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Graph& g = same_graph("mul", a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const NodeId ia = a.id(), ib = b.id();
  return g.make("mul", std::move(out), {ia, ib}, [ia, ib](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    const Tensor& av = gg.value(ia);
    const Tensor& bv2 = gg.value(ib);
    if (gg.needs_grad(ia)) {
      Tensor& da = gg.grad_buf(ia);
      for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i] * bv2[i];
    }
    if (gg.needs_grad(ib)) {
      Tensor& db = gg.grad_buf(ib);
      for (std::size_t i = 0; i < go.size(); ++i) db[i] += go[i] * av[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Graph& g = graph_of("scale", a);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  const NodeId ia = a.id();
  return g.make("scale", std::move(out), {ia}, [ia, c](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ia)) return;
    const Tensor& go = gg.grad_of(self);
    Tensor& da = gg.grad_buf(ia);
    for (std::size_t i = 0; i < go.size(); ++i) da[i] += c * go[i];
  });
}

Var add_scalar(const Var& a, double c) {
  Graph& g = graph_of("add_scalar", a);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
  const NodeId ia = a.id();
  return g.make("add_scalar", std::move(out), {ia}, [ia](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ia)) return;
    const Tensor& go = gg.grad_of(self);
    Tensor& da = gg.grad_buf(ia);
    for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  Graph& g = same_graph("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2, "matmul",
          "expects rank-2 operands, got " + av.shape_str() + " and " + bv.shape_str());
  require(av.extent(1) == bv.extent(0), "matmul",
          "inner dimensions differ: " + av.shape_str() + " vs " + bv.shape_str());
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  const NodeId ia = a.id(), ib = b.id();
  return g.make("matmul", std::move(out), {ia, ib},
                [ia, ib, m, k, n](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    const Tensor& av2 = gg.value(ia);
    const Tensor& bv2 = gg.value(ib);
    if (gg.needs_grad(ia)) {
      Tensor& da = gg.grad_buf(ia);  // dA += G B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv2[p * n + j];
          da[i * k + p] += s;
        }
    }
    if (gg.needs_grad(ib)) {
      Tensor& db = gg.grad_buf(ib);  // dB += A^T G
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i) s += av2[i * k + p] * go[i * n + j];
          db[p * n + j] += s;
        }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Graph& g = same_graph("linear", x, w);
  same_graph("linear", x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require(wv.rank() == 2, "linear", "weight must be rank 2, got " + wv.shape_str());
  const std::size_t out_dim = wv.extent(0), in_dim = wv.extent(1);
  require(bv.rank() == 1 && bv.extent(0) == out_dim, "linear",
          "bias shape " + bv.shape_str() + " does not match weight " + wv.shape_str());
  const bool batched = xv.rank() == 2;
  require(batched ? xv.extent(1) == in_dim : (xv.rank() == 1 && xv.extent(0) == in_dim),
          "linear", "input " + xv.shape_str() + " does not match weight " + wv.shape_str());
  const std::size_t rows = batched ? xv.extent(0) : 1;

  Tensor out(batched ? std::vector<std::size_t>{rows, out_dim}
                     : std::vector<std::size_t>{out_dim});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in_dim;
    double* yr = out.data() + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wrow = wv.data() + o * in_dim;
      double s = bv[o];
      for (std::size_t i = 0; i < in_dim; ++i) s += wrow[i] * xr[i];
      yr[o] = s;
    }
  }
  const NodeId ix = x.id(), iw = w.id(), ibias = b.id();
  return g.make("linear", std::move(out), {ix, iw, ibias},
                [ix, iw, ibias, rows, in_dim, out_dim](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    const Tensor& xv2 = gg.value(ix);
    const Tensor& wv2 = gg.value(iw);
    if (gg.needs_grad(ix)) {
      Tensor& dx = gg.grad_buf(ix);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = go.data() + r * out_dim;
        double* dxr = dx.data() + r * in_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double gv = gr[o];
          if (gv == 0.0) continue;
          const double* wrow = wv2.data() + o * in_dim;
          for (std::size_t i = 0; i < in_dim; ++i) dxr[i] += gv * wrow[i];
        }
      }
    }
    if (gg.needs_grad(iw)) {
      Tensor& dw = gg.grad_buf(iw);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = go.data() + r * out_dim;
        const double* xr = xv2.data() + r * in_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double gv = gr[o];
          if (gv == 0.0) continue;
          double* dwrow = dw.data() + o * in_dim;
          for (std::size_t i = 0; i < in_dim; ++i) dwrow[i] += gv * xr[i];
        }
      }
    }
    if (gg.needs_grad(ibias)) {
      Tensor& db = gg.grad_buf(ibias);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) db[o] += go[r * out_dim + o];
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no operands");
  Graph& g = graph_of("concat", parts[0]);
  const Tensor& first = parts[0].value();
  require(axis < first.rank(), "concat",
          "axis " + std::to_string(axis) + " out of range for " + first.shape_str());
  std::vector<std::size_t> shape = first.shape();
  std::size_t total_axis = 0;
  for (const Var& p : parts) {
    same_graph("concat", parts[0], p);
    const Tensor& t = p.value();
    require(t.rank() == first.rank(), "concat",
            "rank mismatch " + t.shape_str() + " vs " + first.shape_str());
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d == axis) continue;
      require(t.shape()[d] == shape[d], "concat",
              "shape mismatch " + t.shape_str() + " vs " + first.shape_str());
    }
    total_axis += t.shape()[axis];
  }
  shape[axis] = total_axis;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

  Tensor out(shape);
  std::vector<NodeId> ids;
  std::vector<std::size_t> extents;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    const std::size_t e = t.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = t.data() + o * e * inner;
      double* dst = out.data() + (o * total_axis + offset) * inner;
      for (std::size_t i = 0; i < e * inner; ++i) dst[i] = src[i];
    }
    ids.push_back(p.id());
    extents.push_back(e);
    offset += e;
  }
  return g.make("concat", std::move(out), ids,
                [ids, extents, outer, inner, total_axis](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t e = extents[k];
      if (gg.needs_grad(ids[k])) {
        Tensor& d = gg.grad_buf(ids[k]);
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = go.data() + (o * total_axis + off) * inner;
          double* dst = d.data() + o * e * inner;
          for (std::size_t i = 0; i < e * inner; ++i) dst[i] += src[i];
        }
      }
      off += e;
    }
  });
}

Var slice1d(const Var& x, std::size_t offset, std::size_t len) {
  Graph& g = graph_of("slice1d", x);
  const Tensor& xv = x.value();
  require(xv.rank() == 1, "slice1d", "expects rank 1, got " + xv.shape_str());
  require(len >= 1 && offset + len <= xv.extent(0), "slice1d",
          "range [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
              ") out of bounds for " + xv.shape_str());
  Tensor out({len});
  for (std::size_t i = 0; i < len; ++i) out[i] = xv[offset + i];
  const NodeId ix = x.id();
  return g.make("slice1d", std::move(out), {ix},
                [ix, offset, len](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ix)) return;
    const Tensor& go = gg.grad_of(self);
    Tensor& dx = gg.grad_buf(ix);
    for (std::size_t i = 0; i < len; ++i) dx[offset + i] += go[i];
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  require(!rows.empty(), "stack_rows", "no operands");
  Graph& g = graph_of("stack_rows", rows[0]);
  const std::size_t d = rows[0].value().size();
  std::vector<NodeId> ids;
  for (const Var& r : rows) {
    same_graph("stack_rows", rows[0], r);
    require(r.value().rank() == 1 && r.value().size() == d, "stack_rows",
            "row shape " + r.value().shape_str() + " differs");
    ids.push_back(r.id());
  }
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = rows[r].value()[i];
  return g.make("stack_rows", std::move(out), ids, [ids, d](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!gg.needs_grad(ids[r])) continue;
      Tensor& dr = gg.grad_buf(ids[r]);
      for (std::size_t i = 0; i < d; ++i) dr[i] += go[r * d + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum_all(const Var& x) {
  Graph& g = graph_of("sum_all", x);
  double s = 0.0;
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  const NodeId ix = x.id();
  return g.make("sum_all", Tensor::scalar(s), {ix}, [ix](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ix)) return;
    const double gv = gg.grad_of(self)[0];
    Tensor& dx = gg.grad_buf(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
  });
}

Var mean_all(const Var& x) {
  Graph& g = graph_of("mean_all", x);
  const Tensor& xv = x.value();
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  const double inv = 1.0 / static_cast<double>(xv.size());
  const NodeId ix = x.id();
  return g.make("mean_all", Tensor::scalar(s * inv), {ix},
                [ix, inv](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ix)) return;
    const double gv = gg.grad_of(self)[0] * inv;
    Tensor& dx = gg.grad_buf(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
  });
}

Var mean_keep_axis(const Var& x, std::size_t axis) {
  Graph& g = graph_of("mean_keep_axis", x);
  const Tensor& xv = x.value();
  require(axis < xv.rank(), "mean_keep_axis",
          "axis " + std::to_string(axis) + " out of range for " + xv.shape_str());
  const std::size_t len = xv.shape()[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= xv.shape()[d];
  for (std::size_t d = axis + 1; d < xv.rank(); ++d) inner *= xv.shape()[d];
  const double inv = 1.0 / static_cast<double>(outer * inner);

  Tensor out({len});
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < len; ++j) {
      const double* src = xv.data() + (o * len + j) * inner;
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += src[i];
      out[j] += s;
    }
  for (std::size_t j = 0; j < len; ++j) out[j] *= inv;

  const NodeId ix = x.id();
  return g.make("mean_keep_axis", std::move(out), {ix},
                [ix, outer, len, inner, inv](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ix)) return;
    const Tensor& go = gg.grad_of(self);
    Tensor& dx = gg.grad_buf(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < len; ++j) {
        const double gv = go[j] * inv;
        double* dst = dx.data() + (o * len + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += gv;
      }
  });
}

Var mean_keep_first2(const Var& x) {
  Graph& g = graph_of("mean_keep_first2", x);
  const Tensor& xv = x.value();
  require(xv.rank() >= 2, "mean_keep_first2",
          "expects rank >= 2, got " + xv.shape_str());
  const std::size_t a = xv.shape()[0], b = xv.shape()[1];
  std::size_t inner = 1;
  for (std::size_t d = 2; d < xv.rank(); ++d) inner *= xv.shape()[d];
  const double inv = 1.0 / static_cast<double>(inner);

  Tensor out({a, b});
  for (std::size_t r = 0; r < a * b; ++r) {
    const double* src = xv.data() + r * inner;
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += src[i];
    out[r] = s * inv;
  }
  const NodeId ix = x.id();
  return g.make("mean_keep_first2", std::move(out), {ix},
                [ix, a, b, inner, inv](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ix)) return;
    const Tensor& go = gg.grad_of(self);
    Tensor& dx = gg.grad_buf(ix);
    for (std::size_t r = 0; r < a * b; ++r) {
      const double gv = go[r] * inv;
      double* dst = dx.data() + r * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += gv;
    }
  });
}

Var dot_const(const Var& x, const std::vector<double>& weights) {
  Graph& g = graph_of("dot_const", x);
  const Tensor& xv = x.value();
  require(xv.size() == weights.size(), "dot_const",
          "weight count " + std::to_string(weights.size()) + " vs tensor " +
              xv.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  const NodeId ix = x.id();
  return g.make("dot_const", Tensor::scalar(s), {ix},
                [ix, weights](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ix)) return;
    const double gv = gg.grad_of(self)[0];
    Tensor& dx = gg.grad_buf(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv * weights[i];
  });
}

// ---------------------------------------------------------------------------
// Activations and normalization

namespace {

template <typename Fwd, typename Bwd>
Var unary_op(const char* name, const Var& x, Fwd fwd, Bwd bwd) {
  Graph& g = graph_of(name, x);
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(out[i]);
  const NodeId ix = x.id();
  return g.make(name, std::move(out), {ix}, [ix, bwd](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ix)) return;
    const Tensor& go = gg.grad_of(self);
    const Tensor& xv = gg.value(ix);
    const Tensor& yv = gg.value(self);
    Tensor& dx = gg.grad_buf(ix);
    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * bwd(xv[i], yv[i]);
  });
}

}  // namespace

Var gelu(const Var& x) {
  return unary_op("gelu", x, [](double v) { return gelu_exact(v); },
                  [](double v, double) { return gelu_exact_grad(v); });
}

Var sigmoid(const Var& x) {
  return unary_op("sigmoid", x, [](double v) { return sigmoid_stable(v); },
                  [](double, double y) { return y * (1.0 - y); });
}

Var tanh_op(const Var& x) {
  return unary_op("tanh", x, [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

Var softmax(const Var& x, std::size_t axis) {
  Graph& g = graph_of("softmax", x);
  const Tensor& xv = x.value();
  require(axis < xv.rank() || (xv.rank() == 0 && axis == 0), "softmax",
          "axis " + std::to_string(axis) + " out of range for " + xv.shape_str());
  const std::size_t len = xv.rank() == 0 ? 1 : xv.shape()[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis && d < xv.rank(); ++d) outer *= xv.shape()[d];
  for (std::size_t d = axis + 1; d < xv.rank(); ++d) inner *= xv.shape()[d];

  Tensor out = xv;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      double* base = out.data() + o * len * inner + i;
      double mx = base[0];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, base[j * inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(base[j * inner] - mx);
        base[j * inner] = e;
        sum += e;
      }
      const double invs = 1.0 / sum;
      for (std::size_t j = 0; j < len; ++j) base[j * inner] *= invs;
    }

  const NodeId ix = x.id();
  return g.make("softmax", std::move(out), {ix},
                [ix, outer, len, inner](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ix)) return;
    const Tensor& go = gg.grad_of(self);
    const Tensor& yv = gg.value(self);
    Tensor& dx = gg.grad_buf(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t off = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j)
          dot += go[off + j * inner] * yv[off + j * inner];
        for (std::size_t j = 0; j < len; ++j)
          dx[off + j * inner] +=
              yv[off + j * inner] * (go[off + j * inner] - dot);
      }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Graph& g = same_graph("layer_norm", x, gain);
  same_graph("layer_norm", x, bias);
  const Tensor& xv = x.value();
  require(xv.rank() >= 1, "layer_norm", "expects rank >= 1");
  const std::size_t d = xv.shape().back();
  require(gain.value().rank() == 1 && gain.value().extent(0) == d, "layer_norm",
          "gain shape " + gain.value().shape_str() + " vs feature width " +
              std::to_string(d));
  require_same_shape("layer_norm", gain.value(), bias.value());
  const std::size_t rows = xv.size() / d;

  Tensor out(xv.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double* yr = out.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i)
      yr[i] = (xr[i] - mu) * inv * gv[i] + bv[i];
  }

  const NodeId ix = x.id(), igain = gain.id(), ibias = bias.id();
  return g.make("layer_norm", std::move(out), {ix, igain, ibias},
                [ix, igain, ibias, rows, d, eps](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    const Tensor& xv2 = gg.value(ix);
    const Tensor& gv2 = gg.value(igain);
    const double dn = static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = xv2.data() + r * d;
      const double* gr = go.data() + r * d;
      double mu = 0.0;
      for (std::size_t i = 0; i < d; ++i) mu += xr[i];
      mu /= dn;
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
      var /= dn;
      const double inv = 1.0 / std::sqrt(var + eps);

      if (gg.needs_grad(ix)) {
        // d/dx of the row: dxhat/inv parts plus variance and mean terms.
        double sum_dxhat = 0.0, sum_dxhat_xc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double dxhat = gr[i] * gv2[i];
          sum_dxhat += dxhat;
          sum_dxhat_xc += dxhat * (xr[i] - mu);
        }
        const double dvar = sum_dxhat_xc * (-0.5) * inv * inv * inv;
        const double dmu = -inv * sum_dxhat;
        Tensor& dx = gg.grad_buf(ix);
        double* dxr = dx.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
          const double dxhat = gr[i] * gv2[i];
          dxr[i] += dxhat * inv + dvar * 2.0 * (xr[i] - mu) / dn + dmu / dn;
        }
      }
      if (gg.needs_grad(igain)) {
        Tensor& dg = gg.grad_buf(igain);
        for (std::size_t i = 0; i < d; ++i) dg[i] += gr[i] * (xr[i] - mu) * inv;
      }
      if (gg.needs_grad(ibias)) {
        Tensor& db = gg.grad_buf(ibias);
        for (std::size_t i = 0; i < d; ++i) db[i] += gr[i];
      }
    }
  });
}

Var scale_by(const Var& x, const Var& s) {
  Graph& g = same_graph("scale_by", x, s);
  require(s.value().size() == 1, "scale_by",
          "gate must have a single element, got " + s.value().shape_str());
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
  const NodeId ix = x.id(), is = s.id();
  return g.make("scale_by", std::move(out), {ix, is},
                [ix, is](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    const Tensor& xv = gg.value(ix);
    const double sv2 = gg.value(is)[0];
    if (gg.needs_grad(ix)) {
      Tensor& dx = gg.grad_buf(ix);
      for (std::size_t i = 0; i < go.size(); ++i) dx[i] += sv2 * go[i];
    }
    if (gg.needs_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * xv[i];
      gg.grad_buf(is)[0] += acc;
    }
  });
}

}  // namespace stprog
