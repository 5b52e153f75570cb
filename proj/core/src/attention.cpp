#include "stprog/attention.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "op_common.hpp"

namespace stprog {

using detail::require;
using detail::same_graph;

namespace {

// Row softmax of an in-place score matrix {rows, cols}.
void softmax_rows(double* s, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = s + r * cols;
    double mx = row[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

// dS = A .* (dA - rowdot(dA, A)); written into da in place.
void softmax_rows_backward(const double* a, double* da, std::size_t rows,
                           std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * cols;
    double* dr = da + r * cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += dr[c] * ar[c];
    for (std::size_t c = 0; c < cols; ++c) dr[c] = ar[c] * (dr[c] - dot);
  }
}

}  // namespace

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v) {
  Graph& g = same_graph("scaled_dot_attention", q, k);
  same_graph("scaled_dot_attention", q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require(qv.rank() == 2 && kv.rank() == 2 && vv.rank() == 2,
          "scaled_dot_attention", "expects rank-2 Q/K/V");
  const std::size_t t = qv.extent(0), dk = qv.extent(1), dv = vv.extent(1);
  require(kv.extent(0) == t && vv.extent(0) == t, "scaled_dot_attention",
          "token counts differ: " + qv.shape_str() + ", " + kv.shape_str() +
              ", " + vv.shape_str());
  require(kv.extent(1) == dk, "scaled_dot_attention",
          "key width " + kv.shape_str() + " does not match query " + qv.shape_str());
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dk));

  Tensor attn({t, t});
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < t; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < dk; ++i) s += qv[r * dk + i] * kv[c * dk + i];
      attn[r * t + c] = s * alpha;
    }
  if (!attn.all_finite()) {
    throw NumericError("scaled_dot_attention: non-finite attention scores");
  }
  softmax_rows(attn.data(), t, t);

  Tensor out({t, dv});
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < t; ++c) {
      const double a = attn[r * t + c];
      for (std::size_t i = 0; i < dv; ++i) out[r * dv + i] += a * vv[c * dv + i];
    }

  auto saved = std::make_shared<Tensor>(std::move(attn));
  const NodeId iq = q.id(), ik = k.id(), iv = v.id();
  return g.make("scaled_dot_attention", std::move(out), {iq, ik, iv},
                [iq, ik, iv, t, dk, dv, alpha, saved](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    const Tensor& qv2 = gg.value(iq);
    const Tensor& kv2 = gg.value(ik);
    const Tensor& vv2 = gg.value(iv);
    const Tensor& a = *saved;

    if (gg.needs_grad(iv)) {
      Tensor& dvb = gg.grad_buf(iv);  // dV += A^T dO
      for (std::size_t c = 0; c < t; ++c)
        for (std::size_t r = 0; r < t; ++r) {
          const double av = a[r * t + c];
          if (av == 0.0) continue;
          for (std::size_t i = 0; i < dv; ++i)
            dvb[c * dv + i] += av * go[r * dv + i];
        }
    }
    if (gg.needs_grad(iq) || gg.needs_grad(ik)) {
      std::vector<double> ds(t * t);
      for (std::size_t r = 0; r < t; ++r)  // dA = dO V^T
        for (std::size_t c = 0; c < t; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < dv; ++i)
            s += go[r * dv + i] * vv2[c * dv + i];
          ds[r * t + c] = s;
        }
      softmax_rows_backward(a.data(), ds.data(), t, t);
      if (gg.needs_grad(iq)) {
        Tensor& dq = gg.grad_buf(iq);  // dQ += alpha dS K
        for (std::size_t r = 0; r < t; ++r)
          for (std::size_t c = 0; c < t; ++c) {
            const double sv = alpha * ds[r * t + c];
            if (sv == 0.0) continue;
            for (std::size_t i = 0; i < dk; ++i)
              dq[r * dk + i] += sv * kv2[c * dk + i];
          }
      }
      if (gg.needs_grad(ik)) {
        Tensor& dkb = gg.grad_buf(ik);  // dK += alpha dS^T Q
        for (std::size_t r = 0; r < t; ++r)
          for (std::size_t c = 0; c < t; ++c) {
            const double sv = alpha * ds[r * t + c];
            if (sv == 0.0) continue;
            for (std::size_t i = 0; i < dk; ++i)
              dkb[c * dk + i] += sv * qv2[r * dk + i];
          }
      }
    }
  });
}

Var temporal_site_attention(const Var& features, const Var& embed,
                            const Var& wq, const Var& wk, const Var& wv) {
  Graph& g = same_graph("temporal_site_attention", features, embed);
  same_graph("temporal_site_attention", features, wq);
  same_graph("temporal_site_attention", features, wk);
  same_graph("temporal_site_attention", features, wv);
  const Tensor& fv = features.value();
  const Tensor& ev = embed.value();
  require(fv.rank() == 5, "temporal_site_attention",
          "features must be {T,C,D,H,W}, got " + fv.shape_str());
  require(ev.rank() == 2, "temporal_site_attention",
          "embedding must be {T,E}, got " + ev.shape_str());
  const std::size_t t = fv.extent(0), c = fv.extent(1);
  const std::size_t sites = fv.extent(2) * fv.extent(3) * fv.extent(4);
  require(ev.extent(0) == t, "temporal_site_attention",
          "embedding rows " + ev.shape_str() + " vs timesteps " + fv.shape_str());
  const std::size_t ew = ev.extent(1);
  const std::size_t xw = c + ew;
  const Tensor& wqv = wq.value();
  const Tensor& wkv = wk.value();
  const Tensor& wvv = wv.value();
  require(wqv.rank() == 2 && wqv.extent(1) == xw, "temporal_site_attention",
          "wq " + wqv.shape_str() + " vs token width " + std::to_string(xw));
  require(wkv.same_shape(wqv), "temporal_site_attention",
          "wk " + wkv.shape_str() + " must match wq " + wqv.shape_str());
  require(wvv.rank() == 2 && wvv.extent(0) == c && wvv.extent(1) == xw,
          "temporal_site_attention",
          "wv " + wvv.shape_str() + " must be {C, C+E} = {" + std::to_string(c) +
              ", " + std::to_string(xw) + "}");
  const std::size_t dk = wqv.extent(0);
  require(dk >= 1, "temporal_site_attention", "d_k must be >= 1");
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dk));

  // Per-site attention matrices are kept for the backward pass; token and
  // projection buffers are cheap to rebuild.
  auto attn_all = std::make_shared<Tensor>(std::vector<std::size_t>{sites, t, t});
  Tensor out(fv.shape());

  std::vector<double> x(t * xw), qb(t * dk), kb(t * dk), vb(t * c);
  for (std::size_t s = 0; s < sites; ++s) {
    for (std::size_t tt = 0; tt < t; ++tt) {
      double* xr = x.data() + tt * xw;
      for (std::size_t cc = 0; cc < c; ++cc)
        xr[cc] = fv[(tt * c + cc) * sites + s];
      for (std::size_t e = 0; e < ew; ++e) xr[c + e] = ev[tt * ew + e];
    }
    auto project = [&](const Tensor& w, double* dst, std::size_t od) {
      for (std::size_t tt = 0; tt < t; ++tt) {
        const double* xr = x.data() + tt * xw;
        for (std::size_t o = 0; o < od; ++o) {
          const double* wr = w.data() + o * xw;
          double acc = 0.0;
          for (std::size_t i = 0; i < xw; ++i) acc += wr[i] * xr[i];
          dst[tt * od + o] = acc;
        }
      }
    };
    project(wqv, qb.data(), dk);
    project(wkv, kb.data(), dk);
    project(wvv, vb.data(), c);

    double* a = attn_all->data() + s * t * t;
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t cc = 0; cc < t; ++cc) {
        double sc = 0.0;
        for (std::size_t i = 0; i < dk; ++i)
          sc += qb[r * dk + i] * kb[cc * dk + i];
        sc *= alpha;
        if (!std::isfinite(sc)) {
          throw NumericError("temporal_site_attention: non-finite score");
        }
        a[r * t + cc] = sc;
      }
    softmax_rows(a, t, t);

    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t cc = 0; cc < c; ++cc) {
        double acc = 0.0;
        for (std::size_t s2 = 0; s2 < t; ++s2)
          acc += a[r * t + s2] * vb[s2 * c + cc];
        out[(r * c + cc) * sites + s] = acc;
      }
  }

  const NodeId ifeat = features.id(), iemb = embed.id();
  const NodeId iwq = wq.id(), iwk = wk.id(), iwv = wv.id();
  return g.make(
      "temporal_site_attention", std::move(out), {ifeat, iemb, iwq, iwk, iwv},
      [ifeat, iemb, iwq, iwk, iwv, t, c, ew, xw, dk, sites, alpha,
       attn_all](Graph& gg, NodeId self) {
        const Tensor& go = gg.grad_of(self);
        const Tensor& fv2 = gg.value(ifeat);
        const Tensor& ev2 = gg.value(iemb);
        const Tensor& wqv2 = gg.value(iwq);
        const Tensor& wkv2 = gg.value(iwk);
        const Tensor& wvv2 = gg.value(iwv);

        const bool need_f = gg.needs_grad(ifeat);
        const bool need_e = gg.needs_grad(iemb);
        const bool need_wq = gg.needs_grad(iwq);
        const bool need_wk = gg.needs_grad(iwk);
        const bool need_wv = gg.needs_grad(iwv);

        Tensor* df = need_f ? &gg.grad_buf(ifeat) : nullptr;
        Tensor* de = need_e ? &gg.grad_buf(iemb) : nullptr;
        Tensor* dwq = need_wq ? &gg.grad_buf(iwq) : nullptr;
        Tensor* dwk = need_wk ? &gg.grad_buf(iwk) : nullptr;
        Tensor* dwv = need_wv ? &gg.grad_buf(iwv) : nullptr;

        std::vector<double> x(t * xw), qb(t * dk), kb(t * dk), vb(t * c);
        std::vector<double> dgo(t * c), dv(t * c), da(t * t), dq(t * dk),
            dkb(t * dk), dx(t * xw);

        // Sites processed in a fixed order: weight-gradient accumulation is
        // bit-reproducible.
        for (std::size_t s = 0; s < sites; ++s) {
          for (std::size_t tt = 0; tt < t; ++tt) {
            double* xr = x.data() + tt * xw;
            for (std::size_t cc = 0; cc < c; ++cc) {
              xr[cc] = fv2[(tt * c + cc) * sites + s];
              dgo[tt * c + cc] = go[(tt * c + cc) * sites + s];
            }
            for (std::size_t e = 0; e < ew; ++e) xr[c + e] = ev2[tt * ew + e];
          }
          auto project = [&](const Tensor& w, double* dst, std::size_t od) {
            for (std::size_t tt = 0; tt < t; ++tt) {
              const double* xr = x.data() + tt * xw;
              for (std::size_t o = 0; o < od; ++o) {
                const double* wr = w.data() + o * xw;
                double acc = 0.0;
                for (std::size_t i = 0; i < xw; ++i) acc += wr[i] * xr[i];
                dst[tt * od + o] = acc;
              }
            }
          };
          project(wqv2, qb.data(), dk);
          project(wkv2, kb.data(), dk);
          project(wvv2, vb.data(), c);
          const double* a = attn_all->data() + s * t * t;

          // dV = A^T dO
          std::fill(dv.begin(), dv.end(), 0.0);
          for (std::size_t cc = 0; cc < t; ++cc)
            for (std::size_t r = 0; r < t; ++r) {
              const double av = a[r * t + cc];
              for (std::size_t i = 0; i < c; ++i)
                dv[cc * c + i] += av * dgo[r * c + i];
            }
          // dA = dO V^T, then softmax backward in place
          for (std::size_t r = 0; r < t; ++r)
            for (std::size_t cc = 0; cc < t; ++cc) {
              double acc = 0.0;
              for (std::size_t i = 0; i < c; ++i)
                acc += dgo[r * c + i] * vb[cc * c + i];
              da[r * t + cc] = acc;
            }
          softmax_rows_backward(a, da.data(), t, t);
          // dQ = alpha dS K ; dK = alpha dS^T Q
          for (std::size_t r = 0; r < t; ++r)
            for (std::size_t i = 0; i < dk; ++i) {
              double accq = 0.0, acck = 0.0;
              for (std::size_t cc = 0; cc < t; ++cc) {
                accq += da[r * t + cc] * kb[cc * dk + i];
                acck += da[cc * t + r] * qb[cc * dk + i];
              }
              dq[r * dk + i] = alpha * accq;
              dkb[r * dk + i] = alpha * acck;
            }

          // dX = dQ Wq + dK Wk + dV Wv ; dW* += d*^T X
          std::fill(dx.begin(), dx.end(), 0.0);
          auto backproject = [&](const double* d, const Tensor& w, Tensor* dw,
                                 std::size_t od) {
            for (std::size_t tt = 0; tt < t; ++tt) {
              const double* dr = d + tt * od;
              double* dxr = dx.data() + tt * xw;
              const double* xr = x.data() + tt * xw;
              for (std::size_t o = 0; o < od; ++o) {
                const double dval = dr[o];
                if (dval == 0.0) continue;
                const double* wr = w.data() + o * xw;
                if (need_f || need_e) {
                  for (std::size_t i = 0; i < xw; ++i) dxr[i] += dval * wr[i];
                }
                if (dw) {
                  double* dwr = dw->data() + o * xw;
                  for (std::size_t i = 0; i < xw; ++i) dwr[i] += dval * xr[i];
                }
              }
            }
          };
          backproject(dq.data(), wqv2, dwq, dk);
          backproject(dkb.data(), wkv2, dwk, dk);
          backproject(dv.data(), wvv2, dwv, c);

          if (need_f) {
            for (std::size_t tt = 0; tt < t; ++tt)
              for (std::size_t cc = 0; cc < c; ++cc)
                (*df)[(tt * c + cc) * sites + s] += dx[tt * xw + cc];
          }
          if (need_e) {
            for (std::size_t tt = 0; tt < t; ++tt)
              for (std::size_t e = 0; e < ew; ++e)
                (*de)[tt * ew + e] += dx[tt * xw + c + e];
          }
        }
      });
}

}  // namespace stprog
