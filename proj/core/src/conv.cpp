#include "stprog/conv.hpp"

#include <cstddef>
#include <string>

#include "op_common.hpp"

namespace stprog {

using detail::require;
using detail::same_graph;

namespace {

struct ConvDims {
  std::size_t n, ci, d, h, w;     // input
  std::size_t co, do_, ho, wo;    // output
  int stride, pad;
  bool batched;
};

std::size_t conv_out_extent(const char* op, std::size_t in, int pad, int stride,
                            std::size_t k) {
  const long long num =
      static_cast<long long>(in) + 2LL * pad - static_cast<long long>(k);
  if (num < 0 || stride < 1) {
    throw ShapeError(std::string(op) + ": output extent <= 0 for input extent " +
                     std::to_string(in) + ", padding " + std::to_string(pad) +
                     ", stride " + std::to_string(stride));
  }
  return static_cast<std::size_t>(num / stride) + 1;
}

// y[n,co,zo,yo,xo] = bias[co] + sum_{ci,k} x[n,ci,zo*s-p+kz,...] * w[co,ci,k]
void conv3d_fwd(const double* x, const double* w, const double* bias,
                const ConvDims& dm, double* y) {
  const std::size_t plane = dm.h * dm.w;
  const std::size_t in_chan = dm.d * plane;
  const std::size_t out_plane = dm.ho * dm.wo;
  const std::size_t out_chan = dm.do_ * out_plane;
  for (std::size_t n = 0; n < dm.n; ++n) {
    const double* xn = x + n * dm.ci * in_chan;
    for (std::size_t co = 0; co < dm.co; ++co) {
      const double* wc = w + co * dm.ci * 27;
      double* yc = y + (n * dm.co + co) * out_chan;
      const double b = bias ? bias[co] : 0.0;
      for (std::size_t zo = 0; zo < dm.do_; ++zo) {
        const long long z0 = static_cast<long long>(zo) * dm.stride - dm.pad;
        for (std::size_t yo = 0; yo < dm.ho; ++yo) {
          const long long y0 = static_cast<long long>(yo) * dm.stride - dm.pad;
          for (std::size_t xo = 0; xo < dm.wo; ++xo) {
            const long long x0 = static_cast<long long>(xo) * dm.stride - dm.pad;
            double acc = b;
            for (std::size_t ci = 0; ci < dm.ci; ++ci) {
              const double* xc = xn + ci * in_chan;
              const double* wk = wc + ci * 27;
              for (int kz = 0; kz < 3; ++kz) {
                const long long z = z0 + kz;
                if (z < 0 || z >= static_cast<long long>(dm.d)) continue;
                for (int ky = 0; ky < 3; ++ky) {
                  const long long yy = y0 + ky;
                  if (yy < 0 || yy >= static_cast<long long>(dm.h)) continue;
                  const double* row = xc + (z * dm.h + yy) * dm.w;
                  const double* wrow = wk + kz * 9 + ky * 3;
                  for (int kx = 0; kx < 3; ++kx) {
                    const long long xx = x0 + kx;
                    if (xx < 0 || xx >= static_cast<long long>(dm.w)) continue;
                    acc += row[xx] * wrow[kx];
                  }
                }
              }
            }
            yc[(zo * dm.ho + yo) * dm.wo + xo] = acc;
          }
        }
      }
    }
  }
}

// dx[n,ci,z,y,x] += sum_{co,k valid} g[n,co,(z+p-kz)/s,...] * w[co,ci,k]
void conv3d_bwd_input(const double* g, const double* w, const ConvDims& dm,
                      double* dx) {
  const std::size_t plane = dm.h * dm.w;
  const std::size_t in_chan = dm.d * plane;
  const std::size_t out_plane = dm.ho * dm.wo;
  const std::size_t out_chan = dm.do_ * out_plane;
  const int s = dm.stride, p = dm.pad;
  for (std::size_t n = 0; n < dm.n; ++n) {
    const double* gn = g + n * dm.co * out_chan;
    for (std::size_t ci = 0; ci < dm.ci; ++ci) {
      double* dxc = dx + (n * dm.ci + ci) * in_chan;
      for (std::size_t z = 0; z < dm.d; ++z)
        for (std::size_t yy = 0; yy < dm.h; ++yy)
          for (std::size_t xx = 0; xx < dm.w; ++xx) {
            double acc = 0.0;
            for (int kz = 0; kz < 3; ++kz) {
              const long long tz = static_cast<long long>(z) + p - kz;
              if (tz < 0 || tz % s) continue;
              const std::size_t zo = static_cast<std::size_t>(tz / s);
              if (zo >= dm.do_) continue;
              for (int ky = 0; ky < 3; ++ky) {
                const long long ty = static_cast<long long>(yy) + p - ky;
                if (ty < 0 || ty % s) continue;
                const std::size_t yo = static_cast<std::size_t>(ty / s);
                if (yo >= dm.ho) continue;
                for (int kx = 0; kx < 3; ++kx) {
                  const long long tx = static_cast<long long>(xx) + p - kx;
                  if (tx < 0 || tx % s) continue;
                  const std::size_t xo = static_cast<std::size_t>(tx / s);
                  if (xo >= dm.wo) continue;
                  const std::size_t gi = (zo * dm.ho + yo) * dm.wo + xo;
                  for (std::size_t co = 0; co < dm.co; ++co) {
                    acc += gn[co * out_chan + gi] *
                           w[(co * dm.ci + ci) * 27 + kz * 9 + ky * 3 + kx];
                  }
                }
              }
            }
            dxc[(z * dm.h + yy) * dm.w + xx] += acc;
          }
    }
  }
}

// dw[co,ci,k] += sum_{n,out} g[n,co,out] * x[n,ci,in(out,k)]
void conv3d_bwd_weight(const double* x, const double* g, const ConvDims& dm,
                       double* dw, double* db) {
  const std::size_t plane = dm.h * dm.w;
  const std::size_t in_chan = dm.d * plane;
  const std::size_t out_plane = dm.ho * dm.wo;
  const std::size_t out_chan = dm.do_ * out_plane;
  for (std::size_t n = 0; n < dm.n; ++n) {
    const double* xn = x + n * dm.ci * in_chan;
    for (std::size_t co = 0; co < dm.co; ++co) {
      const double* gc = g + (n * dm.co + co) * out_chan;
      double* dwc = dw + co * dm.ci * 27;
      double bsum = 0.0;
      for (std::size_t zo = 0; zo < dm.do_; ++zo) {
        const long long z0 = static_cast<long long>(zo) * dm.stride - dm.pad;
        for (std::size_t yo = 0; yo < dm.ho; ++yo) {
          const long long y0 = static_cast<long long>(yo) * dm.stride - dm.pad;
          for (std::size_t xo = 0; xo < dm.wo; ++xo) {
            const double gv = gc[(zo * dm.ho + yo) * dm.wo + xo];
            bsum += gv;
            if (gv == 0.0) continue;
            const long long x0 = static_cast<long long>(xo) * dm.stride - dm.pad;
            for (std::size_t ci = 0; ci < dm.ci; ++ci) {
              const double* xc = xn + ci * in_chan;
              double* dwk = dwc + ci * 27;
              for (int kz = 0; kz < 3; ++kz) {
                const long long z = z0 + kz;
                if (z < 0 || z >= static_cast<long long>(dm.d)) continue;
                for (int ky = 0; ky < 3; ++ky) {
                  const long long yy = y0 + ky;
                  if (yy < 0 || yy >= static_cast<long long>(dm.h)) continue;
                  const double* row = xc + (z * dm.h + yy) * dm.w;
                  double* dwrow = dwk + kz * 9 + ky * 3;
                  for (int kx = 0; kx < 3; ++kx) {
                    const long long xx = x0 + kx;
                    if (xx < 0 || xx >= static_cast<long long>(dm.w)) continue;
                    dwrow[kx] += gv * row[xx];
                  }
                }
              }
            }
          }
        }
      }
      if (db) db[co] += bsum;
    }
  }
}

struct TDims {
  std::size_t n, ci, di, hi, wi;  // input
  std::size_t co, do_, ho, wo;    // output
  std::size_t k;
  int stride, pad;
  bool batched;
};

// y[n,co,z,..] = b[co] + sum_{ci,k: (z+p-kz)%s==0} x[n,ci,(z+p-kz)/s,..] * w[ci,co,k]
void convt_fwd(const double* x, const double* w, const double* bias,
               const TDims& dm, double* y) {
  const std::size_t in_chan = dm.di * dm.hi * dm.wi;
  const std::size_t out_chan = dm.do_ * dm.ho * dm.wo;
  const std::size_t kk = dm.k * dm.k * dm.k;
  const int s = dm.stride, p = dm.pad;
  for (std::size_t n = 0; n < dm.n; ++n) {
    const double* xn = x + n * dm.ci * in_chan;
    for (std::size_t co = 0; co < dm.co; ++co) {
      double* yc = y + (n * dm.co + co) * out_chan;
      const double b = bias ? bias[co] : 0.0;
      for (std::size_t z = 0; z < dm.do_; ++z)
        for (std::size_t yy = 0; yy < dm.ho; ++yy)
          for (std::size_t xx = 0; xx < dm.wo; ++xx) {
            double acc = b;
            for (std::size_t kz = 0; kz < dm.k; ++kz) {
              const long long tz = static_cast<long long>(z) + p -
                                   static_cast<long long>(kz);
              if (tz < 0 || tz % s) continue;
              const std::size_t zi = static_cast<std::size_t>(tz / s);
              if (zi >= dm.di) continue;
              for (std::size_t ky = 0; ky < dm.k; ++ky) {
                const long long ty = static_cast<long long>(yy) + p -
                                     static_cast<long long>(ky);
                if (ty < 0 || ty % s) continue;
                const std::size_t yi = static_cast<std::size_t>(ty / s);
                if (yi >= dm.hi) continue;
                for (std::size_t kx = 0; kx < dm.k; ++kx) {
                  const long long tx = static_cast<long long>(xx) + p -
                                       static_cast<long long>(kx);
                  if (tx < 0 || tx % s) continue;
                  const std::size_t xi = static_cast<std::size_t>(tx / s);
                  if (xi >= dm.wi) continue;
                  const std::size_t xoff = (zi * dm.hi + yi) * dm.wi + xi;
                  const std::size_t woff = (kz * dm.k + ky) * dm.k + kx;
                  for (std::size_t ci = 0; ci < dm.ci; ++ci) {
                    acc += xn[ci * in_chan + xoff] *
                           w[(ci * dm.co + co) * kk + woff];
                  }
                }
              }
            }
            yc[(z * dm.ho + yy) * dm.wo + xx] = acc;
          }
    }
  }
}

// dx[n,ci,zi,..] += sum_{co,k} g[n,co,zi*s-p+kz,..] * w[ci,co,k]
void convt_bwd_input(const double* g, const double* w, const TDims& dm,
                     double* dx) {
  const std::size_t in_chan = dm.di * dm.hi * dm.wi;
  const std::size_t out_chan = dm.do_ * dm.ho * dm.wo;
  const std::size_t kk = dm.k * dm.k * dm.k;
  const int s = dm.stride, p = dm.pad;
  for (std::size_t n = 0; n < dm.n; ++n) {
    const double* gn = g + n * dm.co * out_chan;
    for (std::size_t ci = 0; ci < dm.ci; ++ci) {
      double* dxc = dx + (n * dm.ci + ci) * in_chan;
      const double* wc = w + ci * dm.co * kk;
      for (std::size_t zi = 0; zi < dm.di; ++zi)
        for (std::size_t yi = 0; yi < dm.hi; ++yi)
          for (std::size_t xi = 0; xi < dm.wi; ++xi) {
            double acc = 0.0;
            for (std::size_t kz = 0; kz < dm.k; ++kz) {
              const long long z = static_cast<long long>(zi) * s - p +
                                  static_cast<long long>(kz);
              if (z < 0 || z >= static_cast<long long>(dm.do_)) continue;
              for (std::size_t ky = 0; ky < dm.k; ++ky) {
                const long long yy = static_cast<long long>(yi) * s - p +
                                     static_cast<long long>(ky);
                if (yy < 0 || yy >= static_cast<long long>(dm.ho)) continue;
                for (std::size_t kx = 0; kx < dm.k; ++kx) {
                  const long long xx = static_cast<long long>(xi) * s - p +
                                       static_cast<long long>(kx);
                  if (xx < 0 || xx >= static_cast<long long>(dm.wo)) continue;
                  const std::size_t goff = (z * dm.ho + yy) * dm.wo + xx;
                  const std::size_t woff = (kz * dm.k + ky) * dm.k + kx;
                  for (std::size_t co = 0; co < dm.co; ++co)
                    acc += gn[co * out_chan + goff] * wc[co * kk + woff];
                }
              }
            }
            dxc[(zi * dm.hi + yi) * dm.wi + xi] += acc;
          }
    }
  }
}

// dw[ci,co,k] += sum_{n,in} x[n,ci,in] * g[n,co,in*s-p+k]
void convt_bwd_weight(const double* x, const double* g, const TDims& dm,
                      double* dw, double* db) {
  const std::size_t in_chan = dm.di * dm.hi * dm.wi;
  const std::size_t out_chan = dm.do_ * dm.ho * dm.wo;
  const std::size_t kk = dm.k * dm.k * dm.k;
  const int s = dm.stride, p = dm.pad;
  for (std::size_t n = 0; n < dm.n; ++n) {
    for (std::size_t ci = 0; ci < dm.ci; ++ci) {
      const double* xc = x + (n * dm.ci + ci) * in_chan;
      double* dwc = dw + ci * dm.co * kk;
      for (std::size_t zi = 0; zi < dm.di; ++zi)
        for (std::size_t yi = 0; yi < dm.hi; ++yi)
          for (std::size_t xi = 0; xi < dm.wi; ++xi) {
            const double xv = xc[(zi * dm.hi + yi) * dm.wi + xi];
            if (xv == 0.0) continue;
            for (std::size_t kz = 0; kz < dm.k; ++kz) {
              const long long z = static_cast<long long>(zi) * s - p +
                                  static_cast<long long>(kz);
              if (z < 0 || z >= static_cast<long long>(dm.do_)) continue;
              for (std::size_t ky = 0; ky < dm.k; ++ky) {
                const long long yy = static_cast<long long>(yi) * s - p +
                                     static_cast<long long>(ky);
                if (yy < 0 || yy >= static_cast<long long>(dm.ho)) continue;
                for (std::size_t kx = 0; kx < dm.k; ++kx) {
                  const long long xx = static_cast<long long>(xi) * s - p +
                                       static_cast<long long>(kx);
                  if (xx < 0 || xx >= static_cast<long long>(dm.wo)) continue;
                  const std::size_t goff = (z * dm.ho + yy) * dm.wo + xx;
                  const std::size_t woff = (kz * dm.k + ky) * dm.k + kx;
                  for (std::size_t co = 0; co < dm.co; ++co)
                    dwc[co * kk + woff] += xv * g[(n * dm.co + co) * out_chan + goff];
                }
              }
            }
          }
    }
  }
  if (db) {
    for (std::size_t n = 0; n < dm.n; ++n)
      for (std::size_t co = 0; co < dm.co; ++co) {
        const double* gc = g + (n * dm.co + co) * out_chan;
        double s2 = 0.0;
        for (std::size_t i = 0; i < out_chan; ++i) s2 += gc[i];
        db[co] += s2;
      }
  }
}

}  // namespace

Var conv3d(const Var& input, const Var& weight, const Var& bias, int stride,
           int padding) {
  Graph& g = same_graph("conv3d", input, weight);
  same_graph("conv3d", input, bias);
  const Tensor& xv = input.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require(stride >= 1, "conv3d", "stride must be >= 1");
  require(padding >= 0, "conv3d", "padding must be >= 0");
  require(xv.rank() == 4 || xv.rank() == 5, "conv3d",
          "input must be {C,D,H,W} or {N,C,D,H,W}, got " + xv.shape_str());
  require(wv.rank() == 5 && wv.extent(2) == 3 && wv.extent(3) == 3 &&
              wv.extent(4) == 3,
          "conv3d", "weight must be {Co,Ci,3,3,3}, got " + wv.shape_str());

  ConvDims dm{};
  dm.batched = xv.rank() == 5;
  dm.n = dm.batched ? xv.extent(0) : 1;
  const std::size_t cdim = dm.batched ? 1 : 0;
  dm.ci = xv.extent(cdim);
  dm.d = xv.extent(cdim + 1);
  dm.h = xv.extent(cdim + 2);
  dm.w = xv.extent(cdim + 3);
  dm.co = wv.extent(0);
  require(wv.extent(1) == dm.ci, "conv3d",
          "input channels " + std::to_string(dm.ci) + " do not match weight " +
              wv.shape_str());
  require(bv.rank() == 1 && bv.extent(0) == dm.co, "conv3d",
          "bias " + bv.shape_str() + " does not match weight " + wv.shape_str());
  dm.stride = stride;
  dm.pad = padding;
  dm.do_ = conv_out_extent("conv3d", dm.d, padding, stride, 3);
  dm.ho = conv_out_extent("conv3d", dm.h, padding, stride, 3);
  dm.wo = conv_out_extent("conv3d", dm.w, padding, stride, 3);

  std::vector<std::size_t> oshape =
      dm.batched ? std::vector<std::size_t>{dm.n, dm.co, dm.do_, dm.ho, dm.wo}
                 : std::vector<std::size_t>{dm.co, dm.do_, dm.ho, dm.wo};
  Tensor out(oshape);
  conv3d_fwd(xv.data(), wv.data(), bv.data(), dm, out.data());

  const NodeId ix = input.id(), iw = weight.id(), ib = bias.id();
  return g.make("conv3d", std::move(out), {ix, iw, ib},
                [ix, iw, ib, dm](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    if (gg.needs_grad(ix)) {
      conv3d_bwd_input(go.data(), gg.value(iw).data(), dm,
                       gg.grad_buf(ix).data());
    }
    const bool wgrad = gg.needs_grad(iw);
    const bool bgrad = gg.needs_grad(ib);
    if (wgrad || bgrad) {
      // bias sum is folded into the weight pass
      Tensor scratch;
      double* dw = wgrad ? gg.grad_buf(iw).data() : (scratch = Tensor(gg.value(iw).shape()), scratch.data());
      conv3d_bwd_weight(gg.value(ix).data(), go.data(), dm, dw,
                        bgrad ? gg.grad_buf(ib).data() : nullptr);
    }
  });
}

namespace {

Var conv_transpose3d_impl(const Var& input, const Var& weight, const Var* bias,
                          int stride, int padding) {
  Graph& g = same_graph("conv_transpose3d", input, weight);
  const Tensor& xv = input.value();
  const Tensor& wv = weight.value();
  require(stride >= 1, "conv_transpose3d", "stride must be >= 1");
  require(padding >= 0, "conv_transpose3d", "padding must be >= 0");
  require(xv.rank() == 4 || xv.rank() == 5, "conv_transpose3d",
          "input must be {C,D,H,W} or {N,C,D,H,W}, got " + xv.shape_str());
  require(wv.rank() == 5 && wv.extent(2) == wv.extent(3) &&
              wv.extent(3) == wv.extent(4),
          "conv_transpose3d", "weight must be {Ci,Co,k,k,k}, got " + wv.shape_str());

  TDims dm{};
  dm.batched = xv.rank() == 5;
  dm.n = dm.batched ? xv.extent(0) : 1;
  const std::size_t cdim = dm.batched ? 1 : 0;
  dm.ci = xv.extent(cdim);
  dm.di = xv.extent(cdim + 1);
  dm.hi = xv.extent(cdim + 2);
  dm.wi = xv.extent(cdim + 3);
  require(wv.extent(0) == dm.ci, "conv_transpose3d",
          "input channels " + std::to_string(dm.ci) + " do not match weight " +
              wv.shape_str());
  dm.co = wv.extent(1);
  dm.k = wv.extent(2);
  dm.stride = stride;
  dm.pad = padding;
  auto out_extent = [&](std::size_t in) -> std::size_t {
    const long long e = (static_cast<long long>(in) - 1) * stride -
                        2LL * padding + static_cast<long long>(dm.k);
    if (e < 1) {
      throw ShapeError("conv_transpose3d: computed output extent " +
                       std::to_string(e) + " < 1");
    }
    return static_cast<std::size_t>(e);
  };
  dm.do_ = out_extent(dm.di);
  dm.ho = out_extent(dm.hi);
  dm.wo = out_extent(dm.wi);

  const Tensor* bv = bias ? &bias->value() : nullptr;
  if (bv) {
    same_graph("conv_transpose3d", input, *bias);
    require(bv->rank() == 1 && bv->extent(0) == dm.co, "conv_transpose3d",
            "bias " + bv->shape_str() + " does not match weight " + wv.shape_str());
  }

  std::vector<std::size_t> oshape =
      dm.batched ? std::vector<std::size_t>{dm.n, dm.co, dm.do_, dm.ho, dm.wo}
                 : std::vector<std::size_t>{dm.co, dm.do_, dm.ho, dm.wo};
  Tensor out(oshape);
  convt_fwd(xv.data(), wv.data(), bv ? bv->data() : nullptr, dm, out.data());

  std::vector<NodeId> ids{input.id(), weight.id()};
  if (bias) ids.push_back(bias->id());
  const NodeId ix = input.id(), iw = weight.id();
  const NodeId ib = bias ? bias->id() : 0;
  const bool has_bias = bias != nullptr;
  return g.make("conv_transpose3d", std::move(out), ids,
                [ix, iw, ib, has_bias, dm](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    if (gg.needs_grad(ix)) {
      convt_bwd_input(go.data(), gg.value(iw).data(), dm,
                      gg.grad_buf(ix).data());
    }
    const bool wgrad = gg.needs_grad(iw);
    const bool bgrad = has_bias && gg.needs_grad(ib);
    if (wgrad || bgrad) {
      Tensor scratch;
      double* dw = wgrad ? gg.grad_buf(iw).data()
                         : (scratch = Tensor(gg.value(iw).shape()), scratch.data());
      convt_bwd_weight(gg.value(ix).data(), go.data(), dm, dw,
                       bgrad ? gg.grad_buf(ib).data() : nullptr);
    }
  });
}

}  // namespace

Var conv_transpose3d(const Var& input, const Var& weight, int stride,
                     int padding) {
  return conv_transpose3d_impl(input, weight, nullptr, stride, padding);
}

Var conv_transpose3d(const Var& input, const Var& weight, const Var& bias,
                     int stride, int padding) {
  return conv_transpose3d_impl(input, weight, &bias, stride, padding);
}

Var temporal_conv(const Var& input, const Var& weight, const Var& bias) {
  Graph& g = same_graph("temporal_conv", input, weight);
  same_graph("temporal_conv", input, bias);
  const Tensor& xv = input.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require(xv.rank() == 5, "temporal_conv",
          "input must be {T,C,D,H,W}, got " + xv.shape_str());
  require(wv.rank() == 3, "temporal_conv",
          "weight must be {Co,Ci,3}, got " + wv.shape_str());
  require(wv.extent(2) == 3, "temporal_conv",
          "kernel length must be 3, got " + wv.shape_str());
  const std::size_t t = xv.extent(0), ci = xv.extent(1);
  const std::size_t sites = xv.extent(2) * xv.extent(3) * xv.extent(4);
  require(wv.extent(1) == ci, "temporal_conv",
          "input channels " + std::to_string(ci) + " do not match weight " +
              wv.shape_str());
  const std::size_t co = wv.extent(0);
  require(bv.rank() == 1 && bv.extent(0) == co, "temporal_conv",
          "bias " + bv.shape_str() + " does not match weight " + wv.shape_str());

  std::vector<std::size_t> oshape = xv.shape();
  oshape[1] = co;
  Tensor out(oshape);
  for (std::size_t tt = 0; tt < t; ++tt)
    for (std::size_t c = 0; c < co; ++c) {
      double* yrow = out.data() + (tt * co + c) * sites;
      for (std::size_t s = 0; s < sites; ++s) yrow[s] = bv[c];
      for (int k = 0; k < 3; ++k) {
        const long long ts = static_cast<long long>(tt) - 1 + k;
        if (ts < 0 || ts >= static_cast<long long>(t)) continue;
        for (std::size_t cc = 0; cc < ci; ++cc) {
          const double wk = wv[(c * ci + cc) * 3 + k];
          if (wk == 0.0) continue;
          const double* xrow = xv.data() + (static_cast<std::size_t>(ts) * ci + cc) * sites;
          for (std::size_t s = 0; s < sites; ++s) yrow[s] += wk * xrow[s];
        }
      }
    }

  const NodeId ix = input.id(), iw = weight.id(), ib = bias.id();
  return g.make("temporal_conv", std::move(out), {ix, iw, ib},
                [ix, iw, ib, t, ci, co, sites](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    const Tensor& xv2 = gg.value(ix);
    const Tensor& wv2 = gg.value(iw);
    if (gg.needs_grad(ix)) {
      Tensor& dx = gg.grad_buf(ix);
      // dx[t] += sum_k g[t+1-k] * w[:,:,k]
      for (std::size_t tt = 0; tt < t; ++tt)
        for (std::size_t cc = 0; cc < ci; ++cc) {
          double* dxrow = dx.data() + (tt * ci + cc) * sites;
          for (int k = 0; k < 3; ++k) {
            const long long tg = static_cast<long long>(tt) + 1 - k;
            if (tg < 0 || tg >= static_cast<long long>(t)) continue;
            for (std::size_t c = 0; c < co; ++c) {
              const double wk = wv2[(c * ci + cc) * 3 + k];
              if (wk == 0.0) continue;
              const double* grow =
                  go.data() + (static_cast<std::size_t>(tg) * co + c) * sites;
              for (std::size_t s = 0; s < sites; ++s) dxrow[s] += wk * grow[s];
            }
          }
        }
    }
    if (gg.needs_grad(iw)) {
      Tensor& dw = gg.grad_buf(iw);
      for (std::size_t tt = 0; tt < t; ++tt)
        for (std::size_t c = 0; c < co; ++c) {
          const double* grow = go.data() + (tt * co + c) * sites;
          for (int k = 0; k < 3; ++k) {
            const long long ts = static_cast<long long>(tt) - 1 + k;
            if (ts < 0 || ts >= static_cast<long long>(t)) continue;
            for (std::size_t cc = 0; cc < ci; ++cc) {
              const double* xrow =
                  xv2.data() + (static_cast<std::size_t>(ts) * ci + cc) * sites;
              double acc = 0.0;
              for (std::size_t s = 0; s < sites; ++s) acc += grow[s] * xrow[s];
              dw[(c * ci + cc) * 3 + k] += acc;
            }
          }
        }
    }
    if (gg.needs_grad(ib)) {
      Tensor& db = gg.grad_buf(ib);
      for (std::size_t tt = 0; tt < t; ++tt)
        for (std::size_t c = 0; c < co; ++c) {
          const double* grow = go.data() + (tt * co + c) * sites;
          double acc = 0.0;
          for (std::size_t s = 0; s < sites; ++s) acc += grow[s];
          db[c] += acc;
        }
    }
  });
}

}  // namespace stprog
