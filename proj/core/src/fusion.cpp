#include "stprog/fusion.hpp"

#include <cmath>

#include "op_common.hpp"
#include "stprog/attention.hpp"
#include "stprog/conv.hpp"
#include "stprog/ops.hpp"
#include "stprog/stats.hpp"

namespace stprog {

using detail::require;
using detail::same_graph;

Var encode_clinical(const Var& clin, const BoundParams& p) {
  const Tensor& x = clin.value();
  const Tensor& w1 = p["clin1.w"].value();
  if (x.rank() != 1 || x.extent(0) != w1.extent(1)) {
    throw ShapeError("encode_clinical: input " + x.shape_str() +
                     " does not match trained width " +
                     std::to_string(w1.extent(1)));
  }
  return linear(gelu(linear(clin, p["clin1.w"], p["clin1.b"])), p["clin2.w"],
                p["clin2.b"]);
}

namespace {

// One post-norm Transformer encoder layer over {T,d} token rows.
Var transformer_layer(const Var& tokens, const BoundParams& p) {
  Var q = linear(tokens, p["tfm.wq.w"], p["tfm.wq.b"]);
  Var k = linear(tokens, p["tfm.wk.w"], p["tfm.wk.b"]);
  Var v = linear(tokens, p["tfm.wv.w"], p["tfm.wv.b"]);
  Var attn = linear(scaled_dot_attention(q, k, v), p["tfm.wo.w"], p["tfm.wo.b"]);
  Var a = layer_norm(add(tokens, attn), p["tfm.ln1.g"], p["tfm.ln1.b"]);
  Var ff = linear(gelu(linear(a, p["tfm.ff1.w"], p["tfm.ff1.b"])),
                  p["tfm.ff2.w"], p["tfm.ff2.b"]);
  return layer_norm(add(a, ff), p["tfm.ln2.g"], p["tfm.ln2.b"]);
}

}  // namespace

Var encode_recon(const Var& recon, const BoundParams& p,
                 const ModelConfig& cfg) {
  const Tensor& rv = recon.value();
  require(rv.rank() == 5 && rv.extent(1) == 1, "encode_recon",
          "expects {T,1,D,H,W}, got " + rv.shape_str());
  (void)cfg;
  Var h1 = gelu(conv3d(recon, p["rec1.w"], p["rec1.b"], 2, 1));
  Var h2 = gelu(conv3d(h1, p["rec2.w"], p["rec2.b"], 2, 1));
  Var pooled = mean_keep_first2(h2);  // {T, recon_c2}
  Var tokens = linear(pooled, p["rectok.w"], p["rectok.b"]);  // {T,d}
  Var encoded = transformer_layer(tokens, p);
  return mean_keep_axis(encoded, 1);  // mean over the T tokens -> {d}
}

Var pool_img_features(const Var& attended, const BoundParams& p) {
  const Tensor& av = attended.value();
  require(av.rank() == 5, "pool_img_features",
          "expects {T,C,D,H,W}, got " + av.shape_str());
  Var pooled = mean_keep_axis(attended, 1);  // average over (t,d,h,w) -> {C}
  return linear(pooled, p["imgpool.w"], p["imgpool.b"]);
}

Var gated_fuse(const Var& h_img, const Var& h_recon, const Var& h_clin,
               const Var& gate0, const Var& gate1) {
  detail::require_same_shape("gated_fuse", h_img.value(), h_recon.value());
  detail::require_same_shape("gated_fuse", h_img.value(), h_clin.value());
  Var gated = add(scale_by(h_img, sigmoid(gate0)),
                  scale_by(h_recon, sigmoid(gate1)));
  return add(gated, h_clin);
}

Var gated_fuse(const Var& h_img, const Var& h_clin, const Var& gate0) {
  detail::require_same_shape("gated_fuse", h_img.value(), h_clin.value());
  return add(scale_by(h_img, sigmoid(gate0)), h_clin);
}

Var alignment_loss(const Var& h_img, const Var& h_clin) {
  Graph& g = same_graph("alignment_loss", h_img, h_clin);
  const Tensor& a = h_img.value();
  const Tensor& b = h_clin.value();
  require(a.rank() == 2 && b.rank() == 2, "alignment_loss",
          "expects {B,d} matrices");
  detail::require_same_shape("alignment_loss", a, b);
  const std::size_t bn = a.extent(0), d = a.extent(1);

  double loss = 0.0;
  for (std::size_t i = 0; i < bn; ++i) {
    const double* u = a.data() + i * d;
    const double* v = b.data() + i * d;
    double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += u[j] * v[j];
      nu2 += u[j] * u[j];
      nv2 += v[j] * v[j];
    }
    if (nu2 == 0.0 || nv2 == 0.0) {
      throw ValueError("alignment_loss: zero-norm feature row " +
                       std::to_string(i) + " (feature collapse)");
    }
    loss -= dot / std::sqrt(nu2 * nv2);
  }
  loss /= static_cast<double>(bn);

  const NodeId ia = h_img.id(), ib = h_clin.id();
  return g.make("alignment_loss", Tensor::scalar(loss), {ia, ib},
                [ia, ib, bn, d](Graph& gg, NodeId self) {
    const double gv = gg.grad_of(self)[0];
    const Tensor& a2 = gg.value(ia);
    const Tensor& b2 = gg.value(ib);
    const bool na = gg.needs_grad(ia), nb = gg.needs_grad(ib);
    if (!na && !nb) return;
    Tensor* da = na ? &gg.grad_buf(ia) : nullptr;
    Tensor* db = nb ? &gg.grad_buf(ib) : nullptr;
    const double invb = 1.0 / static_cast<double>(bn);
    for (std::size_t i = 0; i < bn; ++i) {
      const double* u = a2.data() + i * d;
      const double* v = b2.data() + i * d;
      double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += u[j] * v[j];
        nu2 += u[j] * u[j];
        nv2 += v[j] * v[j];
      }
      const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
      const double cos = dot / (nu * nv);
      // d(-cos)/du = -(v/(|u||v|) - cos*u/|u|^2)
      if (da) {
        double* dr = da->data() + i * d;
        for (std::size_t j = 0; j < d; ++j)
          dr[j] -= gv * invb * (v[j] / (nu * nv) - cos * u[j] / nu2);
      }
      if (db) {
        double* dr = db->data() + i * d;
        for (std::size_t j = 0; j < d; ++j)
          dr[j] -= gv * invb * (u[j] / (nu * nv) - cos * v[j] / nv2);
      }
    }
  });
}

Var disentanglement_loss(const Var& h_img, const Var& h_clin) {
  const Tensor& a = h_img.value();
  const Tensor& b = h_clin.value();
  require(a.rank() == 2 && b.rank() == 2, "disentanglement_loss",
          "expects {B,d} matrices");
  require(a.extent(1) == b.extent(1), "disentanglement_loss",
          "feature widths differ: " + a.shape_str() + " vs " + b.shape_str());
  const double d = static_cast<double>(a.extent(1));
  Var diff = sub(covariance(h_img), covariance(h_clin));
  return scale(frobenius_norm(diff), 1.0 / (d * d));
}

}  // namespace stprog
