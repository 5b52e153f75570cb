#include "stprog/stats.hpp"

#include <cmath>

#include "op_common.hpp"

namespace stprog {

using detail::require;
using detail::same_graph;

Var cosine_similarity(const Var& a, const Var& b) {
  Graph& g = same_graph("cosine_similarity", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 1 && bv.rank() == 1 && av.size() == bv.size(),
          "cosine_similarity",
          "expects equal-length vectors, got " + av.shape_str() + " and " +
              bv.shape_str());
  const std::size_t d = av.size();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += av[i] * bv[i];
    na2 += av[i] * av[i];
    nb2 += bv[i] * bv[i];
  }
  if (na2 == 0.0 || nb2 == 0.0) {
    throw ValueError("cosine_similarity: zero-norm vector (feature collapse)");
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double cos = dot / (na * nb);
  const NodeId ia = a.id(), ib = b.id();
  return g.make("cosine_similarity", Tensor::scalar(cos), {ia, ib},
                [ia, ib, d, na, nb, cos](Graph& gg, NodeId self) {
    const double gv = gg.grad_of(self)[0];
    const Tensor& av2 = gg.value(ia);
    const Tensor& bv2 = gg.value(ib);
    if (gg.needs_grad(ia)) {
      Tensor& da = gg.grad_buf(ia);
      for (std::size_t i = 0; i < d; ++i)
        da[i] += gv * (bv2[i] / (na * nb) - cos * av2[i] / (na * na));
    }
    if (gg.needs_grad(ib)) {
      Tensor& db = gg.grad_buf(ib);
      for (std::size_t i = 0; i < d; ++i)
        db[i] += gv * (av2[i] / (na * nb) - cos * bv2[i] / (nb * nb));
    }
  });
}

Var covariance(const Var& h) {
  Graph& g = detail::graph_of("covariance", h);
  const Tensor& hv = h.value();
  require(hv.rank() == 2, "covariance",
          "expects {B,d} samples, got " + hv.shape_str());
  const std::size_t b = hv.extent(0), d = hv.extent(1);
  const double invb = 1.0 / static_cast<double>(b);

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += hv[i * d + j];
  for (std::size_t j = 0; j < d; ++j) mean[j] *= invb;

  Tensor out({d, d});
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = hv.data() + i * d;
    for (std::size_t p = 0; p < d; ++p) {
      const double cp = row[p] - mean[p];
      if (cp == 0.0) continue;
      for (std::size_t q = 0; q < d; ++q)
        out[p * d + q] += cp * (row[q] - mean[q]);
    }
  }
  for (std::size_t i = 0; i < d * d; ++i) out[i] *= invb;

  const NodeId ih = h.id();
  return g.make("covariance", std::move(out), {ih},
                [ih, b, d, invb](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ih)) return;
    const Tensor& go = gg.grad_of(self);
    const Tensor& hv2 = gg.value(ih);
    Tensor& dh = gg.grad_buf(ih);

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += hv2[i * d + j];
    for (std::size_t j = 0; j < d; ++j) mean[j] *= invb;

    // dXc = (1/B) Xc (G + G^T); centering then distributes the column mean.
    std::vector<double> sym(d * d);
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q < d; ++q)
        sym[p * d + q] = (go[p * d + q] + go[q * d + p]) * invb;

    std::vector<double> dxc(b * d, 0.0);
    std::vector<double> colsum(d, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      const double* row = hv2.data() + i * d;
      for (std::size_t q = 0; q < d; ++q) {
        double acc = 0.0;
        for (std::size_t p = 0; p < d; ++p)
          acc += (row[p] - mean[p]) * sym[p * d + q];
        dxc[i * d + q] = acc;
        colsum[q] += acc;
      }
    }
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j)
        dh[i * d + j] += dxc[i * d + j] - invb * colsum[j];
  });
}

Var frobenius_norm(const Var& m) {
  Graph& g = detail::graph_of("frobenius_norm", m);
  const Tensor& mv = m.value();
  double s2 = 0.0;
  for (std::size_t i = 0; i < mv.size(); ++i) s2 += mv[i] * mv[i];
  const double norm = std::sqrt(s2);
  const NodeId im = m.id();
  return g.make("frobenius_norm", Tensor::scalar(norm), {im},
                [im, norm](Graph& gg, NodeId self) {
    if (!gg.needs_grad(im) || norm == 0.0) return;
    const double gv = gg.grad_of(self)[0] / norm;
    const Tensor& mv2 = gg.value(im);
    Tensor& dm = gg.grad_buf(im);
    for (std::size_t i = 0; i < mv2.size(); ++i) dm[i] += gv * mv2[i];
  });
}

}  // namespace stprog
