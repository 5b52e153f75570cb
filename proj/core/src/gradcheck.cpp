#include "stprog/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stprog/errors.hpp"
#include "stprog/rng.hpp"

namespace stprog {

namespace {

double eval_scalar(const ScalarBuilder& f, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(g.leaf(t));
  return f(g, leaves).scalar();
}

std::vector<std::size_t> probe_indices(std::size_t size, std::size_t max_probes,
                                       Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_probes == 0 || max_probes >= size) return idx;
  // Partial Fisher-Yates: the first max_probes entries form a uniform
  // sample without replacement.
  for (std::size_t i = 0; i < max_probes; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_probes);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const ScalarBuilder& f,
                           const std::vector<Tensor>& inputs, double eps,
                           std::size_t max_probes_per_input,
                           std::uint64_t probe_seed) {
  // Analytic gradients.
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(g.leaf(t));
  Var loss = f(g, leaves);
  g.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const Var& v : leaves) analytic.push_back(g.grad(v));
  g.clear();

  GradCheckReport report;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Rng rng(mix_seed(probe_seed, k));
    for (std::size_t i : probe_indices(inputs[k].size(), max_probes_per_input, rng)) {
      const double saved = work[k][i];
      work[k][i] = saved + eps;
      const double up = eval_scalar(f, work);
      work[k][i] = saved - eps;
      const double down = eval_scalar(f, work);
      work[k][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(numeric)) {
        throw NumericError("grad_check: non-finite numeric gradient");
      }
      const double rel = std::abs(analytic[k][i] - numeric) /
                         std::max(1.0, std::abs(numeric));
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.probes;
    }
  }
  return report;
}

}  // namespace stprog
