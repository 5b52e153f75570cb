#include "stprog/heads.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "op_common.hpp"
#include "stprog/errors.hpp"
#include "stprog/ops.hpp"

namespace stprog {

using detail::require;

namespace {
constexpr double kProbClamp = 1e-12;

Var head_mlp(const Var& h_fused, const BoundParams& p, const char* l1,
             const char* l2) {
  const Tensor& x = h_fused.value();
  const Tensor& w1 = p[std::string(l1) + ".w"].value();
  if (x.rank() != 1 || x.extent(0) != w1.extent(1)) {
    throw ShapeError(std::string("head: input ") + x.shape_str() +
                     " does not match expected width " +
                     std::to_string(w1.extent(1)));
  }
  Var h = gelu(linear(h_fused, p[std::string(l1) + ".w"], p[std::string(l1) + ".b"]));
  return linear(h, p[std::string(l2) + ".w"], p[std::string(l2) + ".b"]);
}
}  // namespace

void validate_labels(const Labels& labels, std::size_t timesteps) {
  const int t = static_cast<int>(timesteps);
  if (labels.recurrence_year < 1 || labels.recurrence_year > t) {
    throw ValueError("recurrence_year " + std::to_string(labels.recurrence_year) +
                     " out of range 1.." + std::to_string(t));
  }
  if (labels.survival_year < 1 || labels.survival_year > t) {
    throw ValueError("survival_year " + std::to_string(labels.survival_year) +
                     " out of range 1.." + std::to_string(t));
  }
}

Var recurrence_head(const Var& h_fused, const BoundParams& p) {
  return sigmoid(head_mlp(h_fused, p, "rhead1", "rhead2"));
}

Var survival_head(const Var& h_fused, const BoundParams& p) {
  return softmax(head_mlp(h_fused, p, "shead1", "shead2"), 0);
}

Var recurrence_loss(const Var& rec_probs, int recurrence_year) {
  Graph& g = detail::graph_of("recurrence_loss", rec_probs);
  const Tensor& pv = rec_probs.value();
  require(pv.rank() == 1, "recurrence_loss", "expects a probability vector");
  const std::size_t t = pv.extent(0);
  if (recurrence_year < 1 || recurrence_year > static_cast<int>(t)) {
    throw ValueError("recurrence_loss: year " + std::to_string(recurrence_year) +
                     " out of range 1.." + std::to_string(t));
  }
  const std::size_t target = static_cast<std::size_t>(recurrence_year - 1);

  double loss = 0.0;
  for (std::size_t j = 0; j < t; ++j) {
    if (j == target) {
      loss -= std::log(std::max(pv[j], kProbClamp));
    } else {
      loss -= std::log(std::max(1.0 - pv[j], kProbClamp));
    }
  }
  loss /= static_cast<double>(t);

  const NodeId ip = rec_probs.id();
  return g.make("recurrence_loss", Tensor::scalar(loss), {ip},
                [ip, t, target](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ip)) return;
    const double gv = gg.grad_of(self)[0] / static_cast<double>(t);
    const Tensor& pv2 = gg.value(ip);
    Tensor& dp = gg.grad_buf(ip);
    for (std::size_t j = 0; j < t; ++j) {
      if (j == target) {
        if (pv2[j] > kProbClamp) dp[j] -= gv / pv2[j];
      } else {
        if (1.0 - pv2[j] > kProbClamp) dp[j] += gv / (1.0 - pv2[j]);
      }
    }
  });
}

Var survival_loss(const Var& surv_probs, int survival_year,
                  SurvivalLossKind kind) {
  Graph& g = detail::graph_of("survival_loss", surv_probs);
  const Tensor& pv = surv_probs.value();
  require(pv.rank() == 1, "survival_loss", "expects a probability vector");
  const std::size_t t = pv.extent(0);
  if (survival_year < 1 || survival_year > static_cast<int>(t)) {
    throw ValueError("survival_loss: year " + std::to_string(survival_year) +
                     " out of range 1.." + std::to_string(t));
  }
  const std::size_t target = static_cast<std::size_t>(survival_year - 1);

  if (kind == SurvivalLossKind::SquaredExpectedYear) {
    std::vector<double> years(t);
    for (std::size_t j = 0; j < t; ++j) years[j] = static_cast<double>(j + 1);
    Var expected = dot_const(surv_probs, years);
    Var diff = add_scalar(expected, -static_cast<double>(survival_year));
    return mul(diff, diff);
  }

  const double loss = -std::log(std::max(pv[target], kProbClamp));
  const NodeId ip = surv_probs.id();
  return g.make("survival_loss", Tensor::scalar(loss), {ip},
                [ip, target](Graph& gg, NodeId self) {
    if (!gg.needs_grad(ip)) return;
    const double gv = gg.grad_of(self)[0];
    const Tensor& pv2 = gg.value(ip);
    if (pv2[target] > kProbClamp) {
      gg.grad_buf(ip)[target] -= gv / pv2[target];
    }
  });
}

namespace {
void check_finite(const char* label, double v) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("total_loss: non-finite ") + label +
                       " component (" + std::to_string(v) + ")");
  }
}
}  // namespace

Var total_loss(const Var& l_surv, const Var& l_recur, const Var& l_align,
               const Var& l_dis, const LossWeights& w) {
  check_finite("survival", l_surv.scalar());
  check_finite("recurrence", l_recur.scalar());
  check_finite("alignment", l_align.scalar());
  check_finite("disentanglement", l_dis.scalar());
  Var task = add(scale(l_surv, w.surv), scale(l_recur, w.recur));
  Var reg = add(scale(l_align, w.align), scale(l_dis, w.dis));
  return add(task, reg);
}

double total_loss_value(double l_surv, double l_recur, double l_align,
                        double l_dis, const LossWeights& w) {
  check_finite("survival", l_surv);
  check_finite("recurrence", l_recur);
  check_finite("alignment", l_align);
  check_finite("disentanglement", l_dis);
  return w.surv * l_surv + w.recur * l_recur + w.align * l_align + w.dis * l_dis;
}

int predict_time(const Tensor& probs) {
  if (probs.size() == 0) throw ValueError("predict_time: empty vector");
  std::size_t best = 0;
  for (std::size_t j = 1; j < probs.size(); ++j) {
    if (probs[j] > probs[best]) best = j;  // strict: ties keep the earliest
  }
  return static_cast<int>(best) + 1;
}

int predict_time(const std::vector<double>& probs) {
  return predict_time(Tensor({probs.size()}, probs));
}

MetricsSummary compute_metrics(const std::vector<int>& predicted,
                               const std::vector<int>& actual) {
  if (predicted.size() != actual.size()) {
    throw ShapeError("compute_metrics: length mismatch " +
                     std::to_string(predicted.size()) + " vs " +
                     std::to_string(actual.size()));
  }
  if (predicted.empty()) throw ValueError("compute_metrics: empty sample list");
  MetricsSummary s;
  s.n = predicted.size();
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double err = static_cast<double>(predicted[i] - actual[i]);
    if (std::abs(err) <= 1.0) s.taa += 1.0;
    s.mse += err * err;
    s.mae += std::abs(err);
  }
  const double n = static_cast<double>(s.n);
  s.taa /= n;
  s.mse /= n;
  s.mae /= n;
  return s;
}

std::string metrics_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["split"] = r.split;
  j["taa"] = r.m.taa;
  j["mse"] = r.m.mse;
  j["mae"] = r.m.mae;
  j["n"] = r.m.n;
  return j.dump();
}

std::string format_metrics_table(
    const std::vector<std::pair<std::string, MetricsSummary>>& rows) {
  std::size_t label_w = 5;
  for (const auto& [label, m] : rows) label_w = std::max(label_w, label.size());
  std::ostringstream os;
  os << std::left;
  os.width(static_cast<std::streamsize>(label_w));
  os << "Model";
  os << "  " << "TAA     " << "MSE       " << "MAE";
  os << '\n';
  for (const auto& [label, m] : rows) {
    os.width(static_cast<std::streamsize>(label_w));
    os << label;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "  %.4f  %8.4f  %8.4f", m.taa, m.mse, m.mae);
    os << buf << '\n';
  }
  return os.str();
}

}  // namespace stprog
