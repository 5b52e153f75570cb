#pragma once

#include <string>
#include <vector>

#include "stprog/graph.hpp"
#include "stprog/model.hpp"

namespace stprog {

/// Event-year labels, both in 1..T.
struct Labels {
  int recurrence_year = 1;
  int survival_year = 1;
};
void validate_labels(const Labels& labels, std::size_t timesteps);

/// linear d->d, GELU, linear d->T, sigmoid: per-year recurrence probability.
Var recurrence_head(const Var& h_fused, const BoundParams& p);

/// linear d->d, GELU, linear d->T, softmax over the years.
Var survival_head(const Var& h_fused, const BoundParams& p);

enum class SurvivalLossKind {
  CrossEntropy,          // -log p[year]
  SquaredExpectedYear,   // (sum_j j*p_j - year)^2
};

/// Mean over years of binary cross-entropy against the one-hot recurrence
/// year; probabilities clamped at 1e-12.
Var recurrence_loss(const Var& rec_probs, int recurrence_year);

/// Survival loss; cross-entropy by default, squared-expected-year variant
/// behind the flag.
Var survival_loss(const Var& surv_probs, int survival_year,
                  SurvivalLossKind kind = SurvivalLossKind::CrossEntropy);

struct LossWeights {
  double surv = 0.5;
  double recur = 0.3;
  double align = 0.1;
  double dis = 0.1;
};

/// Weighted multi-task combination. Throws NumericError naming the first
/// non-finite component.
Var total_loss(const Var& l_surv, const Var& l_recur, const Var& l_align,
               const Var& l_dis, const LossWeights& w = {});
double total_loss_value(double l_surv, double l_recur, double l_align,
                        double l_dis, const LossWeights& w = {});

/// argmax year (1-based); ties break toward the earliest year.
int predict_time(const Tensor& probs);
int predict_time(const std::vector<double>& probs);

struct MetricsSummary {
  double taa = 0.0;  // fraction with |pred - true| <= 1
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
};
MetricsSummary compute_metrics(const std::vector<int>& predicted,
                               const std::vector<int>& actual);

struct MetricsReport {
  std::string split;
  MetricsSummary m;
};

/// {"split":...,"taa":...,"mse":...,"mae":...,"n":...}
std::string metrics_to_json(const MetricsReport& r);

/// Aligned rows with TAA/MSE/MAE columns.
std::string format_metrics_table(
    const std::vector<std::pair<std::string, MetricsSummary>>& rows);

}  // namespace stprog
