#include "stprog/lstm.hpp"

#include "op_common.hpp"
#include "stprog/ops.hpp"

namespace stprog {

using detail::require;
using detail::same_graph;

std::pair<Var, Var> lstm_cell(const Var& x, const Var& h_prev,
                              const Var& c_prev, const LstmWeights& w) {
  same_graph("lstm_cell", x, h_prev);
  same_graph("lstm_cell", x, c_prev);
  const std::size_t hidden = h_prev.value().size();
  require(h_prev.value().rank() == 1 && c_prev.value().rank() == 1 &&
              c_prev.value().size() == hidden,
          "lstm_cell", "h_prev " + h_prev.value().shape_str() + " and c_prev " +
              c_prev.value().shape_str() + " must be equal-length vectors");
  require(w.w_ih.value().rank() == 2 && w.w_ih.value().extent(0) == 4 * hidden,
          "lstm_cell", "w_ih " + w.w_ih.value().shape_str() +
              " does not match hidden width " + std::to_string(hidden));
  require(w.w_hh.value().rank() == 2 && w.w_hh.value().extent(0) == 4 * hidden &&
              w.w_hh.value().extent(1) == hidden,
          "lstm_cell", "w_hh " + w.w_hh.value().shape_str() +
              " does not match hidden width " + std::to_string(hidden));

  Var gates = add(linear(x, w.w_ih, w.b_ih), linear(h_prev, w.w_hh, w.b_hh));
  Var gi = sigmoid(slice1d(gates, 0, hidden));
  Var gf = sigmoid(slice1d(gates, hidden, hidden));
  Var gg = tanh_op(slice1d(gates, 2 * hidden, hidden));
  Var go = sigmoid(slice1d(gates, 3 * hidden, hidden));
  Var c = add(mul(gf, c_prev), mul(gi, gg));
  Var h = mul(go, tanh_op(c));
  return {h, c};
}

}  // namespace stprog
