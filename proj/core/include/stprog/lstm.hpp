#pragma once

#include <utility>

#include "stprog/graph.hpp"

namespace stprog {

/// Weights of one LSTM cell with hidden width H and input width I.
/// Gate order in the stacked {4H} layout: input, forget, candidate, output.
struct LstmWeights {
  Var w_ih;  // {4H, I}
  Var b_ih;  // {4H}
  Var w_hh;  // {4H, H}
  Var b_hh;  // {4H}
};

/// Standard four-gate recurrence:
///   i,f,o = sigmoid(...), g = tanh(...),
///   c = f*c_prev + i*g,  h = o*tanh(c).
std::pair<Var, Var> lstm_cell(const Var& x, const Var& h_prev,
                              const Var& c_prev, const LstmWeights& w);

}  // namespace stprog
