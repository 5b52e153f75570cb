#pragma once

// Internal helpers shared by the op translation units.

#include <string>

#include "stprog/errors.hpp"
#include "stprog/graph.hpp"

namespace stprog::detail {

inline Graph& same_graph(const char* op, const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph()) {
    throw Error(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph();
}

inline Graph& graph_of(const char* op, const Var& a) {
  if (!a.valid()) throw Error(std::string(op) + ": invalid operand");
  return *a.graph();
}

inline void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw ShapeError(std::string(op) + ": " + msg);
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

}  // namespace stprog::detail
