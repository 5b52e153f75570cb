#pragma once

#include <vector>

#include "stprog/graph.hpp"

namespace stprog {

// Elementwise (exact shape match; no broadcasting).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

// Linear algebra.
Var matmul(const Var& a, const Var& b);        // {m,k} x {k,n} -> {m,n}
Var linear(const Var& x, const Var& w, const Var& b);  // x {in} or {B,in}

// Shape manipulation.
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice1d(const Var& x, std::size_t offset, std::size_t len);
Var stack_rows(const std::vector<Var>& rows);  // k vectors {d} -> {k,d}

// Reductions.
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var mean_keep_axis(const Var& x, std::size_t axis);  // -> {extent(axis)}
Var mean_keep_first2(const Var& x);                  // {A,B,...} -> {A,B}
Var dot_const(const Var& x, const std::vector<double>& weights);  // scalar

// Activations and normalization.
Var gelu(const Var& x);  // exact Gaussian-CDF formulation
Var sigmoid(const Var& x);
Var tanh_op(const Var& x);
Var softmax(const Var& x, std::size_t axis);
Var layer_norm(const Var& x, const Var& gain, const Var& bias,
               double eps = 1e-5);  // normalizes the last axis

// Multiply a tensor by a size-1 gate value.
Var scale_by(const Var& x, const Var& s);

// Scalar helpers for exact activation math (shared with kernels).
double gelu_exact(double x);
double gelu_exact_grad(double x);
double sigmoid_stable(double x);

}  // namespace stprog
