#pragma once

#include "stprog/graph.hpp"

namespace stprog {

/// Cosine similarity of two vectors; throws ValueError on a zero-norm
/// operand (degenerate feature collapse).
Var cosine_similarity(const Var& a, const Var& b);

/// Population covariance of row samples: Cov(H) = (1/B) (H-mean)^T (H-mean)
/// for H {B,d}. Divides by B, not B-1, so a single row yields the zero
/// matrix. Result is {d,d}, symmetric PSD.
Var covariance(const Var& h);

/// Frobenius norm, sqrt(sum of squares). Gradient at the origin is taken
/// as zero (subgradient).
Var frobenius_norm(const Var& m);

}  // namespace stprog
