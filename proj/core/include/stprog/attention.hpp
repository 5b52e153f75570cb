#pragma once

#include "stprog/graph.hpp"

namespace stprog {

/// softmax(Q K^T / sqrt(d_k)) V over token rows. Q,K {T,d_k}; V {T,d_v}.
/// Attention rows are nonnegative and sum to 1.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v);

/// Attention over timesteps, computed independently at every spatial site of
/// a {T,C,D,H,W} feature map. At each site the T tokens are the per-timestep
/// channel vectors with the timestep embedding rows re-concatenated:
/// X_t = [features[t,:,site]; E[t,:]]. Q/K/V are shared pointwise projections
/// (wq,wk {d_k, C+Ew}; wv {C, C+Ew}); the output keeps the input layout.
Var temporal_site_attention(const Var& features, const Var& embed,
                            const Var& wq, const Var& wk, const Var& wv);

}  // namespace stprog
