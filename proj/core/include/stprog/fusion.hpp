#pragma once

#include "stprog/graph.hpp"
#include "stprog/model.hpp"

namespace stprog {

/// Two-layer perceptron C_clin -> d -> d with GELU between the layers.
/// Input must already be standardized.
Var encode_clinical(const Var& clin, const BoundParams& p);

/// Per-timestep conv stack + global average pool to a width-d token, one
/// post-norm Transformer encoder layer over the T tokens (single-head
/// scaled-dot-product self-attention, residuals, layer norm, 2d feed
/// forward), then the mean over tokens.
Var encode_recon(const Var& recon, const BoundParams& p,
                 const ModelConfig& cfg);

/// Global average over (t,d,h,w) per channel, then a linear map C -> d.
Var pool_img_features(const Var& attended, const BoundParams& p);

/// h_fused = sigmoid(gate0) * h_img + sigmoid(gate1) * h_recon + h_clin.
/// The clinical term enters ungated.
Var gated_fuse(const Var& h_img, const Var& h_recon, const Var& h_clin,
               const Var& gate0, const Var& gate1);
/// Variant without a reconstruction pathway: sigmoid(gate0)*h_img + h_clin.
Var gated_fuse(const Var& h_img, const Var& h_clin, const Var& gate0);

/// Negative mean rowwise cosine similarity between per-sample imaging and
/// clinical feature rows ({B,d} each). Value in [-1, 1]; throws ValueError
/// on a zero-norm row.
Var alignment_loss(const Var& h_img, const Var& h_clin);

/// || Cov(H_img) - Cov(H_clin) ||_F / d^2 with population covariance.
/// Nonnegative; exactly zero for identical batches and for B = 1.
Var disentanglement_loss(const Var& h_img, const Var& h_clin);

}  // namespace stprog
