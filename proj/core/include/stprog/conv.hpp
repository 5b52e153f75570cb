#pragma once

#include "stprog/graph.hpp"

namespace stprog {

/// 3x3x3 volumetric convolution (correlation convention, no kernel flip).
/// Input {Ci,D,H,W} or batched {N,Ci,D,H,W}; weight {Co,Ci,3,3,3}; bias {Co}.
/// Output extent along each spatial axis: (in + 2*padding - 3) / stride + 1.
Var conv3d(const Var& input, const Var& weight, const Var& bias, int stride,
           int padding);

/// Transposed 3-D convolution. Weight layout {Cin,Cout,k,k,k} so that the
/// weight of a forward conv3d ({Co,Ci,3,3,3}) applied here maps Co -> Ci and
/// the pair satisfies the adjoint identity
///   <conv3d(x,w), y> == <x, conv_transpose3d(y,w)>.
/// Output extent: (in - 1)*stride - 2*padding + k.
Var conv_transpose3d(const Var& input, const Var& weight, int stride,
                     int padding);
Var conv_transpose3d(const Var& input, const Var& weight, const Var& bias,
                     int stride, int padding);

/// Length-3 convolution along the leading (timestep) axis of a {T,C,D,H,W}
/// tensor, applied identically at every spatial site. Zero padding of 1 at
/// the t boundaries keeps T unchanged. Weight {Co,Ci,3}; bias {Co}.
Var temporal_conv(const Var& input, const Var& weight, const Var& bias);

}  // namespace stprog
