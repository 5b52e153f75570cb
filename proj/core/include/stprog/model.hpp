#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stprog/graph.hpp"

namespace stprog {

/// Architecture variants used by the comparison harness.
enum class Variant {
  Spatial3d,      // spatial encoder -> pooled features -> heads
  Spatial3dLstm,  // pooled spatial features tiled over T through an LSTM
  Full4d,         // timestep embedding, separable block, attention, recon
};

Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);

struct ModelConfig {
  std::size_t timesteps = 12;    // postoperative years
  std::size_t embed_dim = 4;     // timestep embedding width
  std::size_t enc_mid = 8;       // first encoder layer channels
  std::size_t feat_channels = 8; // encoder output channels
  std::size_t block_channels = 8;
  std::size_t key_dim = 8;       // attention key width
  std::size_t recon_c1 = 4;      // recon-encoder conv channels
  std::size_t recon_c2 = 8;
  std::size_t up_mid = 4;        // upsample mid channels
  std::size_t fused_dim = 32;    // head input width
  std::size_t clin_dim = 6;
  std::size_t lstm_hidden = 32;
  std::size_t depth = 40, height = 32, width = 32;

  /// Two stride-2 encoder layers and the mirrored stride-2 upsample chain
  /// require every spatial extent to be a positive multiple of 4.
  void validate() const;

  std::size_t enc_depth() const { return depth / 4; }
  std::size_t enc_height() const { return height / 4; }
  std::size_t enc_width() const { return width / 4; }
};

/// Every learnable array of the network, addressable by stable names.
class ModelParams {
 public:
  static ModelParams init(const ModelConfig& cfg, Variant variant,
                          std::uint64_t seed);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return values_.count(name) != 0; }

  std::map<std::string, Tensor>& values() { return values_; }
  const std::map<std::string, Tensor>& values() const { return values_; }
  std::size_t total_size() const;

 private:
  std::map<std::string, Tensor> values_;
};

/// Graph leaves for one forward pass, keyed by parameter name.
struct BoundParams {
  std::map<std::string, Var> vars;
  const Var& operator[](const std::string& name) const;
};
BoundParams bind_params(Graph& g, const ModelParams& params);

/// Learnable per-timestep embedding table (a lookup, not a function of t).
Var embed_timesteps(const BoundParams& p);

/// Two stride-2 3x3x3 conv layers with GELU: {1,D,H,W} -> {C_f,D/4,H/4,W/4}.
Var spatial_encoder(const Var& volume, const BoundParams& p,
                    const ModelConfig& cfg);

/// Stacks the spatial features T times and appends each timestep's embedding
/// row as constant channels: {C,D',H',W'} + {T,E} -> {T,C+E,D',H',W'}.
Var broadcast_concat(const Var& x_ct, const Var& embed);

/// Per-timestep shared 3x3x3 conv, GELU, length-3 temporal conv, GELU.
Var st_separable_block(const Var& st_input, const BoundParams& p);

/// Attention over timesteps at every spatial site (embedding rows
/// re-concatenated before the Q/K/V projections).
Var attention_over_time(const Var& features, const Var& embed,
                        const BoundParams& p);

/// Two stride-2 transposed-conv layers restoring the input extents:
/// {T,C,D/4,H/4,W/4} -> {T,1,D,H,W}.
Var reconstruct_upsample(const Var& attended, const BoundParams& p,
                         const ModelConfig& cfg);

struct ImagingPathway {
  Var attended;  // {T,C,D',H',W'}
  Var recon;     // {T,1,D,H,W}
};
ImagingPathway imaging_pathway(const Var& volume, const BoundParams& p,
                               const ModelConfig& cfg);

/// Parameter count of the factorized space+time block against a dense
/// 3x3x3x3 spatiotemporal kernel at equal channel width C:
///   separable = 30C^2 + 2C,  dense = 81C^2 + C.
struct SeparableCount {
  long long separable_block;
  long long dense_baseline;
  double reduction_pct;
};
SeparableCount count_separable_params(std::size_t channels);
SeparableCount count_separable_params(const ModelConfig& cfg);

}  // namespace stprog
