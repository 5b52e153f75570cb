#include "stprog/model.hpp"

#include <cmath>

#include "op_common.hpp"
#include "stprog/attention.hpp"
#include "stprog/conv.hpp"
#include "stprog/errors.hpp"
#include "stprog/ops.hpp"
#include "stprog/rng.hpp"

namespace stprog {

using detail::require;

Variant variant_from_string(const std::string& name) {
  if (name == "3d_only") return Variant::Spatial3d;
  if (name == "3d_lstm") return Variant::Spatial3dLstm;
  if (name == "full") return Variant::Full4d;
  throw ConfigError("unknown variant '" + name +
                    "' (valid: 3d_only, 3d_lstm, full)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Spatial3d: return "3d_only";
    case Variant::Spatial3dLstm: return "3d_lstm";
    case Variant::Full4d: return "full";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto check_extent = [](const char* axis, std::size_t e) {
    if (e < 4 || e % 4 != 0) {
      throw ConfigError(std::string("model extent ") + axis + "=" +
                        std::to_string(e) +
                        " unsupported; the encoder/upsample chain needs a "
                        "positive multiple of 4 (minimum 4)");
    }
  };
  check_extent("depth", depth);
  check_extent("height", height);
  check_extent("width", width);
  for (auto [tag, v] : std::initializer_list<std::pair<const char*, std::size_t>>{
           {"timesteps", timesteps},
           {"embed_dim", embed_dim},
           {"feat_channels", feat_channels},
           {"block_channels", block_channels},
           {"key_dim", key_dim},
           {"recon_c1", recon_c1},
           {"recon_c2", recon_c2},
           {"up_mid", up_mid},
           {"fused_dim", fused_dim},
           {"clin_dim", clin_dim},
           {"lstm_hidden", lstm_hidden}}) {
    if (v == 0) {
      throw ConfigError(std::string("model dimension ") + tag + " must be >= 1");
    }
  }
}

namespace {

enum class Init { Uniform, Zero, One };

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  Init init = Init::Uniform;
  std::size_t fan_in = 1;
};

void add_linear(std::vector<ParamSpec>& out, const std::string& prefix,
                std::size_t o, std::size_t i) {
  out.push_back({prefix + ".w", {o, i}, Init::Uniform, i});
  out.push_back({prefix + ".b", {o}, Init::Uniform, i});
}

void add_conv(std::vector<ParamSpec>& out, const std::string& prefix,
              std::size_t co, std::size_t ci) {
  out.push_back({prefix + ".w", {co, ci, 3, 3, 3}, Init::Uniform, ci * 27});
  out.push_back({prefix + ".b", {co}, Init::Uniform, ci * 27});
}

void add_convt(std::vector<ParamSpec>& out, const std::string& prefix,
               std::size_t ci, std::size_t co, std::size_t k) {
  out.push_back({prefix + ".w", {ci, co, k, k, k}, Init::Uniform, ci * k * k * k});
  out.push_back({prefix + ".b", {co}, Init::Uniform, ci * k * k * k});
}

std::vector<ParamSpec> param_specs(const ModelConfig& c, Variant variant) {
  std::vector<ParamSpec> out;
  // shared trunk
  add_conv(out, "enc1", c.enc_mid, 1);
  add_conv(out, "enc2", c.feat_channels, c.enc_mid);
  add_linear(out, "clin1", c.fused_dim, c.clin_dim);
  add_linear(out, "clin2", c.fused_dim, c.fused_dim);
  out.push_back({"gate0", {1}, Init::Uniform, 1});
  add_linear(out, "rhead1", c.fused_dim, c.fused_dim);
  add_linear(out, "rhead2", c.timesteps, c.fused_dim);
  add_linear(out, "shead1", c.fused_dim, c.fused_dim);
  add_linear(out, "shead2", c.timesteps, c.fused_dim);

  switch (variant) {
    case Variant::Spatial3d:
      add_linear(out, "pool3d", c.fused_dim, c.feat_channels);
      break;
    case Variant::Spatial3dLstm: {
      const std::size_t h = c.lstm_hidden;
      out.push_back({"lstm.w_ih", {4 * h, c.feat_channels}, Init::Uniform, h});
      out.push_back({"lstm.b_ih", {4 * h}, Init::Uniform, h});
      out.push_back({"lstm.w_hh", {4 * h, h}, Init::Uniform, h});
      out.push_back({"lstm.b_hh", {4 * h}, Init::Uniform, h});
      break;
    }
    case Variant::Full4d: {
      out.push_back({"embed.table", {c.timesteps, c.embed_dim}, Init::Uniform,
                     c.embed_dim});
      const std::size_t cin = c.feat_channels + c.embed_dim;
      add_conv(out, "blk.spatial", c.block_channels, cin);
      out.push_back({"blk.temporal.w", {c.block_channels, c.block_channels, 3},
                     Init::Uniform, c.block_channels * 3});
      out.push_back({"blk.temporal.b", {c.block_channels}, Init::Uniform,
                     c.block_channels * 3});
      const std::size_t xw = c.block_channels + c.embed_dim;
      out.push_back({"attn.wq", {c.key_dim, xw}, Init::Uniform, xw});
      out.push_back({"attn.wk", {c.key_dim, xw}, Init::Uniform, xw});
      out.push_back({"attn.wv", {c.block_channels, xw}, Init::Uniform, xw});
      add_convt(out, "up1", c.block_channels, c.up_mid, 2);
      add_convt(out, "up2", c.up_mid, 1, 2);
      add_conv(out, "rec1", c.recon_c1, 1);
      add_conv(out, "rec2", c.recon_c2, c.recon_c1);
      add_linear(out, "rectok", c.fused_dim, c.recon_c2);
      const std::size_t d = c.fused_dim;
      add_linear(out, "tfm.wq", d, d);
      add_linear(out, "tfm.wk", d, d);
      add_linear(out, "tfm.wv", d, d);
      add_linear(out, "tfm.wo", d, d);
      out.push_back({"tfm.ln1.g", {d}, Init::One});
      out.push_back({"tfm.ln1.b", {d}, Init::Zero});
      out.push_back({"tfm.ln2.g", {d}, Init::One});
      out.push_back({"tfm.ln2.b", {d}, Init::Zero});
      add_linear(out, "tfm.ff1", 2 * d, d);
      add_linear(out, "tfm.ff2", d, 2 * d);
      add_linear(out, "imgpool", c.fused_dim, c.block_channels);
      out.push_back({"gate1", {1}, Init::Uniform, 1});
      break;
    }
  }
  return out;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, Variant variant,
                              std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  for (const ParamSpec& spec : param_specs(cfg, variant)) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case Init::Zero:
        break;
      case Init::One:
        t.fill(1.0);
        break;
      case Init::Uniform: {
        // Seed derived per parameter name: initialization is independent of
        // creation order and stable across variants.
        Rng rng(mix_seed(seed, hash_str(spec.name)));
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (std::size_t i = 0; i < t.size(); ++i)
          t[i] = rng.uniform(-bound, bound);
        break;
      }
    }
    p.values_.emplace(spec.name, std::move(t));
  }
  return p;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ModelParams::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, t] : values_) n += t.size();
  return n;
}

const Var& BoundParams::operator[](const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw Error("unbound parameter '" + name + "'");
  return it->second;
}

BoundParams bind_params(Graph& g, const ModelParams& params) {
  BoundParams bound;
  for (const auto& [name, tensor] : params.values()) {
    bound.vars.emplace(name, g.leaf(tensor, name));
  }
  return bound;
}

Var embed_timesteps(const BoundParams& p) { return p["embed.table"]; }

Var spatial_encoder(const Var& volume, const BoundParams& p,
                    const ModelConfig& cfg) {
  const Tensor& v = volume.value();
  require(v.rank() == 4 && v.extent(0) == 1, "spatial_encoder",
          "expects a {1,D,H,W} volume, got " + v.shape_str());
  if (v.extent(1) != cfg.depth || v.extent(2) != cfg.height ||
      v.extent(3) != cfg.width) {
    throw ShapeError("spatial_encoder: volume " + v.shape_str() +
                     " does not match configured extents [" +
                     std::to_string(cfg.depth) + "x" +
                     std::to_string(cfg.height) + "x" +
                     std::to_string(cfg.width) + "]");
  }
  Var h1 = gelu(conv3d(volume, p["enc1.w"], p["enc1.b"], 2, 1));
  return gelu(conv3d(h1, p["enc2.w"], p["enc2.b"], 2, 1));
}

Var broadcast_concat(const Var& x_ct, const Var& embed) {
  Graph& g = detail::same_graph("broadcast_concat", x_ct, embed);
  const Tensor& xv = x_ct.value();
  const Tensor& ev = embed.value();
  require(xv.rank() == 4, "broadcast_concat",
          "features must be {C,D,H,W}, got " + xv.shape_str());
  require(ev.rank() == 2, "broadcast_concat",
          "embedding must be {T,E}, got " + ev.shape_str());
  const std::size_t c = xv.extent(0);
  const std::size_t sites = xv.extent(1) * xv.extent(2) * xv.extent(3);
  const std::size_t t = ev.extent(0), e = ev.extent(1);

  Tensor out({t, c + e, xv.extent(1), xv.extent(2), xv.extent(3)});
  for (std::size_t tt = 0; tt < t; ++tt) {
    double* base = out.data() + tt * (c + e) * sites;
    for (std::size_t i = 0; i < c * sites; ++i) base[i] = xv[i];
    for (std::size_t j = 0; j < e; ++j) {
      const double val = ev[tt * e + j];
      double* row = base + (c + j) * sites;
      for (std::size_t s = 0; s < sites; ++s) row[s] = val;
    }
  }
  const NodeId ix = x_ct.id(), ie = embed.id();
  return g.make("broadcast_concat", std::move(out), {ix, ie},
                [ix, ie, t, c, e, sites](Graph& gg, NodeId self) {
    const Tensor& go = gg.grad_of(self);
    if (gg.needs_grad(ix)) {
      Tensor& dx = gg.grad_buf(ix);
      for (std::size_t tt = 0; tt < t; ++tt) {
        const double* base = go.data() + tt * (c + e) * sites;
        for (std::size_t i = 0; i < c * sites; ++i) dx[i] += base[i];
      }
    }
    if (gg.needs_grad(ie)) {
      Tensor& de = gg.grad_buf(ie);
      for (std::size_t tt = 0; tt < t; ++tt) {
        const double* base = go.data() + tt * (c + e) * sites;
        for (std::size_t j = 0; j < e; ++j) {
          const double* row = base + (c + j) * sites;
          double acc = 0.0;
          for (std::size_t s = 0; s < sites; ++s) acc += row[s];
          de[tt * e + j] += acc;
        }
      }
    }
  });
}

Var st_separable_block(const Var& st_input, const BoundParams& p) {
  Var spatial =
      gelu(conv3d(st_input, p["blk.spatial.w"], p["blk.spatial.b"], 1, 1));
  return gelu(temporal_conv(spatial, p["blk.temporal.w"], p["blk.temporal.b"]));
}

Var attention_over_time(const Var& features, const Var& embed,
                        const BoundParams& p) {
  return temporal_site_attention(features, embed, p["attn.wq"], p["attn.wk"],
                                 p["attn.wv"]);
}

Var reconstruct_upsample(const Var& attended, const BoundParams& p,
                         const ModelConfig& cfg) {
  Var u1 = gelu(conv_transpose3d(attended, p["up1.w"], p["up1.b"], 2, 0));
  Var out = conv_transpose3d(u1, p["up2.w"], p["up2.b"], 2, 0);
  const Tensor& ov = out.value();
  if (ov.extent(2) != cfg.depth || ov.extent(3) != cfg.height ||
      ov.extent(4) != cfg.width) {
    throw ShapeError("reconstruct_upsample: restored extents " + ov.shape_str() +
                     " do not match declared input extents");
  }
  return out;
}

ImagingPathway imaging_pathway(const Var& volume, const BoundParams& p,
                               const ModelConfig& cfg) {
  Var x_ct = spatial_encoder(volume, p, cfg);
  Var embed = embed_timesteps(p);
  Var st = broadcast_concat(x_ct, embed);
  Var feat = st_separable_block(st, p);
  Var attended = attention_over_time(feat, embed, p);
  Var recon = reconstruct_upsample(attended, p, cfg);
  return {attended, recon};
}

SeparableCount count_separable_params(std::size_t channels) {
  const long long c = static_cast<long long>(channels);
  SeparableCount out{};
  out.separable_block = c * c * 27 + c + c * c * 3 + c;
  out.dense_baseline = c * c * 81 + c;
  out.reduction_pct =
      100.0 * (1.0 - static_cast<double>(out.separable_block) /
                         static_cast<double>(out.dense_baseline));
  return out;
}

SeparableCount count_separable_params(const ModelConfig& cfg) {
  return count_separable_params(cfg.block_channels);
}

}  // namespace stprog
