// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace fsdiff {

namespace {

int64_t norm_groups(int64_t channels) {
  for (int64_t g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

int64_t level_width(const DenoiserConfig& cfg, int level) {
  const int64_t mult = std::min<int64_t>(int64_t{1} << level, 4);
  return cfg.base_width * mult;
}

}  // namespace

void validate(const DenoiserConfig& cfg) {
  if (cfg.image_size < 2 || cfg.image_size % 2 != 0) {
    throw std::invalid_argument("DenoiserConfig: image_size must be even and >= 2");
  }
  if (cfg.channels < 1 || cfg.base_width < 1) {
    throw std::invalid_argument("DenoiserConfig: channels and base_width must be positive");
  }
  if (cfg.depth < 0 || (cfg.image_size >> cfg.depth) << cfg.depth != cfg.image_size ||
      (cfg.image_size >> cfg.depth) < 2) {
    throw std::invalid_argument("DenoiserConfig: image_size must be divisible by 2^depth");
  }
  if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0) {
    throw std::invalid_argument("DenoiserConfig: time_embed_dim must be even and >= 2");
  }
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) {
    throw std::invalid_argument("DenoiserConfig: dropout must be in [0, 1)");
  }
}

Params clone_params(const Params& p) { return p; }

uint64_t params_hash(const Params& p) {
  uint64_t h = 14695981039346656037ULL;
  for (const Tensor& t : p.tensors) {
    const uint64_t th = tensor_hash(t);
    h ^= th;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor timestep_embedding(std::span<const int> t, int64_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("timestep_embedding: dim must be even");
  const int64_t n = static_cast<int64_t>(t.size());
  const int64_t half = dim / 2;
  Tensor emb({n, dim});
  const double log_base = std::log(10000.0) / static_cast<double>(half);
  for (int64_t i = 0; i < n; ++i) {
    const double tv = static_cast<double>(t[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < half; ++j) {
      const double arg = tv * std::exp(-log_base * static_cast<double>(j));
      emb[i * dim + j] = std::cos(arg);
      emb[i * dim + half + j] = std::sin(arg);
    }
  }
  return emb;
}

int Denoiser::add_param(const std::string& name, std::vector<int64_t> shape,
                        ParamSpec::Init init) {
  param_count_ += shape_numel(shape);
  specs_.push_back({name, std::move(shape), init});
  return static_cast<int>(specs_.size()) - 1;
}

Denoiser::ConvRef Denoiser::add_conv(const std::string& name, int64_t cin, int64_t cout,
                                     int64_t k, ParamSpec::Init init) {
  ConvRef r;
  r.w = add_param(name + ".w", {cout, cin, k, k}, init);
  r.b = add_param(name + ".b", {cout}, ParamSpec::Init::kZeros);
  return r;
}

Denoiser::NormRef Denoiser::add_norm(const std::string& name, int64_t c) {
  NormRef r;
  r.gamma = add_param(name + ".gamma", {c}, ParamSpec::Init::kOnes);
  r.beta = add_param(name + ".beta", {c}, ParamSpec::Init::kZeros);
  return r;
}

Denoiser::ResBlockRef Denoiser::add_resblock(const std::string& name, int64_t cin, int64_t cout) {
  ResBlockRef r;
  r.gn1 = add_norm(name + ".gn1", cin);
  r.conv1 = add_conv(name + ".conv1", cin, cout, 3);
  r.time_w = add_param(name + ".time.w", {cout, cfg_.time_embed_dim}, ParamSpec::Init::kFanIn);
  r.time_b = add_param(name + ".time.b", {cout}, ParamSpec::Init::kZeros);
  r.gn2 = add_norm(name + ".gn2", cout);
  r.conv2 = add_conv(name + ".conv2", cout, cout, 3);
  r.has_skip = cin != cout;
  if (r.has_skip) r.skip = add_conv(name + ".skip", cin, cout, 1);
  r.groups_in = norm_groups(cin);
  r.groups_out = norm_groups(cout);
  return r;
}

Denoiser::AttnRef Denoiser::add_attention(const std::string& name, int64_t c) {
  AttnRef a;
  a.gn = add_norm(name + ".gn", c);
  a.q = add_conv(name + ".q", c, c, 1);
  a.k = add_conv(name + ".k", c, c, 1);
  a.v = add_conv(name + ".v", c, c, 1);
  a.proj = add_conv(name + ".proj", c, c, 1);
  a.groups = norm_groups(c);
  return a;
}

Denoiser::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  const int64_t e = cfg_.time_embed_dim;
  time_w1_ = add_param("time_mlp.w1", {e, e}, ParamSpec::Init::kFanIn);
  time_b1_ = add_param("time_mlp.b1", {e}, ParamSpec::Init::kZeros);
  time_w2_ = add_param("time_mlp.w2", {e, e}, ParamSpec::Init::kFanIn);
  time_b2_ = add_param("time_mlp.b2", {e}, ParamSpec::Init::kZeros);

  stem_ = add_conv("stem", cfg_.channels, level_width(cfg_, 0), 3);

  for (int i = 0; i < cfg_.depth; ++i) {
    const std::string prefix = "down" + std::to_string(i);
    down_blocks_.push_back(add_resblock(prefix + ".res", level_width(cfg_, i),
                                        level_width(cfg_, i)));
    down_convs_.push_back(
        add_conv(prefix + ".down", level_width(cfg_, i), level_width(cfg_, i + 1), 3));
  }

  const int64_t wm = level_width(cfg_, cfg_.depth);
  mid_block1_ = add_resblock("mid.res1", wm, wm);
  if (cfg_.attention) mid_attn_ = add_attention("mid.attn", wm);
  mid_block2_ = add_resblock("mid.res2", wm, wm);

  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const std::string prefix = "up" + std::to_string(i);
    up_convs_.push_back(
        add_conv(prefix + ".up", level_width(cfg_, i + 1), level_width(cfg_, i), 3));
    up_blocks_.push_back(add_resblock(prefix + ".res", 2 * level_width(cfg_, i),
                                      level_width(cfg_, i)));
  }

  head_norm_ = add_norm("head.gn", level_width(cfg_, 0));
  const int64_t out_channels = cfg_.learn_variance ? 2 * cfg_.channels : cfg_.channels;
  head_ = add_conv("head.conv", level_width(cfg_, 0), out_channels, 3, ParamSpec::Init::kZeros);
}

Params Denoiser::init_params(Rng& rng) const {
  Params p;
  p.tensors.reserve(specs_.size());
  for (const ParamSpec& spec : specs_) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case ParamSpec::Init::kZeros:
        break;
      case ParamSpec::Init::kOnes:
        t.fill(1.0);
        break;
      case ParamSpec::Init::kFanIn: {
        int64_t fan_in = spec.shape.size() == 4
                             ? spec.shape[1] * spec.shape[2] * spec.shape[3]
                             : spec.shape[1];
        const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : t.values()) v = std * rng.normal();
        break;
      }
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

std::vector<ad::Var> Denoiser::make_leaves(const Params& p, bool requires_grad) const {
  if (p.tensors.size() != specs_.size()) {
    throw std::invalid_argument("Denoiser: parameter count mismatch");
  }
  std::vector<ad::Var> vars;
  vars.reserve(p.tensors.size());
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    if (p.tensors[i].shape() != specs_[i].shape) {
      throw std::invalid_argument("Denoiser: parameter shape mismatch at " + specs_[i].name);
    }
    vars.push_back(requires_grad ? ad::leaf(p.tensors[i]) : ad::constant(p.tensors[i]));
  }
  return vars;
}

ad::Var Denoiser::resblock(const std::vector<ad::Var>& p, const ad::Var& h, const ad::Var& temb,
                           const ResBlockRef& r, Rng* dropout_rng) const {
  ad::Var y = ad::group_norm(h, p[r.gn1.gamma], p[r.gn1.beta], r.groups_in);
  y = ad::silu(y);
  y = ad::conv2d(y, p[r.conv1.w], p[r.conv1.b]);
  y = ad::add_channel_embedding(y, ad::linear(temb, p[r.time_w], p[r.time_b]));
  y = ad::group_norm(y, p[r.gn2.gamma], p[r.gn2.beta], r.groups_out);
  y = ad::silu(y);
  if (dropout_rng && cfg_.dropout > 0.0) y = ad::dropout(y, cfg_.dropout, *dropout_rng);
  y = ad::conv2d(y, p[r.conv2.w], p[r.conv2.b]);
  const ad::Var sk = r.has_skip ? ad::conv2d(h, p[r.skip.w], p[r.skip.b]) : h;
  return ad::add(y, sk);
}

ad::Var Denoiser::attention(const std::vector<ad::Var>& p, const ad::Var& h,
                            const AttnRef& a) const {
  const int64_t n = h->value.dim(0), c = h->value.dim(1);
  const int64_t hw = h->value.dim(2) * h->value.dim(3);
  ad::Var y = ad::group_norm(h, p[a.gn.gamma], p[a.gn.beta], a.groups);
  ad::Var q = ad::reshape(ad::conv2d(y, p[a.q.w], p[a.q.b]), {n, c, hw});
  ad::Var k = ad::reshape(ad::conv2d(y, p[a.k.w], p[a.k.b]), {n, c, hw});
  ad::Var v = ad::reshape(ad::conv2d(y, p[a.v.w], p[a.v.b]), {n, c, hw});
  ad::Var logits =
      ad::mul_scalar(ad::bmm(ad::transpose_last2(q), k), 1.0 / std::sqrt(static_cast<double>(c)));
  ad::Var attn = ad::softmax_lastdim(logits);  // (n, hw, hw), rows indexed by query
  ad::Var out = ad::bmm(v, ad::transpose_last2(attn));
  out = ad::reshape(out, h->value.shape());
  out = ad::conv2d(out, p[a.proj.w], p[a.proj.b]);
  return ad::add(h, out);
}

DenoiserOutput Denoiser::forward(const std::vector<ad::Var>& params, const Tensor& x_t,
                                 std::span<const int> t, Rng* dropout_rng) const {
  check_image_batch(x_t, "Denoiser::forward");
  if (x_t.dim(1) != cfg_.channels || x_t.dim(2) != cfg_.image_size ||
      x_t.dim(3) != cfg_.image_size) {
    throw std::invalid_argument("Denoiser::forward: input shape " + x_t.shape_str() +
                                " does not match config");
  }
  if (static_cast<int64_t>(t.size()) != x_t.dim(0)) {
    throw std::invalid_argument("Denoiser::forward: one timestep per sample required");
  }
  for (int ti : t) {
    if (ti < 1) throw std::invalid_argument("Denoiser::forward: timestep must be >= 1");
  }
  if (params.size() != specs_.size()) {
    throw std::invalid_argument("Denoiser::forward: parameter count mismatch");
  }

  ad::Var temb = ad::constant(timestep_embedding(t, cfg_.time_embed_dim));
  temb = ad::linear(temb, params[time_w1_], params[time_b1_]);
  temb = ad::silu(temb);
  temb = ad::linear(temb, params[time_w2_], params[time_b2_]);

  ad::Var h = ad::conv2d(ad::constant(x_t), params[stem_.w], params[stem_.b]);

  std::vector<ad::Var> skips;
  skips.reserve(static_cast<size_t>(cfg_.depth));
  for (int i = 0; i < cfg_.depth; ++i) {
    h = resblock(params, h, temb, down_blocks_[static_cast<size_t>(i)], dropout_rng);
    skips.push_back(h);
    h = ad::avg_pool2(h);
    h = ad::conv2d(h, params[down_convs_[static_cast<size_t>(i)].w],
                   params[down_convs_[static_cast<size_t>(i)].b]);
  }

  h = resblock(params, h, temb, mid_block1_, dropout_rng);
  if (cfg_.attention) h = attention(params, h, mid_attn_);
  h = resblock(params, h, temb, mid_block2_, dropout_rng);

  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const size_t u = static_cast<size_t>(cfg_.depth - 1 - i);
    h = ad::upsample_nearest2(h);
    h = ad::conv2d(h, params[up_convs_[u].w], params[up_convs_[u].b]);
    h = ad::concat_channels(h, skips[static_cast<size_t>(i)]);
    h = resblock(params, h, temb, up_blocks_[u], dropout_rng);
  }

  h = ad::group_norm(h, params[head_norm_.gamma], params[head_norm_.beta],
                     norm_groups(level_width(cfg_, 0)));
  h = ad::silu(h);
  h = ad::conv2d(h, params[head_.w], params[head_.b]);

  DenoiserOutput out;
  if (cfg_.learn_variance) {
    out.eps_pred = ad::slice_channels(h, 0, cfg_.channels);
    out.var_interp = ad::sigmoid(ad::slice_channels(h, cfg_.channels, 2 * cfg_.channels));
  } else {
    out.eps_pred = h;
  }
  return out;
}

void DenoiserModel::predict(const Tensor& x_t, std::span<const int> t, Tensor& eps_out,
                            Tensor* var_out) const {
  const std::vector<ad::Var> leaves = net_.make_leaves(params_, false);
  const DenoiserOutput out = net_.forward(leaves, x_t, t, nullptr);
  eps_out = out.eps_pred->value;
  if (var_out) {
    if (!out.has_variance()) {
      throw std::invalid_argument("DenoiserModel: variance requested from fixed-variance model");
    }
    *var_out = out.var_interp->value;
  }
}

}  // namespace fsdiff
