// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "fsdiff/autodiff.hpp"
#include "fsdiff/diffusion.hpp"
#include "fsdiff/rng.hpp"
#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Desk-scale UNet configuration. The network predicts the injected noise
/// (and optionally the variance interpolation coefficient) for images of
/// shape (channels, image_size, image_size).
struct DenoiserConfig {
  int64_t image_size = 16;
  int64_t channels = 1;
  int64_t base_width = 16;
  int depth = 1;  // number of down/up levels; image_size must be divisible by 2^depth
  bool learn_variance = false;
  int64_t time_embed_dim = 32;
  bool attention = true;  // single self-attention at the lowest resolution
  double dropout = 0.1;

  bool operator==(const DenoiserConfig&) const = default;
};

void validate(const DenoiserConfig& cfg);

/// Flat parameter container; tensor order follows Denoiser::param_specs().
struct Params {
  std::vector<Tensor> tensors;
};

/// Deep, independent copy (value semantics already guarantee this; the
/// explicit name mirrors how adaptation seeds the trainable model).
Params clone_params(const Params& p);

/// Order-sensitive hash over all parameter tensors.
uint64_t params_hash(const Params& p);

struct ParamSpec {
  std::string name;
  std::vector<int64_t> shape;
  enum class Init { kFanIn, kZeros, kOnes } init;
};

/// Residual UNet with sinusoidal timestep embeddings, group normalization,
/// optional bottleneck self-attention, and a zero-initialized output head
/// (an untrained model predicts eps = 0 exactly).
class Denoiser {
 public:
  explicit Denoiser(const DenoiserConfig& cfg);

  const DenoiserConfig& config() const { return cfg_; }
  const std::vector<ParamSpec>& param_specs() const { return specs_; }
  int64_t param_count() const { return param_count_; }

  /// Fan-in scaled init, deterministic for a given rng state.
  Params init_params(Rng& rng) const;

  std::vector<ad::Var> make_leaves(const Params& p, bool requires_grad) const;

  /// Builds the forward graph. Dropout is applied only when `dropout_rng`
  /// is non-null (training); inference passes are deterministic.
  DenoiserOutput forward(const std::vector<ad::Var>& params, const Tensor& x_t,
                         std::span<const int> t, Rng* dropout_rng = nullptr) const;

 private:
  struct ConvRef {
    int w = -1, b = -1;
  };
  struct NormRef {
    int gamma = -1, beta = -1;
  };
  struct ResBlockRef {
    NormRef gn1;
    ConvRef conv1;
    int time_w = -1, time_b = -1;
    NormRef gn2;
    ConvRef conv2;
    ConvRef skip;  // 1x1, only when channel counts differ
    bool has_skip = false;
    int64_t groups_in = 1, groups_out = 1;
  };
  struct AttnRef {
    NormRef gn;
    ConvRef q, k, v, proj;
    int64_t groups = 1;
  };

  ad::Var resblock(const std::vector<ad::Var>& p, const ad::Var& h, const ad::Var& temb,
                   const ResBlockRef& r, Rng* dropout_rng) const;
  ad::Var attention(const std::vector<ad::Var>& p, const ad::Var& h, const AttnRef& a) const;

  int add_param(const std::string& name, std::vector<int64_t> shape, ParamSpec::Init init);
  ConvRef add_conv(const std::string& name, int64_t cin, int64_t cout, int64_t k,
                   ParamSpec::Init init = ParamSpec::Init::kFanIn);
  NormRef add_norm(const std::string& name, int64_t c);
  ResBlockRef add_resblock(const std::string& name, int64_t cin, int64_t cout);
  AttnRef add_attention(const std::string& name, int64_t c);

  DenoiserConfig cfg_;
  std::vector<ParamSpec> specs_;
  int64_t param_count_ = 0;

  int time_w1_ = -1, time_b1_ = -1, time_w2_ = -1, time_b2_ = -1;
  ConvRef stem_;
  std::vector<ResBlockRef> down_blocks_;
  std::vector<ConvRef> down_convs_;
  ResBlockRef mid_block1_, mid_block2_;
  AttnRef mid_attn_;
  std::vector<ConvRef> up_convs_;
  std::vector<ResBlockRef> up_blocks_;
  NormRef head_norm_;
  ConvRef head_;
};

/// EpsModel adapter for sampling from a trained denoiser (no dropout, no
/// gradient bookkeeping).
class DenoiserModel : public EpsModel {
 public:
  DenoiserModel(const Denoiser& net, const Params& params) : net_(net), params_(params) {}

  bool learns_variance() const override { return net_.config().learn_variance; }
  void predict(const Tensor& x_t, std::span<const int> t, Tensor& eps_out,
               Tensor* var_out) const override;

 private:
  const Denoiser& net_;
  const Params& params_;
};

/// Sinusoidal embedding of integer steps, dim must be even; layout
/// [cos(t f_0).. cos(t f_{d/2-1}), sin(t f_0).. sin(t f_{d/2-1})] with
/// f_i = 10000^(-i/(d/2)).
Tensor timestep_embedding(std::span<const int> t, int64_t dim);

}  // namespace fsdiff
