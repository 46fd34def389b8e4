#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cvsa/augment.hpp"
#include "cvsa/optim.hpp"
#include "cvsa/tape.hpp"

namespace cvsa {

struct ModelConfig {
  std::vector<std::size_t> channels{16, 32, 64, 128};  // one entry per stage
  std::size_t embed_dim = 32;                          // d
  std::size_t mlp_hidden = 64;
  std::size_t conv_hidden = 64;
  std::size_t align_stage = 4;  // l
  // The pair's mlp-head batchnorm runs over N=2 rows, where tiny eps makes
  // the normalization a near-sign function with curvature ~1/eps; 1e-2 keeps
  // finite-difference verification of the exact gradients well conditioned.
  double bn_eps = 1e-2;

  std::size_t stage_count() const { return channels.size(); }
  void validate() const;
};

// One encoder stage: 3x3 stride-2 convolution with bias, batchnorm, ReLU.
struct ConvStage {
  Tensor w;  // [3,3,cin,cout]
  Tensor b;  // [cout]
  Tensor gamma, beta;
  bool frozen = false;
};

// dense -> batchnorm -> ReLU -> dense
struct DenseBlock {
  Tensor w1, b1, gamma, beta, w2, b2;
};

// 1x1 conv -> batchnorm -> ReLU -> 1x1 conv
struct ConvBlock {
  Tensor w1, b1, gamma, beta, w2, b2;
};

struct ModelParams {
  ModelConfig cfg;
  std::vector<ConvStage> stages;
  DenseBlock g_mlp, p_mlp;
  ConvBlock g_conv, p_conv;
};

// He-uniform fan-in weights (bound sqrt(6/fan_in)), zero biases, gamma=1,
// beta=0; deterministic per seed.
ModelParams init_params(std::uint64_t seed, const ModelConfig& cfg = {});

// Flags stages 1..k frozen; the optimizer and tape binding honor the flag.
void freeze_stages(ModelParams& params, std::size_t k);

// Stable, named parameter listing (checkpoint / optimizer / grad-check order).
std::vector<ParamRef> collect_params(ModelParams& params);

// Model tensors registered on a tape; frozen stages enter as constants, so
// backward stops at the first trainable stage.
struct ModelBinding {
  struct StageIds {
    NodeId w, b, gamma, beta;
  };
  struct BlockIds {
    NodeId w1, b1, gamma, beta, w2, b2;
  };
  std::vector<StageIds> stages;
  BlockIds g_mlp, p_mlp, g_conv, p_conv;
};

ModelBinding bind_model(GradientTape& tape, const ModelParams& params);

// Node ids in collect_params order (for reading gradients back out).
std::vector<NodeId> binding_param_ids(const ModelBinding& binding);

// Rebuilds a binding from already-registered tape nodes. `trainable_ids`
// follows the collect_params order restricted to non-frozen parameters;
// frozen parameters are bound as constants from `params`. This is how the
// gradient checker drives the model through its own parameter registration.
ModelBinding binding_from_param_ids(GradientTape& tape, const ModelParams& params,
                                    std::span<const NodeId> trainable_ids);

struct EncoderOut {
  std::vector<NodeId> stage_out;  // stage_out[s] is the stage s+1 activation
  NodeId pooled;                  // global average pool of the last stage, [C]
};

// Input tensor [H×W×3] with H and W divisible by 2^stages; spatial dims halve
// per stage.
EncoderOut encoder_forward(GradientTape& tape, NodeId image, const ModelBinding& binding,
                           const ModelConfig& cfg);

struct HeadsOut {
  NodeId h_mlp;                 // [N×d], one row per pooled input row
  NodeId p_mlp;                 // [N×d]
  std::vector<NodeId> h_conv;   // per view, [H^l×W^l×d]
  std::vector<NodeId> p_conv;
};

// pooled_rows is [N×C] with N >= 2 (the two views of a pair, or more); the
// mlp heads normalize over those rows. Conv heads run per view on the stage-l
// maps and normalize over pixels.
HeadsOut project_and_predict(GradientTape& tape, std::span<const NodeId> z_l, NodeId pooled_rows,
                             const ModelBinding& binding, const ModelConfig& cfg);

// One conv projector/predictor block (1x1 conv, batchnorm over pixels, ReLU,
// 1x1 conv) applied to a [H×W×C] map.
NodeId conv_head_forward(GradientTape& tape, NodeId x, const ModelBinding::BlockIds& blk,
                         double bn_eps);

Tensor image_to_tensor(const Image& img);
Tensor mask_to_tensor(const BinaryMask& mask);

}  // namespace cvsa
