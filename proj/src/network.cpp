#include "cvsa/network.hpp"

#include <cmath>
#include <stdexcept>

#include "cvsa/rng.hpp"

namespace cvsa {

namespace {

void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor he_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

DenseBlock init_dense_block(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  DenseBlock b;
  b.w1 = he_uniform({in, hidden}, in, rng);
  b.b1 = Tensor({hidden});
  b.gamma = Tensor::full({hidden}, 1.0);
  b.beta = Tensor({hidden});
  b.w2 = he_uniform({hidden, out}, hidden, rng);
  b.b2 = Tensor({out});
  return b;
}

ConvBlock init_conv_block(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  ConvBlock b;
  b.w1 = he_uniform({in, hidden}, in, rng);
  b.b1 = Tensor({hidden});
  b.gamma = Tensor::full({hidden}, 1.0);
  b.beta = Tensor({hidden});
  b.w2 = he_uniform({hidden, out}, hidden, rng);
  b.b2 = Tensor({out});
  return b;
}

void collect_block(std::vector<ParamRef>& out, const std::string& prefix, DenseBlock& b) {
  out.push_back({prefix + ".w1", &b.w1, false});
  out.push_back({prefix + ".b1", &b.b1, false});
  out.push_back({prefix + ".gamma", &b.gamma, false});
  out.push_back({prefix + ".beta", &b.beta, false});
  out.push_back({prefix + ".w2", &b.w2, false});
  out.push_back({prefix + ".b2", &b.b2, false});
}

void collect_block(std::vector<ParamRef>& out, const std::string& prefix, ConvBlock& b) {
  out.push_back({prefix + ".w1", &b.w1, false});
  out.push_back({prefix + ".b1", &b.b1, false});
  out.push_back({prefix + ".gamma", &b.gamma, false});
  out.push_back({prefix + ".beta", &b.beta, false});
  out.push_back({prefix + ".w2", &b.w2, false});
  out.push_back({prefix + ".b2", &b.b2, false});
}

NodeId bind(GradientTape& t, const Tensor& v, bool frozen) {
  return frozen ? t.constant(v) : t.param(v);
}

// reshape [H×W×C] -> [HW×C], batchnorm over pixels, ReLU, back to [H×W×C]
NodeId spatial_bn_relu(GradientTape& t, NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Tensor& v = t.value(x);
  const std::size_t h = v.dim(0), w = v.dim(1), c = v.dim(2);
  NodeId flat = reshape(t, x, {h * w, c});
  NodeId bn = batchnorm(t, flat, gamma, beta, eps);
  NodeId act = relu(t, bn);
  return reshape(t, act, {h, w, c});
}

}  // namespace

void ModelConfig::validate() const {
  expect(!channels.empty(), "model config: need at least one encoder stage");
  for (std::size_t c : channels) expect(c >= 1, "model config: zero channel count");
  expect(embed_dim >= 1 && mlp_hidden >= 1 && conv_hidden >= 1,
         "model config: head dimensions must be positive");
  expect(align_stage >= 1 && align_stage <= channels.size(),
         "model config: align_stage " + std::to_string(align_stage) + " out of range 1.." +
             std::to_string(channels.size()));
}

ModelParams init_params(std::uint64_t seed, const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(Rng::mix(seed, 0x1417));
  ModelParams p;
  p.cfg = cfg;
  std::size_t cin = 3;
  for (std::size_t s = 0; s < cfg.stage_count(); ++s) {
    const std::size_t cout = cfg.channels[s];
    ConvStage stage;
    stage.w = he_uniform({3, 3, cin, cout}, 9 * cin, rng);
    stage.b = Tensor({cout});
    stage.gamma = Tensor::full({cout}, 1.0);
    stage.beta = Tensor({cout});
    p.stages.push_back(std::move(stage));
    cin = cout;
  }
  const std::size_t c_top = cfg.channels.back();
  const std::size_t c_align = cfg.channels[cfg.align_stage - 1];
  p.g_mlp = init_dense_block(c_top, cfg.mlp_hidden, cfg.embed_dim, rng);
  p.p_mlp = init_dense_block(cfg.embed_dim, cfg.mlp_hidden, cfg.embed_dim, rng);
  p.g_conv = init_conv_block(c_align, cfg.conv_hidden, cfg.embed_dim, rng);
  p.p_conv = init_conv_block(cfg.embed_dim, cfg.conv_hidden, cfg.embed_dim, rng);
  return p;
}

void freeze_stages(ModelParams& params, std::size_t k) {
  if (k > params.stages.size()) {
    throw std::invalid_argument("freeze_stages: k = " + std::to_string(k) +
                                " exceeds stage count " + std::to_string(params.stages.size()));
  }
  for (std::size_t s = 0; s < params.stages.size(); ++s) params.stages[s].frozen = s < k;
}

std::vector<ParamRef> collect_params(ModelParams& params) {
  std::vector<ParamRef> out;
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    ConvStage& st = params.stages[s];
    const std::string prefix = "enc.stage" + std::to_string(s + 1);
    out.push_back({prefix + ".w", &st.w, st.frozen});
    out.push_back({prefix + ".b", &st.b, st.frozen});
    out.push_back({prefix + ".gamma", &st.gamma, st.frozen});
    out.push_back({prefix + ".beta", &st.beta, st.frozen});
  }
  collect_block(out, "head.g_mlp", params.g_mlp);
  collect_block(out, "head.p_mlp", params.p_mlp);
  collect_block(out, "head.g_conv", params.g_conv);
  collect_block(out, "head.p_conv", params.p_conv);
  return out;
}

ModelBinding bind_model(GradientTape& tape, const ModelParams& params) {
  ModelBinding b;
  for (const ConvStage& st : params.stages) {
    b.stages.push_back({bind(tape, st.w, st.frozen), bind(tape, st.b, st.frozen),
                        bind(tape, st.gamma, st.frozen), bind(tape, st.beta, st.frozen)});
  }
  auto bind_dense = [&](const DenseBlock& blk) {
    return ModelBinding::BlockIds{tape.param(blk.w1),   tape.param(blk.b1), tape.param(blk.gamma),
                                  tape.param(blk.beta), tape.param(blk.w2), tape.param(blk.b2)};
  };
  auto bind_conv = [&](const ConvBlock& blk) {
    return ModelBinding::BlockIds{tape.param(blk.w1),   tape.param(blk.b1), tape.param(blk.gamma),
                                  tape.param(blk.beta), tape.param(blk.w2), tape.param(blk.b2)};
  };
  b.g_mlp = bind_dense(params.g_mlp);
  b.p_mlp = bind_dense(params.p_mlp);
  b.g_conv = bind_conv(params.g_conv);
  b.p_conv = bind_conv(params.p_conv);
  return b;
}

ModelBinding binding_from_param_ids(GradientTape& tape, const ModelParams& params,
                                    std::span<const NodeId> trainable_ids) {
  std::size_t next = 0;
  auto take = [&](const Tensor& frozen_value, bool frozen) -> NodeId {
    if (frozen) return tape.constant(frozen_value);
    if (next >= trainable_ids.size()) {
      throw std::invalid_argument("binding_from_param_ids: too few trainable ids");
    }
    return trainable_ids[next++];
  };
  ModelBinding b;
  for (const ConvStage& st : params.stages) {
    b.stages.push_back({take(st.w, st.frozen), take(st.b, st.frozen),
                        take(st.gamma, st.frozen), take(st.beta, st.frozen)});
  }
  auto take_block = [&](const DenseBlock& blk) {
    return ModelBinding::BlockIds{take(blk.w1, false),    take(blk.b1, false),
                                  take(blk.gamma, false), take(blk.beta, false),
                                  take(blk.w2, false),    take(blk.b2, false)};
  };
  auto take_cblock = [&](const ConvBlock& blk) {
    return ModelBinding::BlockIds{take(blk.w1, false),    take(blk.b1, false),
                                  take(blk.gamma, false), take(blk.beta, false),
                                  take(blk.w2, false),    take(blk.b2, false)};
  };
  b.g_mlp = take_block(params.g_mlp);
  b.p_mlp = take_block(params.p_mlp);
  b.g_conv = take_cblock(params.g_conv);
  b.p_conv = take_cblock(params.p_conv);
  if (next != trainable_ids.size()) {
    throw std::invalid_argument("binding_from_param_ids: trainable id count mismatch");
  }
  return b;
}

std::vector<NodeId> binding_param_ids(const ModelBinding& binding) {
  std::vector<NodeId> ids;
  for (const auto& st : binding.stages) {
    ids.push_back(st.w);
    ids.push_back(st.b);
    ids.push_back(st.gamma);
    ids.push_back(st.beta);
  }
  for (const auto* blk : {&binding.g_mlp, &binding.p_mlp, &binding.g_conv, &binding.p_conv}) {
    ids.push_back(blk->w1);
    ids.push_back(blk->b1);
    ids.push_back(blk->gamma);
    ids.push_back(blk->beta);
    ids.push_back(blk->w2);
    ids.push_back(blk->b2);
  }
  return ids;
}

EncoderOut encoder_forward(GradientTape& tape, NodeId image, const ModelBinding& binding,
                           const ModelConfig& cfg) {
  const Tensor& v = tape.value(image);
  expect(v.rank() == 3 && v.dim(2) == 3, "encoder_forward: input must be [H×W×3]");
  const std::size_t divisor = std::size_t{1} << cfg.stage_count();
  expect(v.dim(0) % divisor == 0 && v.dim(1) % divisor == 0,
         "encoder_forward: input dims " + std::to_string(v.dim(0)) + "x" +
             std::to_string(v.dim(1)) + " must be divisible by " + std::to_string(divisor));
  EncoderOut out;
  NodeId x = image;
  for (std::size_t s = 0; s < cfg.stage_count(); ++s) {
    const auto& st = binding.stages[s];
    NodeId conv = conv2d(tape, x, st.w, st.b, 2, 1);
    x = spatial_bn_relu(tape, conv, st.gamma, st.beta, cfg.bn_eps);
    out.stage_out.push_back(x);
  }
  const Tensor& top = tape.value(x);
  NodeId flat = reshape(tape, x, {top.dim(0) * top.dim(1), top.dim(2)});
  out.pooled = mean_rows(tape, flat);
  return out;
}

HeadsOut project_and_predict(GradientTape& tape, std::span<const NodeId> z_l, NodeId pooled_rows,
                             const ModelBinding& binding, const ModelConfig& cfg) {
  const Tensor& pr = tape.value(pooled_rows);
  expect(pr.rank() == 2, "project_and_predict: pooled input must be [N×C]");
  expect(pr.dim(0) >= 2, "project_and_predict: mlp heads need at least two pooled rows");
  expect(pr.dim(1) == cfg.channels.back(), "project_and_predict: pooled width " +
                                               std::to_string(pr.dim(1)) +
                                               " does not match the top stage channels");

  auto dense_block = [&tape, &cfg](NodeId x, const ModelBinding::BlockIds& blk) {
    NodeId h1 = add_rowwise(tape, matmul(tape, x, blk.w1), blk.b1);
    NodeId act = relu(tape, batchnorm(tape, h1, blk.gamma, blk.beta, cfg.bn_eps));
    return add_rowwise(tape, matmul(tape, act, blk.w2), blk.b2);
  };

  HeadsOut out;
  out.h_mlp = dense_block(pooled_rows, binding.g_mlp);
  out.p_mlp = dense_block(out.h_mlp, binding.p_mlp);
  for (NodeId z : z_l) {
    const Tensor& zv = tape.value(z);
    expect(zv.rank() == 3 && zv.dim(2) == cfg.channels[cfg.align_stage - 1],
           "project_and_predict: stage map channels do not match the conv projector");
    NodeId h = conv_head_forward(tape, z, binding.g_conv, cfg.bn_eps);
    out.h_conv.push_back(h);
    out.p_conv.push_back(conv_head_forward(tape, h, binding.p_conv, cfg.bn_eps));
  }
  return out;
}

NodeId conv_head_forward(GradientTape& tape, NodeId x, const ModelBinding::BlockIds& blk,
                         double bn_eps) {
  NodeId h1 = conv1x1(tape, x, blk.w1, blk.b1);
  const std::size_t h = tape.value(h1).dim(0);
  const std::size_t w = tape.value(h1).dim(1);
  const std::size_t c = tape.value(h1).dim(2);
  NodeId flat = reshape(tape, h1, {h * w, c});
  NodeId act = relu(tape, batchnorm(tape, flat, blk.gamma, blk.beta, bn_eps));
  NodeId back = reshape(tape, act, {h, w, c});
  return conv1x1(tape, back, blk.w2, blk.b2);
}

Tensor image_to_tensor(const Image& img) {
  return Tensor({img.height, img.width, 3},
                std::vector<double>(img.rgb.begin(), img.rgb.end()));
}

Tensor mask_to_tensor(const BinaryMask& mask) {
  std::vector<double> vals(mask.values.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = mask.values[i];
  return Tensor({mask.height, mask.width}, std::move(vals));
}

}  // namespace cvsa
