#include "cvsa/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cvsa/image.hpp"
#include "json.hpp"

namespace cvsa {

namespace {

using nlohmann::ordered_json;

const char* fusion_name(AugConfig::FusionMode m) {
  return m == AugConfig::FusionMode::same ? "same" : "cross";
}

AugConfig::FusionMode fusion_from(const std::string& s) {
  if (s == "same") return AugConfig::FusionMode::same;
  if (s == "cross") return AugConfig::FusionMode::cross;
  throw std::runtime_error("checkpoint: unknown fusion mode '" + s + "'");
}

ordered_json config_json(const TrainConfig& cfg, const ModelConfig& model) {
  ordered_json j;
  j["batch_size"] = cfg.batch_size;
  j["base_lr"] = cfg.base_lr;
  j["total_steps"] = cfg.total_steps;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["stage"] = cfg.stage;
  j["freeze_k"] = cfg.freeze_k;
  j["lambda"] = cfg.lambda;
  j["beta"] = cfg.beta;
  j["fusion"] = fusion_name(cfg.fusion);
  j["seed"] = cfg.seed;
  ordered_json m;
  m["channels"] = model.channels;
  m["embed_dim"] = model.embed_dim;
  m["mlp_hidden"] = model.mlp_hidden;
  m["conv_hidden"] = model.conv_hidden;
  m["align_stage"] = model.align_stage;
  m["bn_eps"] = model.bn_eps;
  j["model"] = m;
  return j;
}

void config_from_json(const ordered_json& j, TrainConfig& cfg, ModelConfig& model) {
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.base_lr = j.at("base_lr").get<double>();
  cfg.total_steps = j.at("total_steps").get<std::size_t>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.stage = j.at("stage").get<int>();
  cfg.freeze_k = j.at("freeze_k").get<std::size_t>();
  cfg.lambda = j.at("lambda").get<double>();
  cfg.beta = j.at("beta").get<double>();
  cfg.fusion = fusion_from(j.at("fusion").get<std::string>());
  cfg.seed = j.at("seed").get<std::uint64_t>();
  const ordered_json& m = j.at("model");
  model.channels = m.at("channels").get<std::vector<std::size_t>>();
  model.embed_dim = m.at("embed_dim").get<std::size_t>();
  model.mlp_hidden = m.at("mlp_hidden").get<std::size_t>();
  model.conv_hidden = m.at("conv_hidden").get<std::size_t>();
  model.align_stage = m.at("align_stage").get<std::size_t>();
  model.bn_eps = m.at("bn_eps").get<double>();
}

void append_le_doubles(std::vector<std::uint8_t>& out, const Tensor& t) {
  static_assert(sizeof(double) == 8);
  const std::size_t at = out.size();
  out.resize(at + t.size() * 8);
  std::memcpy(out.data() + at, t.data().data(), t.size() * 8);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be positive");
  if (base_lr <= 0.0) throw std::invalid_argument("train config: base_lr must be positive");
  if (stage != 1 && stage != 2) throw std::invalid_argument("train config: stage must be 1 or 2");
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("train config: lambda must be in (0, 1]");
  }
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("train config: beta must be in (0, 1]");
}

void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ParamRef> refs = collect_params(ckpt.params);
  if (ckpt.opt.momentum.size() != refs.size()) {
    throw std::invalid_argument("checkpoint: optimizer state does not match parameter count");
  }

  ordered_json manifest;
  manifest["format_version"] = Checkpoint::kFormatVersion;
  manifest["stage"] = ckpt.stage;
  manifest["step"] = ckpt.step;
  manifest["opt_step"] = ckpt.opt.step;
  manifest["frozen_stages"] = ckpt.frozen_count();
  manifest["rng"] = ordered_json{{"master_seed", ckpt.train_cfg.seed}};
  manifest["hyperparameters"] = config_json(ckpt.train_cfg, ckpt.params.cfg);

  ordered_json tensors = ordered_json::array();
  std::vector<std::uint8_t> blob;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    tensors.push_back(ordered_json{{"name", refs[i].name}, {"shape", refs[i].tensor->shape()}});
    append_le_doubles(blob, *refs[i].tensor);
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    tensors.push_back(ordered_json{{"name", "opt.momentum." + refs[i].name},
                                   {"shape", ckpt.opt.momentum[i].shape()}});
    append_le_doubles(blob, ckpt.opt.momentum[i]);
  }
  manifest["tensors"] = tensors;

  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / "ckpt.json",
             std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  write_file(dir / "ckpt.bin", blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const std::vector<std::uint8_t> jbytes = read_file(dir / "ckpt.json");
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(jbytes.begin(), jbytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: cannot parse '" + (dir / "ckpt.json").string() +
                             "': " + e.what());
  }
  const int version = manifest.at("format_version").get<int>();
  if (version != Checkpoint::kFormatVersion) {
    throw std::runtime_error("checkpoint: format version " + std::to_string(version) +
                             " is not supported (expected " +
                             std::to_string(Checkpoint::kFormatVersion) + ")");
  }

  Checkpoint ckpt;
  ckpt.stage = manifest.at("stage").get<int>();
  ckpt.step = manifest.at("step").get<std::uint64_t>();
  ModelConfig model;
  config_from_json(manifest.at("hyperparameters"), ckpt.train_cfg, model);

  // rebuild parameter containers with the right shapes, then fill from blob
  ckpt.params = init_params(0, model);
  freeze_stages(ckpt.params, manifest.at("frozen_stages").get<std::size_t>());
  std::vector<ParamRef> refs = collect_params(ckpt.params);
  ckpt.opt = OptimizerState::init(refs);
  ckpt.opt.step = manifest.at("opt_step").get<std::uint64_t>();

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != refs.size() * 2) {
    throw std::runtime_error("checkpoint: manifest lists " + std::to_string(tensors.size()) +
                             " tensors, expected " + std::to_string(refs.size() * 2));
  }
  const std::vector<std::uint8_t> blob = read_file(dir / "ckpt.bin");
  std::size_t expected_bytes = 0;
  for (const auto& entry : tensors) {
    std::size_t n = 1;
    for (std::size_t d : entry.at("shape").get<std::vector<std::size_t>>()) n *= d;
    expected_bytes += n * 8;
  }
  if (blob.size() != expected_bytes) {
    throw std::runtime_error("checkpoint: blob is " + std::to_string(blob.size()) +
                             " bytes but the manifest requires " +
                             std::to_string(expected_bytes) + " (corrupt or truncated)");
  }

  std::size_t offset = 0;
  auto read_into = [&](Tensor& t, const ordered_json& entry, const std::string& want_name) {
    const std::string name = entry.at("name").get<std::string>();
    if (name != want_name) {
      throw std::runtime_error("checkpoint: tensor order mismatch, found '" + name +
                               "' where '" + want_name + "' was expected");
    }
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != t.shape()) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                               shape_str(shape) + ", expected " + shape_str(t.shape()));
    }
    std::memcpy(t.data().data(), blob.data() + offset, t.size() * 8);
    offset += t.size() * 8;
    if (!t.all_finite()) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' contains non-finite values");
    }
  };
  for (std::size_t i = 0; i < refs.size(); ++i) read_into(*refs[i].tensor, tensors[i], refs[i].name);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    read_into(ckpt.opt.momentum[i], tensors[refs.size() + i], "opt.momentum." + refs[i].name);
  }
  return ckpt;
}

}  // namespace cvsa
