#include "cvsa/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "cvsa/rng.hpp"
#include "json.hpp"

namespace cvsa {

namespace {

using nlohmann::ordered_json;

constexpr std::uint64_t kBatchTag = 0xb47c;
constexpr std::uint64_t kAugTag = 0xa09;
constexpr std::uint64_t kEvalTag = 0xe7a1;
constexpr std::uint64_t kProbeTag = 0x9206;

void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool has_image_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".png" || e == ".ppm";
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; items only touch
// their own output slots, so scheduling order never shows in the results.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

AugConfig aug_from_train(const TrainConfig& cfg) {
  AugConfig aug;
  aug.lambda = cfg.lambda;
  aug.beta = cfg.beta;
  aug.fusion = cfg.fusion;
  return aug;
}

// Per-pair state: encoder forwards, conv heads and the alignment term live
// on the pair's own tape (parallel across the batch); the mlp head runs once
// per step over the whole batch so its batch normalization sees 2B rows --
// normalizing over just the positive pair would subtract exactly the shared
// content the contrastive loss feeds on.
struct SlotWork {
  GradientTape tape;
  std::vector<NodeId> param_ids;
  NodeId pooled_q = 0, pooled_k = 0;
  NodeId align = 0;  // scalar node, stage 2 only
  double align_value = 0.0;
};

void slot_phase_a(SlotWork& w, const ModelParams& params, const TrainConfig& cfg,
                  const Image& src, const BBox& src_box, const AugPool& pool,
                  std::uint64_t slot_seed) {
  Rng rng(slot_seed);
  ModelBinding binding = bind_model(w.tape, params);
  w.param_ids = binding_param_ids(binding);
  const AugConfig aug = aug_from_train(cfg);

  if (cfg.stage == 1) {
    // conventional recipe: random-resized crop + photometric
    Image q = apply_photometric(random_resized_crop(src, 0.2, 1.0, rng).image, nullptr, aug, rng);
    Image k = apply_photometric(random_resized_crop(src, 0.2, 1.0, rng).image, nullptr, aug, rng);
    EncoderOut enc_q =
        encoder_forward(w.tape, w.tape.constant(image_to_tensor(q)), binding, params.cfg);
    EncoderOut enc_k =
        encoder_forward(w.tape, w.tape.constant(image_to_tensor(k)), binding, params.cfg);
    w.pooled_q = enc_q.pooled;
    w.pooled_k = enc_k.pooled;
    return;
  }

  const ViewPair pair = make_view_pair(src, src_box, pool, aug, rng);
  EncoderOut enc_q =
      encoder_forward(w.tape, w.tape.constant(image_to_tensor(pair.q)), binding, params.cfg);
  EncoderOut enc_k =
      encoder_forward(w.tape, w.tape.constant(image_to_tensor(pair.k)), binding, params.cfg);
  w.pooled_q = enc_q.pooled;
  w.pooled_k = enc_k.pooled;

  const std::size_t l = params.cfg.align_stage;
  NodeId z_q = enc_q.stage_out[l - 1];
  NodeId z_k = enc_k.stage_out[l - 1];
  NodeId h_q = conv_head_forward(w.tape, z_q, binding.g_conv, params.cfg.bn_eps);
  NodeId h_k = conv_head_forward(w.tape, z_k, binding.g_conv, params.cfg.bn_eps);
  NodeId p_q = conv_head_forward(w.tape, h_q, binding.p_conv, params.cfg.bn_eps);
  NodeId p_k = conv_head_forward(w.tape, h_k, binding.p_conv, params.cfg.bn_eps);
  const std::size_t hl = w.tape.value(z_q).dim(0);
  const std::size_t wl = w.tape.value(z_q).dim(1);
  NodeId c_qk = correspondence_intensity(w.tape, cross_view_attention(w.tape, p_q, h_k), hl, wl);
  NodeId c_kq = correspondence_intensity(w.tape, cross_view_attention(w.tape, p_k, h_q), hl, wl);
  w.align = alignment_loss(w.tape, pair.m_q, pair.m_k, c_qk, c_kq);
  w.align_value = w.tape.value(w.align)[0];
}

void write_metrics_line(std::ofstream& out, std::uint64_t step, double lr, double l_cont,
                        double l_align, double total) {
  ordered_json j;
  j["step"] = step;
  j["lr"] = lr;
  j["l_cont"] = l_cont;
  j["l_align"] = l_align;
  j["total"] = total;
  out << j.dump() << "\n";
  out.flush();
}

Checkpoint run_training(const Corpus& corpus, Checkpoint ckpt,
                        const std::filesystem::path& metrics_path,
                        std::optional<std::uint64_t> stop_at_step) {
  expect(corpus.size() > 0, "training corpus is empty");
  const TrainConfig& cfg = ckpt.train_cfg;
  cfg.validate();
  expect(ckpt.step <= cfg.total_steps, "checkpoint step exceeds total_steps");
  const std::uint64_t stop = std::min<std::uint64_t>(
      cfg.total_steps, stop_at_step.value_or(cfg.total_steps));

  std::vector<BBox> boxes;
  AugPool pool;
  std::vector<Image> pool_images;
  if (cfg.stage == 2) {
    boxes = corpus_boxes(corpus);
    pool_images.reserve(corpus.size());
    for (const CorpusItem& item : corpus.items) pool_images.push_back(item.image);
    pool.images = &pool_images;
    pool.boxes = &boxes;
  }

  std::vector<ParamRef> refs = collect_params(ckpt.params);
  const std::size_t param_count = refs.size();
  expect(ckpt.opt.momentum.size() == param_count, "optimizer state does not match the model");

  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path, ckpt.step > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) {
      throw std::runtime_error("cannot open metrics file '" + metrics_path.string() + "'");
    }
  }

  const std::size_t workers = thread_cap();
  const double eff_lr = cfg.effective_lr();
  const std::size_t c_top = ckpt.params.cfg.channels.back();

  for (std::uint64_t s = ckpt.step; s < stop; ++s) {
    const double lr = cosine_lr(s, cfg.total_steps, eff_lr);

    Rng batch_rng(Rng::mix(cfg.seed, kBatchTag, s));
    std::vector<std::size_t> indices(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      indices[b] = batch_rng.uniform_int(corpus.size());
    }

    // phase A: per-pair encoders (and stage-2 conv heads + alignment)
    std::vector<std::unique_ptr<SlotWork>> slots(cfg.batch_size);
    parallel_for(cfg.batch_size, workers, [&](std::size_t b) {
      slots[b] = std::make_unique<SlotWork>();
      const CorpusItem& item = corpus.items[indices[b]];
      const BBox box = cfg.stage == 2 ? boxes[indices[b]] : BBox{0, 0, 1, 1};
      const std::uint64_t slot_seed = Rng::mix(Rng::mix(cfg.seed, kAugTag, s), b);
      slot_phase_a(*slots[b], ckpt.params, cfg, item.image, box, pool, slot_seed);
    });

    // phase B: batch-level mlp head and the contrastive term
    GradientTape head_tape;
    ModelBinding head_binding = bind_model(head_tape, ckpt.params);
    Tensor pooled_mat({2 * cfg.batch_size, c_top});
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Tensor& pq = slots[b]->tape.value(slots[b]->pooled_q);
      const Tensor& pk = slots[b]->tape.value(slots[b]->pooled_k);
      for (std::size_t c = 0; c < c_top; ++c) {
        pooled_mat.at(2 * b, c) = pq[c];
        pooled_mat.at(2 * b + 1, c) = pk[c];
      }
    }
    const NodeId pooled_rows = head_tape.param(std::move(pooled_mat));
    HeadsOut heads = project_and_predict(head_tape, {}, pooled_rows, head_binding,
                                         ckpt.params.cfg);
    NodeId cont_sum = 0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      NodeId c = contrastive_loss(head_tape, take_row(head_tape, heads.p_mlp, 2 * b),
                                  take_row(head_tape, heads.p_mlp, 2 * b + 1),
                                  take_row(head_tape, heads.h_mlp, 2 * b),
                                  take_row(head_tape, heads.h_mlp, 2 * b + 1));
      cont_sum = b == 0 ? c : add(head_tape, cont_sum, c);
    }
    const NodeId cont_mean = scale(head_tape, cont_sum, 1.0 / static_cast<double>(cfg.batch_size));
    head_tape.backward(cont_mean);
    const Tensor& pooled_cotangent = head_tape.grad(pooled_rows);
    const std::vector<NodeId> head_ids = binding_param_ids(head_binding);

    // phase C: splice the pooled gradients back into the pair tapes and sweep
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    parallel_for(cfg.batch_size, workers, [&](std::size_t b) {
      SlotWork& w = *slots[b];
      Tensor seed_q({c_top}), seed_k({c_top});
      for (std::size_t c = 0; c < c_top; ++c) {
        seed_q[c] = pooled_cotangent.at(2 * b, c);
        seed_k[c] = pooled_cotangent.at(2 * b + 1, c);
      }
      w.tape.accumulate_seed(w.pooled_q, seed_q);
      w.tape.accumulate_seed(w.pooled_k, seed_k);
      if (cfg.stage == 2) w.tape.accumulate_seed(w.align, Tensor({1}, {inv_b}));
      w.tape.run_backward();
    });

    // deterministic reduction: head-tape grads, then slots in index order
    std::vector<Tensor> grad_acc(param_count);
    std::vector<bool> grad_present(param_count, false);
    auto take_grads = [&](GradientTape& tape, const std::vector<NodeId>& ids) {
      for (std::size_t i = 0; i < param_count; ++i) {
        if (!tape.has_grad(ids[i])) continue;
        const Tensor& g = tape.grad(ids[i]);
        if (!grad_present[i]) {
          grad_acc[i] = g;
          grad_present[i] = true;
        } else {
          Tensor& acc = grad_acc[i];
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
        }
      }
    };
    take_grads(head_tape, head_ids);
    double l_align = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      take_grads(slots[b]->tape, slots[b]->param_ids);
      l_align += slots[b]->align_value;
    }
    l_align *= inv_b;
    const double l_cont = head_tape.value(cont_mean)[0];

    std::vector<const Tensor*> grads(param_count, nullptr);
    for (std::size_t i = 0; i < param_count; ++i) {
      if (grad_present[i]) grads[i] = &grad_acc[i];
    }
    sgd_step(refs, grads, ckpt.opt, lr, cfg.momentum, cfg.weight_decay);

    if (metrics.is_open()) write_metrics_line(metrics, s, lr, l_cont, l_align, l_cont + l_align);
    ckpt.step = s + 1;
  }
  return ckpt;
}

}  // namespace

bool Corpus::has_boxes() const {
  return !items.empty() &&
         std::all_of(items.begin(), items.end(), [](const CorpusItem& i) { return i.gt_box.has_value(); });
}

bool Corpus::has_labels() const {
  return !items.empty() &&
         std::all_of(items.begin(), items.end(), [](const CorpusItem& i) { return i.label.has_value(); });
}

Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("corpus directory '" + dir.string() + "' does not exist");
  }
  Corpus corpus;
  corpus.root = dir;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_ext(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    CorpusItem item;
    item.name = f.filename().string();
    item.image = load_image(f);
    corpus.items.push_back(std::move(item));
  }

  const auto ann_path = dir / "annotations.jsonl";
  if (std::filesystem::exists(ann_path)) {
    for (const BoxAnnotation& a : load_annotations(ann_path)) {
      for (CorpusItem& item : corpus.items) {
        if (item.name == a.image) {
          if (!a.box.within(item.image.width, item.image.height)) {
            throw std::runtime_error("annotation box " + to_string(a.box) + " for '" + a.image +
                                     "' is out of bounds");
          }
          item.gt_box = a.box;
          break;
        }
      }
    }
  }

  const auto label_path = dir / "labels.jsonl";
  if (std::filesystem::exists(label_path)) {
    std::ifstream in(label_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      ordered_json j;
      try {
        j = ordered_json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("labels.jsonl line " + std::to_string(lineno) + ": " + e.what());
      }
      const std::string name = j.at("image").get<std::string>();
      const int label = j.at("label").get<int>();
      for (CorpusItem& item : corpus.items) {
        if (item.name == name) {
          item.label = label;
          break;
        }
      }
    }
  }
  return corpus;
}

std::vector<BBox> corpus_boxes(const Corpus& corpus) {
  std::vector<BBox> boxes(corpus.size());
  parallel_for(corpus.size(), thread_cap(), [&](std::size_t i) {
    const CorpusItem& item = corpus.items[i];
    if (item.gt_box) {
      boxes[i] = *item.gt_box;  // bounds were checked at corpus load
    } else {
      boxes[i] = saliency_bbox(spectral_residual(item.image), {});
    }
  });
  return boxes;
}

std::size_t thread_cap() {
  if (const char* env = std::getenv("CVSA_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

Checkpoint pretrain_stage1(const Corpus& corpus, const TrainConfig& cfg, const ModelConfig& model,
                           const std::filesystem::path& metrics_path) {
  expect(cfg.stage == 1, "pretrain_stage1: config stage must be 1");
  Checkpoint ckpt;
  ckpt.stage = 1;
  ckpt.step = 0;
  ckpt.train_cfg = cfg;
  ckpt.params = init_params(cfg.seed, model);
  freeze_stages(ckpt.params, 0);
  ckpt.opt = OptimizerState::init(collect_params(ckpt.params));
  return run_training(corpus, std::move(ckpt), metrics_path, std::nullopt);
}

Checkpoint pretrain_stage2(const Corpus& corpus, const Checkpoint& init, const TrainConfig& cfg,
                           const std::filesystem::path& metrics_path) {
  expect(cfg.stage == 2, "pretrain_stage2: config stage must be 2");
  Checkpoint ckpt;
  ckpt.stage = 2;
  ckpt.step = 0;
  ckpt.train_cfg = cfg;
  ckpt.params = init.params;  // the model configuration rides along
  freeze_stages(ckpt.params, cfg.freeze_k);
  ckpt.opt = OptimizerState::init(collect_params(ckpt.params));
  return run_training(corpus, std::move(ckpt), metrics_path, std::nullopt);
}

Checkpoint resume_training(const Corpus& corpus, Checkpoint state,
                           const std::filesystem::path& metrics_path,
                           std::optional<std::uint64_t> stop_at_step) {
  return run_training(corpus, std::move(state), metrics_path, stop_at_step);
}

std::vector<MetricsRecord> load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics '" + path.string() + "'");
  std::vector<MetricsRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const ordered_json j = ordered_json::parse(line);
    records.push_back(MetricsRecord{j.at("step").get<std::uint64_t>(), j.at("lr").get<double>(),
                                    j.at("l_cont").get<double>(), j.at("l_align").get<double>(),
                                    j.at("total").get<double>()});
  }
  return records;
}

// ---- linear probe ----

namespace {

std::vector<std::vector<double>> pooled_features(const Checkpoint& ckpt, const Corpus& corpus) {
  std::vector<std::vector<double>> feats(corpus.size());
  parallel_for(corpus.size(), thread_cap(), [&](std::size_t i) {
    GradientTape tape;
    ModelBinding binding = bind_model(tape, ckpt.params);
    NodeId img = tape.constant(image_to_tensor(corpus.items[i].image));
    EncoderOut enc = encoder_forward(tape, img, binding, ckpt.params.cfg);
    const Tensor& pooled = tape.value(enc.pooled);
    feats[i].assign(pooled.data().begin(), pooled.data().end());
  });
  return feats;
}

}  // namespace

double linear_probe_features(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels, const ProbeConfig& cfg) {
  expect(features.size() == labels.size() && !features.empty(),
         "linear probe: features/labels mismatch");
  int max_label = 0;
  for (int l : labels) {
    expect(l >= 0, "linear probe: negative label");
    max_label = std::max(max_label, l);
  }
  const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
  {
    std::vector<bool> seen(classes, false);
    for (int l : labels) seen[static_cast<std::size_t>(l)] = true;
    const std::size_t distinct = std::count(seen.begin(), seen.end(), true);
    expect(distinct >= 2, "linear probe: corpus must contain at least two classes");
  }
  const std::size_t dim = features[0].size();

  // deterministic stratified holdout: every k-th item of each class
  const std::size_t stride = std::max<std::size_t>(2, static_cast<std::size_t>(
                                                          std::llround(1.0 / cfg.holdout_frac)));
  std::vector<std::size_t> train_idx, test_idx;
  std::vector<std::size_t> class_seen(classes, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::size_t pos = class_seen[static_cast<std::size_t>(labels[i])]++;
    (pos % stride == 0 ? test_idx : train_idx).push_back(i);
  }
  expect(!train_idx.empty() && !test_idx.empty(), "linear probe: split produced an empty side");

  double acc_sum = 0.0;
  for (std::size_t trial = 0; trial < std::max<std::size_t>(1, cfg.trials); ++trial) {
  double best_acc = 0.0;
  for (const double lr0 : cfg.lrs) {
    std::vector<double> w(dim * classes, 0.0), b(classes, 0.0);
    std::vector<double> vw(dim * classes, 0.0), vb(classes, 0.0);
    const std::size_t batches_per_epoch = (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches_per_epoch;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::vector<std::size_t> order = train_idx;
      Rng shuffle_rng(Rng::mix(Rng::mix(cfg.seed, kProbeTag, trial), epoch));
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
      }
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        const double lr = cosine_lr(step, total_steps, lr0);
        std::vector<double> gw(dim * classes, 0.0), gb(classes, 0.0);
        for (std::size_t n = start; n < stop; ++n) {
          const std::vector<double>& x = features[order[n]];
          const int y = labels[order[n]];
          std::vector<double> logits(classes, 0.0);
          for (std::size_t k = 0; k < classes; ++k) {
            double z = b[k];
            for (std::size_t c = 0; c < dim; ++c) z += w[c * classes + k] * x[c];
            logits[k] = z;
          }
          const double zmax = *std::max_element(logits.begin(), logits.end());
          double denom = 0.0;
          for (double& z : logits) {
            z = std::exp(z - zmax);
            denom += z;
          }
          for (std::size_t k = 0; k < classes; ++k) {
            const double gz = logits[k] / denom - (static_cast<int>(k) == y ? 1.0 : 0.0);
            gb[k] += gz;
            for (std::size_t c = 0; c < dim; ++c) gw[c * classes + k] += gz * x[c];
          }
        }
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (std::size_t i = 0; i < gw.size(); ++i) {
          vw[i] = 0.9 * vw[i] + gw[i] * inv;
          w[i] -= lr * vw[i];
        }
        for (std::size_t k = 0; k < classes; ++k) {
          vb[k] = 0.9 * vb[k] + gb[k] * inv;
          b[k] -= lr * vb[k];
        }
        ++step;
      }
    }
    std::size_t correct = 0;
    for (std::size_t i : test_idx) {
      const std::vector<double>& x = features[i];
      std::size_t arg = 0;
      double best = -1e300;
      for (std::size_t k = 0; k < classes; ++k) {
        double z = b[k];
        for (std::size_t c = 0; c < dim; ++c) z += w[c * classes + k] * x[c];
        if (z > best) {
          best = z;
          arg = k;
        }
      }
      if (static_cast<int>(arg) == labels[i]) ++correct;
    }
    best_acc = std::max(best_acc, static_cast<double>(correct) / static_cast<double>(test_idx.size()));
  }
  acc_sum += best_acc;
  }
  return acc_sum / static_cast<double>(std::max<std::size_t>(1, cfg.trials));
}

double linear_probe(const Checkpoint& ckpt, const Corpus& corpus, const ProbeConfig& cfg) {
  expect(corpus.has_labels(), "linear probe: corpus has no labels");
  std::vector<int> labels;
  labels.reserve(corpus.size());
  for (const CorpusItem& item : corpus.items) labels.push_back(*item.label);
  return linear_probe_features(pooled_features(ckpt, corpus), labels, cfg);
}

// ---- localization ----

LocalizeConfig::LocalizeConfig() {
  for (int i = 1; i <= 19; ++i) tau_grid.push_back(0.05 * i);
}

SaliencyMap correspondence_map(const Checkpoint& ckpt, const Image& img, std::uint64_t view_seed) {
  Rng rng(view_seed);
  AugConfig aug = aug_from_train(ckpt.train_cfg);
  const Image view_k = apply_photometric(img, nullptr, aug, rng);

  GradientTape tape;
  ModelBinding binding = bind_model(tape, ckpt.params);
  const ModelConfig& cfg = ckpt.params.cfg;
  EncoderOut enc_q = encoder_forward(tape, tape.constant(image_to_tensor(img)), binding, cfg);
  EncoderOut enc_k = encoder_forward(tape, tape.constant(image_to_tensor(view_k)), binding, cfg);
  NodeId z_q = enc_q.stage_out[cfg.align_stage - 1];
  NodeId z_k = enc_k.stage_out[cfg.align_stage - 1];
  NodeId h_q = conv_head_forward(tape, z_q, binding.g_conv, cfg.bn_eps);
  NodeId h_k = conv_head_forward(tape, z_k, binding.g_conv, cfg.bn_eps);
  NodeId p_q = conv_head_forward(tape, h_q, binding.p_conv, cfg.bn_eps);
  const std::size_t hl = tape.value(z_q).dim(0);
  const std::size_t wl = tape.value(z_q).dim(1);
  NodeId a_qk = cross_view_attention(tape, p_q, h_k);
  NodeId c_qk = correspondence_intensity(tape, a_qk, hl, wl);

  SaliencyMap map;
  map.width = img.width;
  map.height = img.height;
  map.values.assign(img.width * img.height, 0.0);
  const Tensor& c = tape.value(c_qk);
  bilinear_resample_raw(c.data().data(), hl, wl, map.values.data(), img.height, img.width, 1);
  return map;
}

double localization_score_maps(const std::vector<SaliencyMap>& maps,
                               const std::vector<BBox>& gt_boxes, double iou_thresh,
                               const std::vector<double>& tau_grid) {
  expect(maps.size() == gt_boxes.size() && !maps.empty(),
         "localization: maps/boxes mismatch");
  expect(!tau_grid.empty(), "localization: empty tau grid");
  double best = 0.0;
  for (const double tau : tau_grid) {
    expect(tau > 0.0 && tau < 1.0, "localization: tau grid values must lie in (0, 1)");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const SaliencyMap& m = maps[i];
      const double mx = *std::max_element(m.values.begin(), m.values.end());
      const double thr = tau * mx;
      int x0 = static_cast<int>(m.width), y0 = static_cast<int>(m.height), x1 = -1, y1 = -1;
      for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) {
          if (m.at(y, x) >= thr) {
            x0 = std::min(x0, static_cast<int>(x));
            y0 = std::min(y0, static_cast<int>(y));
            x1 = std::max(x1, static_cast<int>(x));
            y1 = std::max(y1, static_cast<int>(y));
          }
        }
      }
      if (x1 < x0) continue;  // cannot happen for tau < 1, kept as a guard
      const BBox found{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
      if (iou(found, gt_boxes[i]) >= iou_thresh) ++hits;
    }
    best = std::max(best, static_cast<double>(hits) / static_cast<double>(maps.size()));
  }
  return best;
}

double localization_eval(const Checkpoint& ckpt, const Corpus& corpus,
                         const LocalizeConfig& cfg) {
  expect(corpus.has_boxes(), "localization: corpus has no ground-truth boxes");
  std::vector<SaliencyMap> maps(corpus.size());
  std::vector<BBox> gts(corpus.size());
  parallel_for(corpus.size(), thread_cap(), [&](std::size_t i) {
    const std::uint64_t seed = Rng::mix(ckpt.train_cfg.seed, kEvalTag, i);
    maps[i] = correspondence_map(ckpt, corpus.items[i].image, seed);
    gts[i] = *corpus.items[i].gt_box;
  });
  return localization_score_maps(maps, gts, cfg.iou_thresh, cfg.tau_grid);
}

}  // namespace cvsa
