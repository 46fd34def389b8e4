#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cvsa/boxsearch.hpp"
#include "cvsa/checkpoint.hpp"
#include "cvsa/objective.hpp"
#include "cvsa/saliency.hpp"

namespace cvsa {

struct CorpusItem {
  std::string name;  // relative image path
  Image image;
  std::optional<BBox> gt_box;
  std::optional<int> label;
};

struct Corpus {
  std::filesystem::path root;
  std::vector<CorpusItem> items;

  bool has_boxes() const;
  bool has_labels() const;
  std::size_t size() const { return items.size(); }
};

// Scans a directory of .png/.ppm images (lexicographic order), picking up
// annotations.jsonl and labels.jsonl when present. Boxes are bounds-checked.
Corpus load_corpus(const std::filesystem::path& dir);

// Per-image saliency boxes for the augmentation pool: the GT annotation when
// available, otherwise the built-in detector plus box search.
std::vector<BBox> corpus_boxes(const Corpus& corpus);

// Worker cap: CVSA_THREADS when set, else the hardware concurrency.
std::size_t thread_cap();

// ---- training ----

// Stage 1: conventional views (random-resized crop + photometric), the
// contrastive objective only, no freezing.
Checkpoint pretrain_stage1(const Corpus& corpus, const TrainConfig& cfg, const ModelConfig& model,
                           const std::filesystem::path& metrics_path);

// Stage 2: SaliencySwap views, the joint objective, the first freeze_k
// encoder stages frozen, model initialized from `init`.
Checkpoint pretrain_stage2(const Corpus& corpus, const Checkpoint& init, const TrainConfig& cfg,
                           const std::filesystem::path& metrics_path);

// Continue a loaded checkpoint toward its configured total_steps, optionally
// pausing at stop_at_step; a paused-and-resumed run is byte-equal to the
// uninterrupted one.
Checkpoint resume_training(const Corpus& corpus, Checkpoint state,
                           const std::filesystem::path& metrics_path,
                           std::optional<std::uint64_t> stop_at_step = std::nullopt);

struct MetricsRecord {
  std::uint64_t step;
  double lr, l_cont, l_align, total;
};
std::vector<MetricsRecord> load_metrics(const std::filesystem::path& path);

// ---- evaluation ----

struct ProbeConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  std::vector<double> lrs{0.1, 0.01, 0.001};
  double holdout_frac = 0.2;
  std::size_t trials = 3;  // averaged; each trial reshuffles the training order
  std::uint64_t seed = 0;
};

// Linear classifier on frozen pooled features; per trial the best held-out
// top-1 over the configured learning rates, averaged over trials.
double linear_probe(const Checkpoint& ckpt, const Corpus& corpus, const ProbeConfig& cfg);

// Core trainer over explicit features (the test hook: inject one-hot
// features and the probe must reach 100%).
double linear_probe_features(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels, const ProbeConfig& cfg);

struct LocalizeConfig {
  double iou_thresh = 0.5;
  std::vector<double> tau_grid;  // defaults to 0.05..0.95 step 0.05
  std::uint64_t seed = 0;

  LocalizeConfig();
};

// Correspondence-intensity localization score: per image, C for the
// (original, photometric) pair is upsampled to image size, binarized at each
// tau * max(C), and the bounding box of the super-threshold pixels is scored
// against the GT box; the result is the best fraction over the tau grid.
double localization_eval(const Checkpoint& ckpt, const Corpus& corpus,
                         const LocalizeConfig& cfg);

// Score precomputed maps (the perfect-map / constant-map test hook).
double localization_score_maps(const std::vector<SaliencyMap>& maps,
                               const std::vector<BBox>& gt_boxes, double iou_thresh,
                               const std::vector<double>& tau_grid);

// Per-image intensity map for the identity pair, upsampled to image size.
SaliencyMap correspondence_map(const Checkpoint& ckpt, const Image& img, std::uint64_t view_seed);

}  // namespace cvsa
