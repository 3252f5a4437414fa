#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fssuavl/encoder.hpp"
#include "fssuavl/modality.hpp"

namespace fssuavl {

struct EvalConfig {
  int k = 200;
  float t = 0.1f;
  int probe_epochs = 60;
  float probe_lr = 0.03f;
  int probe_batch = 64;
  float probe_momentum = 0.9f;
  float probe_weight_decay = 0.0f;
  std::uint64_t seed = 0;

  // Epochs after which the rate drops by 10×: 60% and 80% of probe_epochs.
  std::vector<std::int64_t> milestone_epochs() const;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

// Rows scaled to unit l2 norm; all-zero rows stay zero.
Tensor l2_normalize_rows(const Tensor& x);

struct FeatureBank {
  Tensor features;  // [M×d], unit rows
  std::vector<int> labels;
  std::vector<Modality> modalities;

  std::size_t size() const { return labels.size(); }

  // Normalizes `raw`; every row gets the same modality tag.
  static FeatureBank from_features(const Tensor& raw, std::vector<int> labels, Modality modality);
};

// Weighted KNN vote: top-k cosine neighbours (ties between equal similarities
// go to the lower bank row), score_c = Σ exp(sim/t) over neighbours of class c,
// argmax with ties to the smallest class id. k > M is clamped to M.
std::vector<int> knn_classify(const FeatureBank& bank, const Tensor& queries, int k, float t, int n_classes);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

// Backbone features of eval views, [n×feature_dim], computed in chunks.
Tensor extract_features(const EncoderModel& model, const Dataset& d, const FeaturizeConfig& featurize,
                        int chunk = 64);

// KNN accuracy of `test` queries against a bank built from `train`.
double knn_accuracy(const EncoderModel& model, const Dataset& train, const Dataset& test,
                    const FeaturizeConfig& featurize, const EvalConfig& cfg);

struct LinearHead {
  Tensor weight;  // [C×d]
  Tensor bias;    // [C]

  Tensor logits(const Tensor& features) const;
  std::vector<int> predict(const Tensor& features) const;
};

// Softmax regression on fixed features with the probe schedule (SGD, step
// decay at 60% / 80% of the epochs). Throws ContractError when a class in
// [0, n_classes) has no training example.
LinearHead train_linear_head(const Tensor& features, const std::vector<int>& labels, int n_classes,
                             const EvalConfig& cfg);

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  Classifier classifier;
};

// Frozen backbone, features extracted once, new linear head trained on top.
ProbeResult linear_probe(const EncoderModel& backbone, const Dataset& train, const Dataset& test,
                         const FeaturizeConfig& featurize, const EvalConfig& cfg);

// Backbone and head trained end to end on eval views (train-mode batch norm),
// same schedule as the probe. With probe_epochs = 0 this evaluates the freshly
// attached head.
ProbeResult fine_tune(const EncoderModel& backbone, const Dataset& train, const Dataset& test,
                      const FeaturizeConfig& featurize, const EvalConfig& cfg);

// Row-wise argmax of 0.5·(a + b), ties to the smallest class id.
std::vector<int> fuse_logits(const Tensor& image_logits, const Tensor& audio_logits);

// One paired sample: image view and audio view, each [1×1×S×S].
int fused_predict(const Classifier& clf, const Tensor& image_view, const Tensor& audio_view);

// KNN on [a | b] concatenations, normalized after concatenation.
std::vector<int> concat_knn(const Tensor& bank_a, const Tensor& bank_b, const std::vector<int>& labels,
                            const Tensor& query_a, const Tensor& query_b, int k, float t, int n_classes);

// Held-out accuracy of a linear image-vs-audio classifier on backbone features.
// Samples alternate into train / held-out halves after a seeded shuffle.
double modality_separability(const EncoderModel& model, const Dataset& images, const Dataset& audio,
                             const FeaturizeConfig& featurize, const EvalConfig& cfg);

// CSV with header `id,dataset,modality,label,f0,...,f{d-1}`, one row per sample
// in dataset order. Floats are written in shortest round-trip form.
void export_embeddings(const EncoderModel& model, const std::vector<std::pair<std::string, const Dataset*>>& datasets,
                       const FeaturizeConfig& featurize, const std::filesystem::path& path);

struct EmbeddingTable {
  std::vector<std::string> ids;
  std::vector<std::string> datasets;
  std::vector<Modality> modalities;
  std::vector<int> labels;
  Tensor features;  // [rows×d]

  bool operator==(const EmbeddingTable&) const = default;
};

EmbeddingTable read_embeddings(const std::filesystem::path& path);

}  // namespace fssuavl
