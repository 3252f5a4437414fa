#include "fssuavl/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "fssuavl/error.hpp"
#include "fssuavl/optim.hpp"
#include "fssuavl/rng.hpp"

namespace fssuavl {

std::vector<std::int64_t> EvalConfig::milestone_epochs() const {
  return {static_cast<std::int64_t>(std::llround(0.6 * probe_epochs)),
          static_cast<std::int64_t>(std::llround(0.8 * probe_epochs))};
}

void EvalConfig::validate() const {
  std::vector<std::string> bad;
  if (k < 1) bad.push_back("k must be >= 1");
  if (!(t > 0)) bad.push_back("t must be > 0");
  if (probe_epochs < 0) bad.push_back("probe_epochs must be >= 0");
  if (!(probe_lr > 0)) bad.push_back("probe_lr must be > 0");
  if (probe_batch < 2) bad.push_back("probe_batch must be >= 2");
  if (!(probe_momentum >= 0 && probe_momentum < 1)) bad.push_back("probe_momentum must be in [0, 1)");
  if (!(probe_weight_decay >= 0)) bad.push_back("probe_weight_decay must be >= 0");
  if (bad.empty()) return;
  std::string msg = "invalid eval config:";
  for (const auto& b : bad) msg += " eval." + b + ";";
  throw ConfigError(msg);
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("l2_normalize_rows: expected [M×d], got " + shape_str(x.shape));
  Tensor out = x;
  const auto M = x.dim(0), d = x.dim(1);
  for (std::int64_t i = 0; i < M; ++i) {
    double n2 = 0;
    for (std::int64_t j = 0; j < d; ++j) n2 += double(x.data[i * d + j]) * x.data[i * d + j];
    if (n2 == 0) continue;
    const double inv = 1.0 / std::sqrt(n2);
    for (std::int64_t j = 0; j < d; ++j) out.data[i * d + j] = static_cast<float>(x.data[i * d + j] * inv);
  }
  return out;
}

FeatureBank FeatureBank::from_features(const Tensor& raw, std::vector<int> labels, Modality modality) {
  if (raw.rank() != 2 || static_cast<std::size_t>(raw.dim(0)) != labels.size())
    throw DimensionError("FeatureBank: " + shape_str(raw.shape) + " features for " + std::to_string(labels.size()) +
                         " labels");
  FeatureBank b;
  b.features = l2_normalize_rows(raw);
  b.modalities.assign(labels.size(), modality);
  b.labels = std::move(labels);
  return b;
}

std::vector<int> knn_classify(const FeatureBank& bank, const Tensor& queries, int k, float t, int n_classes) {
  const auto M = static_cast<std::int64_t>(bank.size());
  if (M == 0) throw ContractError("knn_classify: empty feature bank");
  if (k < 1) throw ContractError("knn_classify: k must be >= 1");
  if (!(t > 0)) throw ContractError("knn_classify: t must be > 0");
  if (n_classes < 1) throw ContractError("knn_classify: n_classes must be >= 1");
  if (queries.rank() != 2 || queries.dim(1) != bank.features.dim(1))
    throw DimensionError("knn_classify: queries " + shape_str(queries.shape) + " against bank " +
                         shape_str(bank.features.shape));
  for (int l : bank.labels)
    if (l < 0 || l >= n_classes) throw ContractError("knn_classify: bank label " + std::to_string(l) + " out of range");
  if (k > M) {
    std::cerr << "warning: knn_classify: k=" << k << " exceeds bank size " << M << "; using " << M << "\n";
    k = static_cast<int>(M);
  }
  const Tensor q = l2_normalize_rows(queries);
  const auto d = q.dim(1);
  std::vector<int> out(static_cast<std::size_t>(q.dim(0)));
  std::vector<double> sim(M);
  std::vector<std::int64_t> order(M);
  std::vector<double> score(n_classes);
  for (std::int64_t i = 0; i < q.dim(0); ++i) {
    for (std::int64_t m = 0; m < M; ++m) {
      double s = 0;
      for (std::int64_t j = 0; j < d; ++j) s += double(q.data[i * d + j]) * bank.features.data[m * d + j];
      sim[m] = s;
    }
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::int64_t a, std::int64_t b) {
      return sim[a] != sim[b] ? sim[a] > sim[b] : a < b;
    });
    std::fill(score.begin(), score.end(), 0.0);
    for (int n = 0; n < k; ++n) score[bank.labels[order[n]]] += std::exp(sim[order[n]] / t);
    out[i] = static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw ContractError("accuracy: size mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / labels.size();
}

Tensor extract_features(const EncoderModel& model, const Dataset& d, const FeaturizeConfig& featurize, int chunk) {
  const auto F = static_cast<std::int64_t>(model.feature_dim());
  Tensor out({static_cast<std::int64_t>(d.size()), F});
  for (std::size_t at = 0; at < d.size(); at += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(d.size(), at + chunk); ++i) idx.push_back(i);
    const Tensor f = features(model, eval_batch(d, idx, featurize));
    std::copy(f.data.begin(), f.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(at * F));
  }
  return out;
}

double knn_accuracy(const EncoderModel& model, const Dataset& train, const Dataset& test,
                    const FeaturizeConfig& featurize, const EvalConfig& cfg) {
  const FeatureBank bank =
      FeatureBank::from_features(extract_features(model, train, featurize), train.labels(), train.modality);
  const auto pred = knn_classify(bank, extract_features(model, test, featurize), std::min<int>(cfg.k, bank.size()),
                                 cfg.t, std::max(train.n_classes(), test.n_classes()));
  return accuracy(pred, test.labels());
}

Tensor LinearHead::logits(const Tensor& features) const {
  Graph g;
  return ops::linear(g.constant(features), g.constant(weight), g.constant(bias)).value();
}

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  const auto N = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(N);
  for (std::int64_t i = 0; i < N; ++i) {
    const float* row = logits.data.data() + i * C;
    out[i] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

void require_all_classes(const std::vector<int>& labels, int n_classes, const char* who) {
  std::vector<int> count(n_classes, 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes) throw ContractError(std::string(who) + ": label " + std::to_string(l) + " out of range");
    ++count[l];
  }
  for (int c = 0; c < n_classes; ++c)
    if (count[c] == 0)
      throw ContractError(std::string(who) + ": class " + std::to_string(c) + " has no training example");
}

SgdConfig probe_sgd(const EvalConfig& cfg, std::int64_t steps_per_epoch) {
  SgdConfig sc;
  sc.base_lr = cfg.probe_lr;
  sc.momentum = cfg.probe_momentum;
  sc.weight_decay = cfg.probe_weight_decay;
  for (auto e : cfg.milestone_epochs()) sc.milestones.push_back(e * steps_per_epoch);
  return sc;
}

// Shuffled minibatches of [0, n); a trailing batch of one is dropped (batch norm
// needs two rows).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < n; at += batch) {
    const std::size_t end = std::min(n, at + static_cast<std::size_t>(batch));
    if (end - at < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  Shape s = x.shape;
  const std::size_t per = x.numel() / static_cast<std::size_t>(s[0]);
  s[0] = static_cast<std::int64_t>(rows.size());
  Tensor out(s);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * per), per,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  return out;
}

std::vector<int> pick(const std::vector<int>& v, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  for (auto r : rows) out.push_back(v[r]);
  return out;
}

}  // namespace

std::vector<int> LinearHead::predict(const Tensor& features) const { return argmax_rows(logits(features)); }

LinearHead train_linear_head(const Tensor& features, const std::vector<int>& labels, int n_classes,
                             const EvalConfig& cfg) {
  cfg.validate();
  if (features.rank() != 2 || static_cast<std::size_t>(features.dim(0)) != labels.size())
    throw DimensionError("train_linear_head: " + shape_str(features.shape) + " features for " +
                         std::to_string(labels.size()) + " labels");
  if (n_classes < 2) throw ContractError("train_linear_head: need at least 2 classes");
  require_all_classes(labels, n_classes, "train_linear_head");
  const auto d = features.dim(1);
  LinearHead head;
  head.weight = Tensor({n_classes, d});
  head.bias = Tensor::zeros({n_classes});
  Rng init(derive_seed(cfg.seed, {hash_name("probe.head")}));
  const double bound = std::sqrt(3.0 / static_cast<double>(d));
  for (auto& v : head.weight.data) v = static_cast<float>(init.uniform(-bound, bound));

  const std::int64_t per_epoch =
      static_cast<std::int64_t>(epoch_batches(labels.size(), cfg.probe_batch, 0).size());
  Sgd sgd(probe_sgd(cfg, per_epoch));
  NamedTensors params{{"weight", head.weight}, {"bias", head.bias}};
  for (int e = 0; e < cfg.probe_epochs; ++e) {
    for (const auto& rows : epoch_batches(labels.size(), cfg.probe_batch,
                                          derive_seed(cfg.seed, {hash_name("probe.epoch"), std::uint64_t(e)}))) {
      Graph g;
      Var w = g.variable(params.at("weight")), b = g.variable(params.at("bias"));
      Var loss = ops::cross_entropy(ops::linear(g.constant(gather_rows(features, rows)), w, b), pick(labels, rows));
      g.backward(loss);
      sgd.step(params, {{"weight", g.grad(w)}, {"bias", g.grad(b)}});
    }
  }
  head.weight = params.at("weight");
  head.bias = params.at("bias");
  return head;
}

ProbeResult linear_probe(const EncoderModel& backbone, const Dataset& train, const Dataset& test,
                         const FeaturizeConfig& featurize, const EvalConfig& cfg) {
  const int C = std::max(train.n_classes(), test.n_classes());
  const Tensor ftrain = extract_features(backbone, train, featurize);
  const LinearHead head = train_linear_head(ftrain, train.labels(), C, cfg);
  ProbeResult r;
  r.train_accuracy = accuracy(head.predict(ftrain), train.labels());
  r.test_accuracy = accuracy(head.predict(extract_features(backbone, test, featurize)), test.labels());
  r.classifier.backbone = backbone;
  r.classifier.head_weight = head.weight;
  r.classifier.head_bias = head.bias;
  r.classifier.freeze_backbone = true;
  return r;
}

ProbeResult fine_tune(const EncoderModel& backbone, const Dataset& train, const Dataset& test,
                      const FeaturizeConfig& featurize, const EvalConfig& cfg) {
  cfg.validate();
  const int C = std::max(train.n_classes(), test.n_classes());
  const auto labels = train.labels();
  require_all_classes(labels, C, "fine_tune");
  Classifier clf = attach_head(backbone, C, cfg.seed, false);
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor views = eval_batch(train, all, featurize);

  const std::int64_t per_epoch = static_cast<std::int64_t>(epoch_batches(labels.size(), cfg.probe_batch, 0).size());
  Sgd body_sgd(probe_sgd(cfg, per_epoch)), head_sgd(probe_sgd(cfg, per_epoch));
  NamedTensors head{{"weight", clf.head_weight}, {"bias", clf.head_bias}};
  for (int e = 0; e < cfg.probe_epochs; ++e) {
    for (const auto& rows : epoch_batches(labels.size(), cfg.probe_batch,
                                          derive_seed(cfg.seed, {hash_name("finetune.epoch"), std::uint64_t(e)}))) {
      Graph g;
      EncoderForward fwd(g, clf.backbone, Trainable::yes, true);
      Var w = g.variable(head.at("weight")), b = g.variable(head.at("bias"));
      Var loss = ops::cross_entropy(ops::linear(fwd.features(g.constant(gather_rows(views, rows))), w, b),
                                    pick(labels, rows));
      if (!std::isfinite(loss.value().data[0]))
        throw DivergenceError("fine_tune: non-finite loss at epoch " + std::to_string(e));
      g.backward(loss);
      body_sgd.step(clf.backbone.params(), fwd.gradients());
      head_sgd.step(head, {{"weight", g.grad(w)}, {"bias", g.grad(b)}});
    }
  }
  clf.head_weight = head.at("weight");
  clf.head_bias = head.at("bias");

  auto predict = [&](const Dataset& d) {
    return argmax_rows(head_logits(clf, extract_features(clf.backbone, d, featurize)));
  };
  ProbeResult r;
  r.train_accuracy = accuracy(predict(train), labels);
  r.test_accuracy = accuracy(predict(test), test.labels());
  r.classifier = std::move(clf);
  return r;
}

std::vector<int> fuse_logits(const Tensor& image_logits, const Tensor& audio_logits) {
  if (image_logits.shape != audio_logits.shape || image_logits.rank() != 2)
    throw DimensionError("fuse_logits: " + shape_str(image_logits.shape) + " vs " + shape_str(audio_logits.shape));
  Tensor mean = image_logits;
  for (std::size_t i = 0; i < mean.numel(); ++i) mean.data[i] = 0.5f * (image_logits.data[i] + audio_logits.data[i]);
  return argmax_rows(mean);
}

int fused_predict(const Classifier& clf, const Tensor& image_view, const Tensor& audio_view) {
  return fuse_logits(classifier_logits(clf, image_view), classifier_logits(clf, audio_view)).at(0);
}

namespace {

Tensor concat_columns(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ContractError("concat_knn: unpaired features " + shape_str(a.shape) + " and " + shape_str(b.shape));
  const auto N = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor out({N, da + db});
  for (std::int64_t i = 0; i < N; ++i) {
    std::copy_n(a.data.begin() + i * da, da, out.data.begin() + i * (da + db));
    std::copy_n(b.data.begin() + i * db, db, out.data.begin() + i * (da + db) + da);
  }
  return out;
}

}  // namespace

std::vector<int> concat_knn(const Tensor& bank_a, const Tensor& bank_b, const std::vector<int>& labels,
                            const Tensor& query_a, const Tensor& query_b, int k, float t, int n_classes) {
  const FeatureBank bank =
      FeatureBank::from_features(concat_columns(bank_a, bank_b), labels, Modality::image);
  return knn_classify(bank, concat_columns(query_a, query_b), k, t, n_classes);
}

double modality_separability(const EncoderModel& model, const Dataset& images, const Dataset& audio,
                             const FeaturizeConfig& featurize, const EvalConfig& cfg) {
  if (images.size() == 0 || audio.size() == 0) throw ContractError("modality_separability: empty modality set");
  const Tensor fi = extract_features(model, images, featurize), fa = extract_features(model, audio, featurize);
  const auto F = fi.dim(1);
  const std::size_t N = images.size() + audio.size();
  Tensor all({static_cast<std::int64_t>(N), F});
  std::copy(fi.data.begin(), fi.data.end(), all.data.begin());
  std::copy(fa.data.begin(), fa.data.end(), all.data.begin() + static_cast<std::ptrdiff_t>(fi.numel()));
  std::vector<int> labels(N, 0);
  std::fill(labels.begin() + static_cast<std::ptrdiff_t>(images.size()), labels.end(), 1);

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, {hash_name("separability")}));
  rng.shuffle(order);
  const std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(N / 2)),
      te(order.begin() + static_cast<std::ptrdiff_t>(N / 2), order.end());
  const LinearHead head = train_linear_head(gather_rows(all, tr), pick(labels, tr), 2, cfg);
  return accuracy(head.predict(gather_rows(all, te)), pick(labels, te));
}

namespace {

std::string format_float(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void check_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\r\"") != std::string::npos)
    throw ContractError(std::string("export_embeddings: ") + what + " '" + s + "' contains a CSV delimiter");
}

}  // namespace

void export_embeddings(const EncoderModel& model, const std::vector<std::pair<std::string, const Dataset*>>& datasets,
                       const FeaturizeConfig& featurize, const std::filesystem::path& path) {
  std::ostringstream out;
  const int F = model.feature_dim();
  out << "id,dataset,modality,label";
  for (int j = 0; j < F; ++j) out << ",f" << j;
  out << "\n";
  for (const auto& [tag, d] : datasets) {
    check_field(tag, "dataset tag");
    const Tensor f = extract_features(model, *d, featurize);
    for (std::size_t i = 0; i < d->size(); ++i) {
      check_field(d->ids.at(i), "id");
      out << d->ids[i] << ',' << tag << ',' << to_string(d->modality) << ',' << d->label(i);
      for (int j = 0; j < F; ++j) out << ',' << format_float(f.data[i * F + j]);
      out << "\n";
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("export_embeddings: cannot open " + path.string() + " for writing");
  file << out.str();
  file.close();
  if (!file) throw Error("export_embeddings: write to " + path.string() + " failed");
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open embeddings file");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EmbeddingTable t;
  std::size_t pos = 0, line_no = 0;
  std::int64_t F = -1;
  std::vector<float> values;
  while (pos < text.size()) {
    const std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) throw FormatError(path.string(), pos, "last line is not LF-terminated");
    const std::string line = text.substr(pos, eol - pos);
    std::vector<std::string> cells;
    std::size_t a = 0;
    while (true) {
      const std::size_t b = line.find(',', a);
      cells.push_back(line.substr(a, b == std::string::npos ? std::string::npos : b - a));
      if (b == std::string::npos) break;
      a = b + 1;
    }
    if (line_no == 0) {
      if (cells.size() < 5 || cells[0] != "id" || cells[1] != "dataset" || cells[2] != "modality" || cells[3] != "label")
        throw FormatError(path.string(), pos, "unexpected header");
      F = static_cast<std::int64_t>(cells.size()) - 4;
      for (std::int64_t j = 0; j < F; ++j)
        if (cells[4 + j] != "f" + std::to_string(j)) throw FormatError(path.string(), pos, "unexpected header column");
    } else {
      if (static_cast<std::int64_t>(cells.size()) != F + 4)
        throw FormatError(path.string(), pos, "row has " + std::to_string(cells.size()) + " cells, expected " +
                                                  std::to_string(F + 4));
      t.ids.push_back(cells[0]);
      t.datasets.push_back(cells[1]);
      try {
        t.modalities.push_back(modality_from_string(cells[2]));
      } catch (const Error&) {
        throw FormatError(path.string(), pos, "unknown modality '" + cells[2] + "'");
      }
      int label = 0;
      auto [p, ec] = std::from_chars(cells[3].data(), cells[3].data() + cells[3].size(), label);
      if (ec != std::errc() || p != cells[3].data() + cells[3].size())
        throw FormatError(path.string(), pos, "bad label '" + cells[3] + "'");
      t.labels.push_back(label);
      for (std::int64_t j = 0; j < F; ++j) {
        const std::string& c = cells[4 + j];
        float v = 0;
        auto [q, ec2] = std::from_chars(c.data(), c.data() + c.size(), v);
        if (ec2 != std::errc() || q != c.data() + c.size())
          throw FormatError(path.string(), pos, "bad feature value '" + c + "'");
        values.push_back(v);
      }
    }
    pos = eol + 1;
    ++line_no;
  }
  if (line_no == 0) throw FormatError(path.string(), 0, "empty file");
  t.features = Tensor({static_cast<std::int64_t>(t.labels.size()), F}, std::move(values));
  return t;
}

}  // namespace fssuavl
