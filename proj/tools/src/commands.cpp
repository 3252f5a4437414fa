#include "fssuavl/cli/commands.hpp"

#ifdef FSSUAVL_CLI11_PACKAGE
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <regex>

#include "fssuavl/checkpoint.hpp"
#include "fssuavl/error.hpp"
#include "fssuavl/eval.hpp"
#include "fssuavl/experiment.hpp"
#include "fssuavl/metrics.hpp"
#include "fssuavl/orchestrator.hpp"
#include "fssuavl/partition.hpp"

namespace fssuavl::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int round, const std::string& sub) {
  char name[32];
  std::snprintf(name, sizeof name, "round_%04d.ckpt", round);
  fs::path dir = run_dir / "checkpoints";
  if (!sub.empty()) dir /= sub;
  return dir / name;
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return std::nullopt;
  std::optional<fs::path> best;
  int best_round = -1;
  static const std::regex pattern(R"(round_(\d{4,})\.ckpt)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!entry.is_regular_file() || !std::regex_match(name, m, pattern)) continue;
    const int round = std::stoi(m[1].str());
    if (round > best_round) best_round = round, best = entry.path();
  }
  return best;
}

namespace {

// A failure that is not one of the library's error types.
struct CliError : std::runtime_error {
  CliError(std::string kind, int code, const std::string& what)
      : std::runtime_error(what), kind(std::move(kind)), code(code) {}
  std::string kind;
  int code;
};

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string checkpoint;
  std::string modality = "both";
};

struct SynthOptions {
  std::string modality;
  int classes = 0;
  int per_class = 0;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f.flush()) throw CliError("io", kRunFailed, "cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool non_empty_dir(const fs::path& p) {
  std::error_code ec;
  return fs::is_directory(p, ec) && fs::directory_iterator(p) != fs::directory_iterator();
}

// Base config: --config, else <out>/config.resolved when --out names an
// existing run, else the built-in defaults. Then --set, --seed, --out.
ExperimentConfig resolve_config(const Options& o) {
  std::vector<std::string> overrides = o.sets;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (!o.out.empty()) overrides.push_back("out=" + json(o.out).dump());
  if (!o.config.empty()) return load_experiment_config(o.config, overrides);
  if (!o.out.empty() && fs::exists(fs::path(o.out) / "config.resolved"))
    return load_experiment_config(fs::path(o.out) / "config.resolved", overrides);
  return parse_experiment_config("{}", overrides, "<defaults>");
}

std::vector<Modality> modalities(const std::string& which) {
  if (which == "both") return {Modality::image, Modality::audio};
  return {modality_from_string(which)};
}

// Claims the run directory for a training command and freezes the config.
void prepare_run_dir(const ExperimentConfig& cfg, bool force, bool training) {
  const fs::path dir = cfg.out;
  const std::string resolved = experiment_config_to_json(cfg);
  const fs::path frozen = dir / "config.resolved";
  if (!force) {
    if (fs::exists(frozen) && read_text(frozen) != resolved)
      throw CliError("run_dir_conflict", kConfig,
                     dir.string() + " was created with a different config; pass --force to overwrite it");
    if (training && non_empty_dir(dir / "checkpoints"))
      throw CliError("run_dir_conflict", kConfig, dir.string() + " already holds checkpoints; pass --force to overwrite");
  }
  if (training) {
    fs::remove_all(dir / "checkpoints");
    fs::remove(dir / "metrics.jsonl");
  }
  write_text_atomic(frozen, resolved);
}

Partition build_partition(const ExperimentConfig& cfg, const Corpora& data) {
  return make_partition(cfg.partition, data.train_images.labels(), data.train_audio.labels());
}

EncoderModel model_from_state(const EncoderConfig& enc, const NamedTensors& state) {
  EncoderModel m = EncoderModel::build(enc, 0);
  m.load_state(state);
  return m;
}

// Per-round metrics and periodic checkpoints for one federation.
class RoundRecorder {
 public:
  RoundRecorder(const ExperimentConfig& cfg, MetricsLog& log, std::string phase, std::optional<Modality> modality,
                std::string sub)
      : cfg_(cfg), log_(log), phase_(std::move(phase)), modality_(modality), sub_(std::move(sub)) {}

  void operator()(const RoundResult& r, const NamedTensors& global) {
    for (const auto& c : r.clients) {
      emit(r.round, c.client_id, "final_epoch_loss", c.final_epoch_loss());
      emit(r.round, c.client_id, "beta", c.beta);
    }
    emit(r.round, std::nullopt, "mean_final_epoch_loss", r.mean_final_epoch_loss());
    emit(r.round, std::nullopt, "beta_sum", r.beta_sum);
    emit(r.round, std::nullopt, "local_batches", static_cast<double>(r.batch_count()));
    emit(r.round, std::nullopt, "seconds", r.seconds);
    const int every = cfg_.federation.checkpoint_every;
    if ((every > 0 && r.round % every == 0) || r.round == cfg_.federation.rounds) save(r.round, global);
  }

  // Makes sure the last state reached is on disk (R = 0, or a batch budget that
  // ended the run early).
  fs::path finish(const PretrainResult& res) {
    const int last = static_cast<int>(res.rounds.size());
    if (last != last_saved_) save(last, res.final_weights);
    return checkpoint_path(cfg_.out, last, sub_);
  }

 private:
  void emit(int round, std::optional<int> client, const std::string& metric, double value) {
    MetricsRecord rec;
    rec.timestamp = unix_now();
    rec.round = round;
    rec.phase = phase_;
    rec.client = client;
    rec.modality = modality_;
    rec.metric = metric;
    rec.value = value;
    log_.append(rec);
  }

  void save(int round, const NamedTensors& state) {
    const fs::path p = checkpoint_path(cfg_.out, round, sub_);
    fs::create_directories(p.parent_path());
    save_checkpoint(model_from_state(cfg_.encoder, state), {round, *cfg_.seed}, p);
    last_saved_ = round;
  }

  const ExperimentConfig& cfg_;
  MetricsLog& log_;
  std::string phase_;
  std::optional<Modality> modality_;
  std::string sub_;
  int last_saved_ = -1;
};

void log_eval(MetricsLog& log, int round, const std::string& phase, Modality m, const std::string& metric,
              double value) {
  MetricsRecord rec;
  rec.timestamp = unix_now();
  rec.round = round;
  rec.phase = phase;
  rec.modality = m;
  rec.metric = metric;
  rec.value = value;
  log.append(rec);
}

// --- commands ---------------------------------------------------------------

int cmd_gen_synth(const SynthOptions& o, std::ostream& out) {
  const fs::path dir = o.out;
  if (non_empty_dir(dir) && !o.force)
    throw CliError("target_not_empty", kUsage, dir.string() + " is not empty; pass --force to replace it");
  const Dataset d = gen_synthetic_corpus(modality_from_string(o.modality), o.classes, o.per_class, o.seed);
  fs::remove_all(dir);
  save_dataset(d, dir);
  out << json{{"command", "gen-synth"}, {"out", dir.string()}, {"modality", o.modality},
              {"classes", o.classes},   {"samples", d.size()}}
             .dump()
      << "\n";
  return kOk;
}

int cmd_partition(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o);
  const Corpora data = load_corpora(cfg);
  const Partition p = build_partition(cfg, data);
  prepare_run_dir(cfg, o.force, false);
  save_partition(p, fs::path(cfg.out) / "partition.json");
  const auto report = heterogeneity_stats(p.clients, data.train_images.labels(), data.train_audio.labels());
  out << json{{"command", "partition"},
              {"out", (fs::path(cfg.out) / "partition.json").string()},
              {"clients", p.clients.size()},
              {"mean_max_class_proportion", report.mean_max_class_proportion},
              {"min_client_size", report.min_client_size},
              {"median_client_size", report.median_client_size},
              {"max_client_size", report.max_client_size}}
             .dump()
      << "\n";
  return kOk;
}

int cmd_pretrain(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o);
  const Corpora data = load_corpora(cfg);
  const Partition p = build_partition(cfg, data);
  prepare_run_dir(cfg, o.force, true);
  save_partition(p, fs::path(cfg.out) / "partition.json");
  MetricsLog log(fs::path(cfg.out) / "metrics.jsonl");
  RoundRecorder rec(cfg, log, "pretrain", std::nullopt, "");
  const PretrainResult res =
      run_pretraining(cfg.pretrain(), p.clients, data.train_images, data.train_audio, std::ref(rec));
  const fs::path last = rec.finish(res);
  out << json{{"command", "pretrain"},
              {"rounds", res.rounds.size()},
              {"local_batches", res.batch_count()},
              {"final_loss", res.rounds.empty() ? 0.0 : res.rounds.back().mean_final_epoch_loss()},
              {"checkpoint", last.string()}}
             .dump()
      << "\n";
  return kOk;
}

int cmd_model_comb(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o);
  const Corpora data = load_corpora(cfg);
  const Partition p = build_partition(cfg, data);
  prepare_run_dir(cfg, o.force, true);
  save_partition(p, fs::path(cfg.out) / "partition.json");
  MetricsLog log(fs::path(cfg.out) / "metrics.jsonl");
  RoundRecorder image(cfg, log, "model_comb", Modality::image, "image");
  RoundRecorder audio(cfg, log, "model_comb", Modality::audio, "audio");
  const auto res = run_model_combination(cfg.pretrain(), p.clients, data.train_images, data.train_audio,
                                         std::ref(image), std::ref(audio));
  const fs::path image_last = image.finish(res.image_expert);
  const fs::path audio_last = audio.finish(res.audio_expert);
  out << json{{"command", "model-comb"},
              {"image_clients", res.image_clients.size()},
              {"audio_clients", res.audio_clients.size()},
              {"local_batches", res.image_expert.batch_count() + res.audio_expert.batch_count()},
              {"image_checkpoint", image_last.string()},
              {"audio_checkpoint", audio_last.string()}}
             .dump()
      << "\n";
  return kOk;
}

struct EvalContext {
  ExperimentConfig cfg;
  fs::path checkpoint;
  Checkpoint ckpt;
  EncoderModel model;
  Corpora data;
};

// Everything an eval command needs, resolved before anything is written.
EvalContext open_eval(const Options& o) {
  EvalContext c;
  c.cfg = resolve_config(o);
  if (!o.checkpoint.empty()) {
    c.checkpoint = o.checkpoint;
    if (!fs::exists(c.checkpoint))
      throw CliError("missing_checkpoint", kInput, "checkpoint " + c.checkpoint.string() + " does not exist");
  } else {
    const auto latest = latest_checkpoint(fs::path(c.cfg.out) / "checkpoints");
    if (!latest)
      throw CliError("missing_checkpoint", kInput,
                     "no checkpoint under " + (fs::path(c.cfg.out) / "checkpoints").string() +
                         "; run pretrain first or pass --checkpoint");
    c.checkpoint = *latest;
  }
  c.ckpt = load_checkpoint(c.checkpoint);
  c.model = model_from_checkpoint(c.ckpt, &c.cfg.encoder);
  c.data = load_corpora(c.cfg);
  return c;
}

const Dataset& train_of(const Corpora& d, Modality m) {
  return m == Modality::image ? d.train_images : d.train_audio;
}
const Dataset& test_of(const Corpora& d, Modality m) { return m == Modality::image ? d.test_images : d.test_audio; }

int cmd_eval_knn(const Options& o, std::ostream& out) {
  EvalContext c = open_eval(o);
  std::vector<std::pair<Modality, double>> results;
  for (Modality m : modalities(o.modality))
    results.emplace_back(m, knn_accuracy(c.model, train_of(c.data, m), test_of(c.data, m), c.cfg.featurize, c.cfg.eval));
  MetricsLog log(fs::path(c.cfg.out) / "metrics.jsonl");
  for (const auto& [m, acc] : results) {
    log_eval(log, c.ckpt.meta.round, "eval_knn", m, "knn_accuracy", acc);
    out << json{{"command", "eval-knn"},
                {"checkpoint", c.checkpoint.string()},
                {"modality", to_string(m)},
                {"k", c.cfg.eval.k},
                {"accuracy", acc}}
               .dump()
        << "\n";
  }
  return kOk;
}

template <class Fn>
int probe_like(const Options& o, std::ostream& out, const char* command, const char* phase, Fn fn) {
  EvalContext c = open_eval(o);
  std::vector<std::pair<Modality, ProbeResult>> results;
  for (Modality m : modalities(o.modality))
    results.emplace_back(m, fn(c.model, train_of(c.data, m), test_of(c.data, m), c.cfg.featurize, c.cfg.eval));
  MetricsLog log(fs::path(c.cfg.out) / "metrics.jsonl");
  for (const auto& [m, r] : results) {
    log_eval(log, c.ckpt.meta.round, phase, m, "train_accuracy", r.train_accuracy);
    log_eval(log, c.ckpt.meta.round, phase, m, "test_accuracy", r.test_accuracy);
    out << json{{"command", command},
                {"checkpoint", c.checkpoint.string()},
                {"modality", to_string(m)},
                {"train_accuracy", r.train_accuracy},
                {"test_accuracy", r.test_accuracy}}
               .dump()
        << "\n";
  }
  return kOk;
}

// Pairs the j-th image of class c with the j-th audio clip of class c.
std::vector<std::pair<std::size_t, std::size_t>> pair_by_label(const Dataset& images, const Dataset& audio) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t j = 0; j < audio.size(); ++j) by_class[audio.label(j)].push_back(j);
  std::map<int, std::size_t> used;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int y = images.label(i);
    auto it = by_class.find(y);
    if (it == by_class.end() || used[y] >= it->second.size()) continue;
    pairs.emplace_back(i, it->second[used[y]++]);
  }
  return pairs;
}

Tensor rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  const std::int64_t d = x.dim(1);
  Tensor out({static_cast<std::int64_t>(idx.size()), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * d));
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::int64_t n = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto row = logits.data.begin() + i * C;
    out[i] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

// One linear head over backbone features of both training modalities; test
// pairs are classified from each modality alone and from the averaged logits.
int cmd_eval_fusion(const Options& o, std::ostream& out) {
  EvalContext c = open_eval(o);
  const Corpora& d = c.data;
  if (d.train_images.classes != d.train_audio.classes)
    throw ContractError("eval-fusion: image and audio corpora have different class lists");
  const int C = d.train_images.n_classes();
  const Tensor fi = extract_features(c.model, d.train_images, c.cfg.featurize);
  const Tensor fa = extract_features(c.model, d.train_audio, c.cfg.featurize);
  Tensor both({fi.dim(0) + fa.dim(0), fi.dim(1)});
  std::copy(fi.data.begin(), fi.data.end(), both.data.begin());
  std::copy(fa.data.begin(), fa.data.end(), both.data.begin() + static_cast<std::ptrdiff_t>(fi.numel()));
  std::vector<int> y = d.train_images.labels();
  const auto ya = d.train_audio.labels();
  y.insert(y.end(), ya.begin(), ya.end());
  const LinearHead head = train_linear_head(both, y, C, c.cfg.eval);

  const auto pairs = pair_by_label(d.test_images, d.test_audio);
  if (pairs.empty()) throw ContractError("eval-fusion: no test image/audio pairs share a label");
  std::vector<std::size_t> ii, ia;
  std::vector<int> truth;
  for (const auto& [i, a] : pairs) ii.push_back(i), ia.push_back(a), truth.push_back(d.test_images.label(i));
  const Tensor li = head.logits(rows(extract_features(c.model, d.test_images, c.cfg.featurize), ii));
  const Tensor la = head.logits(rows(extract_features(c.model, d.test_audio, c.cfg.featurize), ia));
  const double acc_i = accuracy(argmax_rows(li), truth);
  const double acc_a = accuracy(argmax_rows(la), truth);
  const double acc_f = accuracy(fuse_logits(li, la), truth);

  MetricsLog log(fs::path(c.cfg.out) / "metrics.jsonl");
  log_eval(log, c.ckpt.meta.round, "eval_fusion", Modality::image, "unimodal_accuracy", acc_i);
  log_eval(log, c.ckpt.meta.round, "eval_fusion", Modality::audio, "unimodal_accuracy", acc_a);
  MetricsRecord fused;
  fused.timestamp = unix_now();
  fused.round = c.ckpt.meta.round;
  fused.phase = "eval_fusion";
  fused.metric = "fused_accuracy";
  fused.value = acc_f;
  log.append(fused);
  out << json{{"command", "eval-fusion"},
              {"checkpoint", c.checkpoint.string()},
              {"pairs", pairs.size()},
              {"image_accuracy", acc_i},
              {"audio_accuracy", acc_a},
              {"fused_accuracy", acc_f}}
             .dump()
      << "\n";
  return kOk;
}

int cmd_export_embeddings(const Options& o, std::ostream& out) {
  EvalContext c = open_eval(o);
  std::vector<std::pair<std::string, const Dataset*>> sets;
  for (Modality m : modalities(o.modality)) {
    const std::string tag = m == Modality::image ? "images" : "audio";
    sets.emplace_back("train_" + tag, &train_of(c.data, m));
    sets.emplace_back("test_" + tag, &test_of(c.data, m));
  }
  const fs::path path = fs::path(c.cfg.out) / "embeddings" / (c.checkpoint.stem().string() + ".csv");
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  export_embeddings(c.model, sets, c.cfg.featurize, tmp);
  fs::rename(tmp, path);
  std::size_t n = 0;
  for (const auto& s : sets) n += s.second->size();
  out << json{{"command", "export-embeddings"},
              {"checkpoint", c.checkpoint.string()},
              {"out", path.string()},
              {"rows", n},
              {"dim", c.model.feature_dim()}}
             .dump()
      << "\n";
  return kOk;
}

void add_run_options(CLI::App* sub, Options& o, bool with_checkpoint) {
  sub->add_option("--config", o.config, "JSON config file (default: <out>/config.resolved if present)");
  sub->add_option("--set", o.sets, "Override a config key, e.g. --set federation.rounds=5 (repeatable)");
  sub->add_option("--seed", o.seed, "Master seed (same as --set seed=N)");
  sub->add_option("--out", o.out, "Run directory (same as --set out=DIR)");
  sub->add_flag("--force", o.force, "Overwrite an existing run directory");
  if (with_checkpoint) {
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate (default: latest in <out>/checkpoints)");
    sub->add_option("--modality", o.modality, "image, audio or both")
        ->check(CLI::IsMember({"image", "audio", "both"}));
  }
}

void report(std::ostream& err, const std::string& command, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"command", command}, {"message", message}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated self-supervised audio-visual pretraining and evaluation", "fssuavl"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Options o;
  SynthOptions s;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic labeled corpus");
  gen->add_option("--modality", s.modality, "image or audio")->required()->check(CLI::IsMember({"image", "audio"}));
  gen->add_option("--classes", s.classes, "Number of classes (>= 2)")->required()->check(CLI::Range(2, 100000));
  gen->add_option("--per-class", s.per_class, "Samples per class")->required()->check(CLI::Range(1, 1000000));
  gen->add_option("--seed", s.seed, "Generator seed")->required();
  gen->add_option("--out", s.out, "Target directory")->required();
  gen->add_flag("--force", s.force, "Replace a non-empty target");

  struct Sub {
    const char* name;
    const char* help;
    bool checkpoint;
  };
  const Sub subs[] = {
      {"partition", "Split the training corpora over simulated clients", false},
      {"pretrain", "Federated self-supervised pretraining of one shared encoder", false},
      {"model-comb", "Baseline: separate image and audio federations", false},
      {"eval-knn", "Weighted KNN accuracy on backbone features", true},
      {"eval-probe", "Linear probe on the frozen backbone", true},
      {"eval-finetune", "End-to-end fine-tuning with a new linear head", true},
      {"eval-fusion", "Late fusion of image and audio logits on label-paired test samples", true},
      {"export-embeddings", "Write backbone features of all corpora as CSV", true},
  };
  for (const auto& sub : subs) add_run_options(app.add_subcommand(sub.name, sub.help), o, sub.checkpoint);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("fssuavl");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    const auto chosen = app.get_subcommands();
    report(err, chosen.empty() ? "" : chosen.front()->get_name(), "usage", e.what());
    return kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "gen-synth") return cmd_gen_synth(s, out);
    if (command == "partition") return cmd_partition(o, out);
    if (command == "pretrain") return cmd_pretrain(o, out);
    if (command == "model-comb") return cmd_model_comb(o, out);
    if (command == "eval-knn") return cmd_eval_knn(o, out);
    if (command == "eval-probe") return probe_like(o, out, "eval-probe", "eval_probe", linear_probe);
    if (command == "eval-finetune") return probe_like(o, out, "eval-finetune", "eval_finetune", fine_tune);
    if (command == "eval-fusion") return cmd_eval_fusion(o, out);
    if (command == "export-embeddings") return cmd_export_embeddings(o, out);
    report(err, command, "usage", "unknown command");
    return kUsage;
  } catch (const CliError& e) {
    report(err, command, e.kind, e.what());
    return e.code;
  } catch (const ConfigError& e) {
    report(err, command, "config", e.what());
    return kConfig;
  } catch (const FormatError& e) {
    report(err, command, "format", e.what());
    return kInput;
  } catch (const DivergenceError& e) {
    report(err, command, "divergence", e.what());
    return kRunFailed;
  } catch (const AggregationError& e) {
    report(err, command, "aggregation", e.what());
    return kRunFailed;
  } catch (const ContractError& e) {
    report(err, command, "contract", e.what());
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    report(err, command, "io", e.what());
    return kRunFailed;
  } catch (const std::exception& e) {
    report(err, command, "internal", e.what());
    return kRunFailed;
  }
}

}  // namespace fssuavl::cli
