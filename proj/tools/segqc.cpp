// segqc: command-line front end for synthesis, training, scoring, selection
// and benchmarking of segmentation-label quality.

#include <CLI11.hpp>

#include <cstdio>
#include <deque>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segqc/csv.hpp"
#include "segqc/segqc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace segqc;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::size_t jobs = 1;
  std::string output_dir = ".";
};

// Output files are staged as `<name>.partial` and renamed together by
// commit(); anything left uncommitted is removed.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  ~Outputs() {
    for (auto& f : files_) {
      std::error_code ec;
      fs::remove(f.temp_path(), ec);
    }
  }

  fs::path text(const std::string& name, const std::string& content) {
    files_.emplace_back(dir_ / name);
    io::write_text(files_.back().temp_path(), content);
    return dir_ / name;
  }
  fs::path bytes(const std::string& name, std::span<const std::uint8_t> content) {
    files_.emplace_back(dir_ / name);
    io::write_bytes(files_.back().temp_path(), content);
    return dir_ / name;
  }
  const fs::path& dir() const { return dir_; }
  void commit() {
    for (auto& f : files_) f.commit();
    files_.clear();
  }

 private:
  fs::path dir_;
  std::deque<io::AtomicFile> files_;
};

std::string config_comment(const json& config) { return "# config: " + config.dump() + "\n"; }

std::string option_key(const CLI::Option* opt) {
  std::string k = opt->get_single_name();
  for (auto& c : k)
    if (c == '-') c = '_';
  return k;
}

std::string json_scalar(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
  return j.dump();
}

// Fills options not given on the command line from the config file: top
// level keys first, then the subcommand's own section.
void apply_config(CLI::App& app, CLI::App* sub, const json& cfg) {
  json merged = json::object();
  for (auto it = cfg.begin(); it != cfg.end(); ++it)
    if (!it.value().is_object()) merged[it.key()] = it.value();
  if (cfg.contains(sub->get_name()) && cfg[sub->get_name()].is_object())
    for (auto it = cfg[sub->get_name()].begin(); it != cfg[sub->get_name()].end(); ++it) merged[it.key()] = it.value();
  for (CLI::App* a : {&app, sub}) {
    for (CLI::Option* opt : a->get_options()) {
      if (opt->count() > 0 || opt->get_single_name() == "help") continue;
      const auto key = option_key(opt);
      if (!merged.contains(key)) continue;
      const json& v = merged[key];
      if (v.is_array()) {
        for (const auto& e : v) opt->add_result(json_scalar(e));
      } else {
        opt->add_result(json_scalar(v));
      }
      opt->run_callback();
    }
  }
}

// The settings a command ran with, embedded in its outputs. Paths of the
// output directory and config file are left out so reruns elsewhere match.
json effective_config(CLI::App& app, CLI::App* sub) {
  json j = json::object();
  j["command"] = sub->get_name();
  for (CLI::App* a : {&app, sub}) {
    for (CLI::Option* opt : a->get_options()) {
      const auto key = option_key(opt);
      if (key == "help" || key == "output_dir" || key == "config") continue;
      if (opt->count() > 0) {
        const auto& r = opt->results();
        j[key] = r.size() == 1 ? json(r[0]) : json(r);
      } else if (!opt->get_default_str().empty()) {
        j[key] = opt->get_default_str();
      }
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// synth

std::vector<SeverityLevel> default_severity_grid() {
  std::vector<SeverityLevel> g;
  for (double s : {1.0, 2.0, 3.0}) g.push_back({DegradationKind::erode, s});
  for (double s : {1.0, 2.0, 3.0}) g.push_back({DegradationKind::dilate, s});
  for (int e : kCheckpointEpochs) g.push_back({DegradationKind::checkpoint_schedule, checkpoint_severity(e)});
  return g;
}

std::vector<SeverityLevel> parse_severity_grid(const json& j) {
  std::vector<SeverityLevel> g;
  for (const auto& e : j) {
    g.push_back({parse_degradation_kind(e.at("kind").get<std::string>()), e.at("severity").get<double>()});
  }
  return g;
}

std::vector<LabeledVolume> load_manifest_volumes(const DatasetManifest& m) {
  std::vector<LabeledVolume> vols;
  for (const auto& e : m.volumes) vols.push_back(load_volume(e.path, e.format));
  return vols;
}

struct SynthArgs {
  std::string manifest;
  bool resample = false;
  std::size_t target_bins = 10;
  std::size_t samples_per_bin = 100;
  double hu_min = -200, hu_max = 200;
  std::size_t crop_margin = 16;
};

int cmd_synth(const Globals& g, const SynthArgs& a, const json& file_cfg, json config) {
  SynthesisConfig sc;
  sc.seed = g.seed;
  sc.target_bins = a.target_bins;
  sc.samples_per_bin = a.samples_per_bin;
  sc.preprocess = {a.hu_min, a.hu_max, a.crop_margin};
  json grid_json = file_cfg.contains("synth") && file_cfg["synth"].contains("severity_grid")
                       ? file_cfg["synth"]["severity_grid"]
                       : file_cfg.value("severity_grid", json());
  sc.severity_grid = grid_json.is_array() ? parse_severity_grid(grid_json) : default_severity_grid();
  sc.validate();
  json grid = json::array();
  for (const auto& l : sc.severity_grid) grid.push_back({{"kind", to_string(l.kind)}, {"severity", l.severity}});
  config["severity_grid"] = grid;

  const auto manifest = load_manifest(a.manifest);
  const auto volumes = load_manifest_volumes(manifest);
  ClassTable classes;
  for (const auto& v : volumes) classes.insert(v.classes.begin(), v.classes.end());
  config["classes"] = class_table_json(classes);

  Outputs out(g.output_dir);
  json cells = json::array();
  std::size_t generated = 0;
  const fs::path dataset_dir = out.dir() / "dataset";
  DatasetWriter writer(dataset_dir);
  std::vector<SlicePair> kept;
  synthesize_dataset(std::span<const LabeledVolume>(volumes), sc, [&](SlicePair&& p) {
    ++generated;
    if (cells.empty() || cells.back()["volume_id"] != p.volume_id || cells.back()["class_id"] != p.class_id ||
        cells.back()["seed"] != p.degradation->seed) {
      cells.push_back({{"volume_id", p.volume_id},
                       {"class_id", p.class_id},
                       {"kind", to_string(p.degradation->kind)},
                       {"severity", p.degradation->severity},
                       {"seed", p.degradation->seed},
                       {"slices", 0}});
    }
    cells.back()["slices"] = cells.back()["slices"].get<std::size_t>() + 1;
    if (a.resample) {
      kept.push_back(std::move(p));
    } else {
      writer.add(p);
    }
  });
  if (a.resample) {
    kept = resample_balanced(std::move(kept), sc);
    for (const auto& p : kept) writer.add(p);
  }
  json log = {{"config", config}, {"generated", generated}, {"written", writer.size()}, {"cells", cells}};
  out.text("synth_log.json", log.dump(1) + "\n");
  writer.finish(config);
  out.commit();
  std::cout << "wrote " << writer.size() << " slice pairs to " << dataset_dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Shared model plumbing

struct ModelArgs {
  std::string vision_embeddings;
  std::string text_embeddings;
  std::size_t encoder_dim = 512;
  std::uint64_t encoder_seed = 0x70e7c0deULL;
  std::size_t text_dim = 512;
};

std::size_t manifest_dim(const fs::path& manifest) {
  try {
    return json::parse(io::read_text(manifest)).at("dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError("embedding manifest '" + manifest.string() + "': " + e.what());
  }
}

TextEmbeddingTable make_text_table(const ModelArgs& m, const ClassTable& classes, std::uint64_t seed) {
  if (!m.text_embeddings.empty()) return load_text_embeddings(m.text_embeddings, manifest_dim(m.text_embeddings), classes);
  return toy_text_embeddings(classes, m.text_dim, derive_seed(seed, 0x74657874ULL));
}

EmbeddingProvider make_provider(const ModelArgs& m, TextEmbeddingTable text) {
  if (!m.vision_embeddings.empty()) return EmbeddingProvider::precomputed(m.vision_embeddings, std::move(text));
  return EmbeddingProvider::toy(m.encoder_dim, std::move(text), m.encoder_seed);
}

json encoder_json(const ModelArgs& m) {
  if (!m.vision_embeddings.empty()) return {{"kind", "precomputed"}};
  return {{"kind", "toy"}, {"dim", m.encoder_dim}, {"seed", m.encoder_seed}};
}

json conditions_json(const ConditionTable& t) {
  json j = json::object();
  for (const auto& [id, v] : t) j[std::to_string(id)] = v;
  return j;
}

ConditionTable conditions_from_json(const json& j) {
  ConditionTable t;
  for (auto it = j.begin(); it != j.end(); ++it) t[static_cast<ClassId>(std::stoul(it.key()))] = it.value().get<Embedding>();
  return t;
}

ClassTable dataset_classes(const json& index) {
  ClassTable classes;
  if (index.contains("config") && index["config"].contains("classes")) classes = parse_class_table(index["config"]["classes"]);
  for (const auto& r : index.at("records")) {
    const auto id = r.at("class_id").get<ClassId>();
    if (!classes.count(id)) classes[id] = placeholder_class_name(id);
  }
  return classes;
}

std::vector<EncodedSample> encode_dataset_dir(const fs::path& dir, const EmbeddingProvider& provider) {
  std::vector<EncodedSample> out;
  read_dataset(dir, [&](SlicePair&& p) { out.push_back(encode_sample(p, provider)); });
  if (out.empty()) throw DataError("dataset '" + dir.string() + "' is empty");
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string dataset;
  ModelArgs model;
  TrainConfig cfg;
  LossConfig loss;
  bool no_text = false, onehot = false, no_rank = false, resample = false;
  std::string preset;
  std::string gate = "sigmoid";
};

std::string metric_cell(const std::optional<double>& x) { return format_optional(x, "%.6f"); }

std::string epoch_log_csv(const std::vector<EpochLog>& log, const json& config) {
  std::string s = config_comment(config) + "epoch,loss_mse,loss_rank,val_lcc,val_srocc,val_map5,val_map10\n";
  for (const auto& e : log) {
    s += std::to_string(e.epoch) + "," + format_number(e.loss_mse) + "," + format_number(e.loss_rank) + "," +
         metric_cell(e.validation.lcc) + "," + metric_cell(e.validation.srocc) + "," +
         metric_cell(e.validation.map5) + "," + metric_cell(e.validation.map10) + "\n";
  }
  return s;
}

int cmd_train(const Globals& g, TrainArgs a, json config) {
  a.cfg.seed = g.seed;
  a.cfg.flags = {!a.no_text, a.onehot, !a.no_rank, a.resample};
  a.cfg.head.gate = parse_gate_activation(a.gate);
  a.cfg.validate();
  a.loss.validate();

  const auto index = read_dataset_index(a.dataset);
  const auto classes = dataset_classes(index);
  auto text = make_text_table(a.model, classes, g.seed);
  const auto provider = make_provider(a.model, text);
  a.cfg.head.text_dim = provider.text_dim();

  auto encoded = encode_dataset_dir(a.dataset, provider);
  const auto val_ids = validation_volumes(encoded, a.cfg.validation_fraction, g.seed);
  std::vector<EncodedSample> tr, va;
  for (auto& s : encoded) (val_ids.count(s.volume_id) ? va : tr).push_back(std::move(s));
  config["validation_volumes"] = std::vector<std::string>(val_ids.begin(), val_ids.end());

  Outputs out(g.output_dir);
  if (!a.preset.empty()) {
    std::vector<AblationFlags> grid;
    if (a.preset == "core") {
      grid = core_preset();
    } else if (a.preset == "full") {
      grid = full_ablation_grid();
    } else {
      throw ArgumentError("unknown preset '" + a.preset + "' (expected core or full)");
    }
    const auto rows = run_ablation(tr, va, provider.text_table(), grid, a.cfg, a.loss);
    std::string s = config_comment(config) + "condition,rank_loss,resample,lcc,srocc,map5,map10,best_epoch\n";
    for (const auto& r : rows) {
      const auto cond = r.flags.use_text_condition ? "text" : r.flags.use_onehot_condition ? "onehot" : "none";
      s += std::string(cond) + "," + (r.flags.use_rank_loss ? "1" : "0") + "," + (r.flags.use_resample ? "1" : "0") +
           "," + metric_cell(r.metrics.lcc) + "," + metric_cell(r.metrics.srocc) + "," + metric_cell(r.metrics.map5) +
           "," + metric_cell(r.metrics.map10) + "," + std::to_string(r.best_epoch) + "\n";
    }
    out.text("ablation.csv", s);
    out.commit();
    std::cout << s;
    return kOk;
  }

  const auto result = train(std::move(tr), va, provider.text_table(), a.cfg, a.loss);
  json meta = {{"config", config},
               {"encoder", encoder_json(a.model)},
               {"conditions", conditions_json(result.conditions)},
               {"class_names", class_table_json(classes)},
               {"best_epoch", result.best_epoch}};
  out.bytes("head.sqhd", encode_checkpoint(result.head, meta));
  out.text("train_log.csv", epoch_log_csv(result.log, config));
  json summary = {{"config", config},
                  {"best_epoch", result.best_epoch},
                  {"val_lcc", metric_cell(result.best.lcc)},
                  {"val_srocc", metric_cell(result.best.srocc)},
                  {"val_map5", metric_cell(result.best.map5)},
                  {"val_map10", metric_cell(result.best.map10)}};
  out.text("train_summary.json", summary.dump(2) + "\n");
  out.commit();
  std::cout << "best epoch " << result.best_epoch << ", validation SROCC " << metric_cell(result.best.srocc) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Scorers from checkpoints

struct LoadedModel {
  LoadedCheckpoint checkpoint;
  EmbeddingProvider provider;
  ConditionTable conditions;
};

LoadedModel load_model(const std::string& path, const ModelArgs& m) {
  auto ck = load_checkpoint(path);
  const auto& enc = ck.metadata.value("encoder", json::object());
  ModelArgs margs = m;
  if (enc.value("kind", std::string("toy")) == "toy") {
    margs.vision_embeddings.clear();
    margs.encoder_dim = enc.value("dim", ck.head.config().vision_dim);
    margs.encoder_seed = enc.value("seed", margs.encoder_seed);
  } else if (margs.vision_embeddings.empty()) {
    throw ArgumentError("checkpoint expects precomputed vision embeddings; pass --vision-embeddings");
  }
  auto conditions = conditions_from_json(ck.metadata.value("conditions", json::object()));
  auto provider = make_provider(margs, TextEmbeddingTable(conditions.begin(), conditions.end()));
  if (provider.vision_dim() != ck.head.config().vision_dim) throw DataError("encoder and head dimensions differ");
  return {std::move(ck), std::move(provider), std::move(conditions)};
}

// ---------------------------------------------------------------------------
// score / benchmark

struct ScoreArgs {
  std::string manifest;
  std::string checkpoint;
  bool oracle = false;
  std::size_t n_slices = kDefaultScoreSlices;
  ModelArgs model;
  double threshold = kLowQualityThreshold;
};

std::vector<ScoreRecord> run_scoring(const Globals& g, const ScoreArgs& a, const DatasetManifest& manifest) {
  ScoreOptions opt;
  opt.n_slices = a.n_slices;
  opt.jobs = g.jobs;
  opt.reference = true;
  if (a.oracle) {
    std::vector<ScoreRecord> out;
    for (const auto& e : manifest.volumes) {
      const auto v = load_volume(e.path, e.format);
      for (auto& r : oracle_scores(v)) out.push_back(std::move(r));
    }
    std::stable_sort(out.begin(), out.end(), [](const ScoreRecord& x, const ScoreRecord& y) {
      return std::tie(x.volume_id, x.class_id) < std::tie(y.volume_id, y.class_id);
    });
    return out;
  }
  if (a.checkpoint.empty()) throw ArgumentError("pass --checkpoint or --oracle");
  auto model = load_model(a.checkpoint, a.model);
  HeadScorer scorer(model.checkpoint.head, model.provider, model.conditions);
  return score_dataset(manifest, std::cref(scorer), opt);
}

std::string scores_csv(const std::vector<ScoreRecord>& recs, const json& config) {
  std::string s = config_comment(config) + "volume_id,class_id,class,predicted_dsc,true_dsc,n_slices,time_s,status\n";
  for (const auto& r : recs) {
    s += csv_field(r.volume_id) + "," + std::to_string(r.class_id) + "," + csv_field(r.class_name) + "," +
         format_optional(r.predicted_dsc) + "," + format_optional(r.reference_dsc) + "," +
         std::to_string(r.n_slices_used) + "," + format_number(r.wall_time_s, "%.6f") + "," + to_string(r.status) +
         "\n";
  }
  return s;
}

json scores_json(const std::vector<ScoreRecord>& recs, const json& config) {
  json arr = json::array();
  for (const auto& r : recs) {
    json j = {{"volume_id", r.volume_id},
              {"class_id", r.class_id},
              {"class", r.class_name},
              {"n_slices", r.n_slices_used},
              {"slice_indices", r.slice_indices},
              {"per_slice_scores", r.per_slice_scores},
              {"time_s", r.wall_time_s},
              {"aux_input_bytes", r.aux_input_bytes},
              {"status", to_string(r.status)}};
    j["predicted_dsc"] = r.predicted_dsc ? json(*r.predicted_dsc) : json(nullptr);
    j["true_dsc"] = r.reference_dsc ? json(*r.reference_dsc) : json(nullptr);
    if (!r.error.empty()) j["error"] = r.error;
    arr.push_back(std::move(j));
  }
  return {{"config", config}, {"records", arr}};
}

int cmd_score(const Globals& g, const ScoreArgs& a, const json& config) {
  const auto manifest = load_manifest(a.manifest);
  const auto recs = run_scoring(g, a, manifest);
  Outputs out(g.output_dir);
  out.text("scores.csv", scores_csv(recs, config));
  out.text("scores.json", scores_json(recs, config).dump(1) + "\n");
  out.commit();
  std::size_t errors = 0;
  for (const auto& r : recs) errors += r.status == ScoreStatus::error;
  std::cout << "scored " << recs.size() - errors << " labels";
  if (errors) std::cout << " (" << errors << " volumes failed to load)";
  std::cout << "\n";
  return kOk;
}

int cmd_benchmark(const Globals& g, const ScoreArgs& a, json config) {
  const auto manifest = load_manifest(a.manifest);
  if (manifest.volumes.empty()) throw DataError("manifest lists no volumes");
  const auto recs = run_scoring(g, a, manifest);
  for (const auto& r : recs)
    if (r.status == ScoreStatus::error) throw DataError("volume '" + r.volume_id + "': " + r.error);
  const auto report = build_report(manifest.name, recs, {}, a.threshold);
  const auto table = report_table(report);
  Outputs out(g.output_dir);
  out.text("report.csv", config_comment(config) + report_csv(report));
  out.text("report.txt", table);
  json j = {{"config", config},
            {"dataset", report.dataset},
            {"threshold", report.threshold},
            {"count", report.count},
            {"below", report.below},
            {"overall_mean_dsc", detail::fmt_dsc(report.overall_mean)},
            {"pct_below", detail::fmt_pct(report.fraction_below)}};
  json cls = json::array();
  for (const auto& c : report.classes) {
    cls.push_back({{"class_id", c.class_id},
                   {"class", c.name},
                   {"count", c.count},
                   {"mean_dsc", detail::fmt_dsc(c.mean)},
                   {"pct_below", detail::fmt_pct(static_cast<double>(c.below) / static_cast<double>(c.count))}});
  }
  j["classes"] = cls;
  out.text("report.json", j.dump(2) + "\n");
  out.commit();
  std::cout << table;
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string scores;
  std::string checkpoint;
  std::string dataset;
  ModelArgs model;
};

int cmd_eval(const Globals& g, const EvalArgs& a, const json& config) {
  std::vector<MetricSample> samples;
  std::string predictions;
  if (!a.scores.empty()) {
    const auto t = parse_csv(io::read_text(a.scores));
    const auto pc = t.column("predicted_dsc"), tc = t.column("true_dsc");
    const auto cc = t.find("class_id");
    const auto vc = t.find("volume_id");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& row = t.rows[i];
      if (row[pc].empty() || row[tc].empty()) continue;
      MetricSample s;
      try {
        s.predicted = std::stod(row[pc]);
        s.actual = std::stod(row[tc]);
        s.class_id = cc ? static_cast<ClassId>(std::stoul(row[*cc])) : 0;
      } catch (const std::exception&) {
        throw DataError("non-numeric value in score table row " + std::to_string(i + 1));
      }
      s.sample_id = (vc ? row[*vc] : std::to_string(i)) + "#" + std::to_string(s.class_id);
      samples.push_back(std::move(s));
    }
  } else {
    if (a.checkpoint.empty() || a.dataset.empty()) throw ArgumentError("pass --scores, or --checkpoint with --dataset");
    auto model = load_model(a.checkpoint, a.model);
    const auto data = encode_dataset_dir(a.dataset, model.provider);
    const auto pred = predict(model.checkpoint.head, data, model.conditions);
    samples = metric_samples(data, pred);
    predictions = config_comment(config) + "sample_id,class_id,predicted_dsc,true_dsc\n";
    for (const auto& s : samples) {
      predictions += csv_field(s.sample_id) + "," + std::to_string(s.class_id) + "," + format_number(s.predicted) + "," +
                     format_number(s.actual) + "\n";
    }
  }
  if (samples.empty()) throw DataError("no samples with both predicted and true DSC");
  const auto m = evaluate(samples);
  const std::string csv = config_comment(config) + "n,lcc,srocc,map5,map10\n" + std::to_string(m.n) + "," +
                          metric_cell(m.lcc) + "," + metric_cell(m.srocc) + "," + metric_cell(m.map5) + "," +
                          metric_cell(m.map10) + "\n";
  Outputs out(g.output_dir);
  out.text("metrics.csv", csv);
  if (!predictions.empty()) out.text("predictions.csv", predictions);
  out.commit();
  std::cout << "n=" << m.n << " LCC=" << metric_cell(m.lcc) << " SROCC=" << metric_cell(m.srocc)
            << " MAP@5=" << metric_cell(m.map5) << " MAP@10=" << metric_cell(m.map10) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// select

struct SelectArgs {
  std::string pool;
  std::string scores;
  std::string probabilities;
  std::string method = "predicted";
  std::string mode = "semisup";
  std::size_t budget = 0;
  bool simulate = false;
  std::size_t trials = 200;
  std::size_t subsample = 0;
};

CandidatePool build_pool(const SelectArgs& a, std::uint64_t& aux_bytes) {
  std::map<std::string, PoolRecord> recs;
  if (!a.pool.empty()) {
    try {
      const auto j = json::parse(io::read_text(a.pool));
      for (const auto& r : j.contains("records") ? j["records"] : j) {
        PoolRecord p;
        p.volume_id = r.at("volume_id").get<std::string>();
        for (auto it = r.value("scores", json::object()).begin(); it != r.value("scores", json::object()).end(); ++it)
          p.scores[parse_selection_method(it.key())] = it.value().get<double>();
        if (r.contains("true_dsc") && !r["true_dsc"].is_null()) p.true_dsc = r["true_dsc"].get<double>();
        recs[p.volume_id] = std::move(p);
      }
    } catch (const json::exception& e) {
      throw DataError("pool '" + a.pool + "': " + e.what());
    }
  }
  if (!a.scores.empty()) {
    // Per-scan quality: uniform mean over the scan's scored classes.
    const auto t = parse_csv(io::read_text(a.scores));
    const auto vc = t.column("volume_id"), pc = t.column("predicted_dsc");
    const auto tc = t.find("true_dsc");
    std::map<std::string, std::array<double, 4>> acc;  // pred sum, n, true sum, n
    for (const auto& row : t.rows) {
      auto& s = acc[row[vc]];
      if (!row[pc].empty()) {
        s[0] += std::stod(row[pc]);
        s[1] += 1;
      }
      if (tc && !row[*tc].empty()) {
        s[2] += std::stod(row[*tc]);
        s[3] += 1;
      }
    }
    for (const auto& [id, s] : acc) {
      auto& p = recs[id];
      p.volume_id = id;
      if (s[1] > 0) p.scores[SelectionMethod::predicted] = s[0] / s[1];
      if (s[3] > 0 && !p.true_dsc) p.true_dsc = s[2] / s[3];
    }
  }
  if (!a.probabilities.empty()) {
    // {"<volume_id>": "<probability header>", ...}; one sample gives the
    // entropy score, several also the variance score.
    const fs::path list(a.probabilities);
    json j;
    try {
      j = json::parse(io::read_text(list));
    } catch (const json::exception& e) {
      throw DataError("probability list '" + a.probabilities + "': " + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      fs::path header = it.value().get<std::string>();
      if (header.is_relative()) header = list.parent_path() / header;
      const auto file = read_probability_volumes(header);
      aux_bytes += file.bytes_read;
      auto& p = recs[it.key()];
      p.volume_id = it.key();
      p.scores[SelectionMethod::entropy] = entropy_score(file.samples.front());
      if (file.samples.size() >= 2) p.scores[SelectionMethod::mc_variance] = mc_variance_score(file.samples);
    }
  }
  CandidatePool pool;
  for (auto& [id, r] : recs) pool.records.push_back(std::move(r));
  if (pool.records.empty()) throw DataError("candidate pool is empty");
  return pool;
}

int cmd_select(const Globals& g, const SelectArgs& a, const json& config) {
  std::uint64_t aux_bytes = 0;
  const auto pool = build_pool(a, aux_bytes);
  const auto method = parse_selection_method(a.method);
  Outputs out(g.output_dir);
  if (a.simulate) {
    std::vector<SelectionMethod> methods;
    for (auto m : {SelectionMethod::predicted, SelectionMethod::entropy, SelectionMethod::mc_variance,
                   SelectionMethod::random}) {
      bool scored = m == SelectionMethod::random;
      for (const auto& r : pool.records) scored = scored || r.scores.count(m);
      bool all = true;
      for (const auto& r : pool.records) all = all && (m == SelectionMethod::random || r.scores.count(m));
      if (scored && all) methods.push_back(m);
    }
    const auto b = simulate_selection_benefit(pool, methods, a.budget, a.trials, g.seed, a.subsample);
    json rows = json::array();
    for (const auto& m : b.methods) {
      rows.push_back({{"method", to_string(m.method)},
                      {"admitted_mean_dsc", m.admitted_mean_dsc},
                      {"admitted_se", m.admitted_se},
                      {"admitted_gain_vs_random", m.admitted_gain_vs_random},
                      {"admitted_gain_se", m.admitted_gain_se},
                      {"deficit_captured", m.deficit_captured},
                      {"deficit_se", m.deficit_se}});
    }
    json j = {{"config", config},       {"trials", b.trials},   {"budget", b.budget},
              {"subsample", b.subsample}, {"pool_mean_dsc", b.pool_mean_dsc}, {"methods", rows},
              {"aux_input_bytes", aux_bytes}};
    out.text("selection_benefit.json", j.dump(2) + "\n");
    out.commit();
    std::cout << j["methods"].dump(2) << "\n";
    return kOk;
  }
  std::vector<std::string> ids;
  if (a.mode == "active") {
    ids = select_active(pool, method, a.budget, g.seed);
  } else if (a.mode == "semisup") {
    ids = select_semisup(pool, method, a.budget, g.seed);
  } else {
    throw ArgumentError("mode must be 'active' or 'semisup'");
  }
  json scores = json::array();
  for (const auto& id : ids) {
    const auto& r = *std::find_if(pool.records.begin(), pool.records.end(),
                                  [&](const PoolRecord& p) { return p.volume_id == id; });
    scores.push_back(r.scores.count(method) ? json(r.scores.at(method)) : json(nullptr));
  }
  json j = {{"config", config}, {"method", a.method}, {"mode", a.mode}, {"budget", a.budget},
            {"ids", ids},       {"scores", scores},   {"aux_input_bytes", aux_bytes}};
  out.text("selection.json", j.dump(2) + "\n");
  out.commit();
  for (const auto& id : ids) std::cout << id << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// degrade

struct DegradeArgs {
  std::string volume;
  std::string kind = "erode";
  double severity = 1;
  std::vector<ClassId> classes;
};

int cmd_degrade(const Globals& g, const DegradeArgs& a, const json& config) {
  auto v = load_volume(a.volume);
  std::vector<ClassId> classes = a.classes;
  if (classes.empty())
    for (const auto& [id, name] : v.classes) classes.push_back(id);
  std::sort(classes.begin(), classes.end());
  const auto kind = parse_degradation_kind(a.kind);
  LabelGrid cand(v.ground_truth.dims());
  json log = json::array();
  for (auto cls : classes) {
    const auto truth = class_mask(v.ground_truth, cls);
    if (is_empty_mask(truth)) continue;
    const DegradationSpec spec{kind, a.severity, derive_seed(g.seed, hash_string(v.id), cls)};
    const auto r = apply_degradation(truth, spec);
    for (std::size_t i = 0; i < cand.size(); ++i)
      if (r.mask[i]) cand[i] = static_cast<std::uint16_t>(cls);
    const auto d = dsc(r.mask, truth);
    log.push_back({{"class_id", cls}, {"seed", spec.seed}, {"dsc", d ? *d : 0.0}, {"erased", r.erased}});
  }
  v.candidate = std::move(cand);
  const fs::path out_dir(g.output_dir);
  fs::create_directories(out_dir);
  const auto sidecar = out_dir / (v.id + "_degraded.json");
  write_volume(v, sidecar);
  Outputs out(out_dir);
  out.text(v.id + "_degraded_log.json", json{{"config", config}, {"classes", log}}.dump(2) + "\n");
  out.commit();
  std::cout << "wrote " << sidecar.string() << "\n";
  return kOk;
}

void add_model_options(CLI::App* c, ModelArgs& m) {
  c->add_option("--vision-embeddings", m.vision_embeddings, "Precomputed vision embedding manifest");
  c->add_option("--text-embeddings", m.text_embeddings, "Class text embedding manifest");
  c->add_option("--encoder-dim", m.encoder_dim, "Toy encoder output dimension")->capture_default_str();
  c->add_option("--encoder-seed", m.encoder_seed, "Toy encoder projection seed")->capture_default_str();
  c->add_option("--text-dim", m.text_dim, "Dimension of generated class embeddings")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation label quality assessment"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--config", g.config, "JSON config; flags given on the command line win");
  app.add_option("--jobs", g.jobs, "Worker threads (scoring only)")->capture_default_str();
  app.add_option("--output-dir", g.output_dir, "Directory for outputs")->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthesize a slice-pair quality dataset from labelled volumes");
  synth->add_option("--manifest", sa.manifest, "Volume manifest")->required();
  synth->add_flag("--resample", sa.resample, "Flatten the DSC histogram");
  synth->add_option("--target-bins", sa.target_bins)->capture_default_str();
  synth->add_option("--samples-per-bin", sa.samples_per_bin)->capture_default_str();
  synth->add_option("--hu-min", sa.hu_min)->capture_default_str();
  synth->add_option("--hu-max", sa.hu_max)->capture_default_str();
  synth->add_option("--crop-margin", sa.crop_margin)->capture_default_str();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the quality head");
  train_cmd->add_option("--dataset", ta.dataset, "Synthesized dataset directory")->required();
  add_model_options(train_cmd, ta.model);
  train_cmd->add_option("--epochs", ta.cfg.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", ta.cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", ta.cfg.optimizer.learning_rate)->capture_default_str();
  train_cmd->add_option("--weight-decay", ta.cfg.optimizer.weight_decay)->capture_default_str();
  train_cmd->add_option("--beta1", ta.cfg.optimizer.beta1)->capture_default_str();
  train_cmd->add_option("--beta2", ta.cfg.optimizer.beta2)->capture_default_str();
  train_cmd->add_option("--lambda", ta.loss.lambda, "Ranking-term weight")->capture_default_str();
  train_cmd->add_option("--margin", ta.loss.margin_xi, "Ranking hinge margin")->capture_default_str();
  train_cmd->add_option("--val-fraction", ta.cfg.validation_fraction)->capture_default_str();
  train_cmd->add_option("--attention-hidden", ta.cfg.head.attention_hidden)->capture_default_str();
  train_cmd->add_option("--hidden-dim", ta.cfg.head.hidden_dim)->capture_default_str();
  train_cmd->add_option("--gate", ta.gate, "sigmoid, identity or softplus")->capture_default_str();
  train_cmd->add_flag("--no-text", ta.no_text, "Drop class text conditioning");
  train_cmd->add_flag("--onehot", ta.onehot, "Condition on one-hot class codes instead of text");
  train_cmd->add_flag("--no-rank", ta.no_rank, "Drop the ranking term");
  train_cmd->add_flag("--resample", ta.resample, "Balance training targets by DSC bin");
  train_cmd->add_option("--preset", ta.preset, "Run an ablation grid instead: core or full");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Correlation and retrieval metrics of predictions");
  eval_cmd->add_option("--scores", ea.scores, "Score table with predicted_dsc and true_dsc columns");
  eval_cmd->add_option("--checkpoint", ea.checkpoint);
  eval_cmd->add_option("--dataset", ea.dataset);
  add_model_options(eval_cmd, ea.model);

  ScoreArgs sca;
  auto* score_cmd = app.add_subcommand("score", "Score candidate labels of a volume manifest");
  ScoreArgs ba;
  auto* bench_cmd = app.add_subcommand("benchmark", "Per-class quality report of a volume manifest");
  for (auto [c, args] : {std::pair{score_cmd, &sca}, std::pair{bench_cmd, &ba}}) {
    c->add_option("--manifest", args->manifest, "Volume manifest")->required();
    c->add_option("--checkpoint", args->checkpoint);
    c->add_flag("--oracle", args->oracle, "Use the true 3D DSC instead of a trained head");
    c->add_option("--n-slices", args->n_slices)->capture_default_str();
    add_model_options(c, args->model);
  }
  bench_cmd->add_option("--threshold", ba.threshold, "Low-quality DSC threshold")->capture_default_str();

  SelectArgs sel;
  auto* select_cmd = app.add_subcommand("select", "Pick cases for correction or pseudo-label admission");
  select_cmd->add_option("--pool", sel.pool, "Pool JSON of per-volume scores");
  select_cmd->add_option("--scores", sel.scores, "Score table; per-volume mean becomes the predicted score");
  select_cmd->add_option("--probabilities", sel.probabilities, "JSON map of volume id to probability header");
  select_cmd->add_option("--method", sel.method, "predicted, entropy, mc_variance or random")->capture_default_str();
  select_cmd->add_option("--mode", sel.mode, "active or semisup")->capture_default_str();
  select_cmd->add_option("--budget", sel.budget)->required();
  select_cmd->add_flag("--simulate", sel.simulate, "Compare methods by simulated selection benefit");
  select_cmd->add_option("--trials", sel.trials)->capture_default_str();
  select_cmd->add_option("--subsample", sel.subsample, "Pool subsample per trial (0 = whole pool)")
      ->capture_default_str();

  DegradeArgs da;
  auto* degrade_cmd = app.add_subcommand("degrade", "Write a volume whose candidate is its degraded ground truth");
  degrade_cmd->add_option("--volume", da.volume, "Volume sidecar JSON")->required();
  degrade_cmd->add_option("--kind", da.kind)->capture_default_str();
  degrade_cmd->add_option("--severity", da.severity)->capture_default_str();
  degrade_cmd->add_option("--class", da.classes, "Class ids to degrade (default: all)");

  json file_cfg = json::object();
  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    if (!g.config.empty()) {
      try {
        file_cfg = json::parse(io::read_text(g.config));
      } catch (const json::exception& e) {
        throw DataError("config '" + g.config + "': " + e.what());
      }
      if (!file_cfg.is_object()) throw DataError("config must be a JSON object");
      apply_config(app, sub, file_cfg);
    }
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const json config = effective_config(app, sub);
    const std::string name = sub->get_name();
    if (name == "synth") return cmd_synth(g, sa, file_cfg, config);
    if (name == "train") return cmd_train(g, ta, config);
    if (name == "eval") return cmd_eval(g, ea, config);
    if (name == "score") return cmd_score(g, sca, config);
    if (name == "benchmark") return cmd_benchmark(g, ba, config);
    if (name == "select") return cmd_select(g, sel, config);
    if (name == "degrade") return cmd_degrade(g, da, config);
    return kUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}
