// Command-line front end: one subcommand per pipeline stage.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 runtime
// failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtlam/augment.hpp"
#include "mtlam/checkpoint.hpp"
#include "mtlam/config.hpp"
#include "mtlam/corpus.hpp"
#include "mtlam/diagnostics.hpp"
#include "mtlam/eval.hpp"
#include "mtlam/loss.hpp"
#include "mtlam/record.hpp"
#include "mtlam/thresholds.hpp"
#include "mtlam/train.hpp"

namespace fs = std::filesystem;
using namespace mtlam;

namespace {

struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.output_dir = out;
    cfg.propagate_seed();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c, bool needs_data) {
  cmd->add_option("--config", c.config_path, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Overrides the config seed");
  cmd->add_option("--out", c.out, "Output directory (overrides config output_dir)");
  auto* data = cmd->add_option("--data", c.data, "Interchange file (JSON Lines records)");
  if (needs_data) data->required();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void print_diagnostics(const std::vector<Diagnostic>& diags, const fs::path& path) {
  std::ostringstream s;
  for (const auto& d : diags) s << d.where << '\t' << d.message << '\n';
  write_text(path, s.str());
  if (!diags.empty()) std::cerr << diags.size() << " diagnostics written to " << path.string() << '\n';
}

std::vector<Record> of_split(const std::vector<Record>& all, Split s) {
  auto out = filter_split(all, s);
  if (out.empty()) throw DataError("no " + std::string(to_string(s)) + " records in the input");
  return out;
}

std::optional<TaskId> task_option(const std::string& slug) {
  if (slug.empty()) return std::nullopt;
  const auto id = TaskRegistry::instance().find_slug(slug);
  if (!id) throw ConfigError("unknown task '" + slug + "'");
  return id;
}

// ingest ---------------------------------------------------------------------

struct IngestArgs {
  Common common;
  std::string iac, ibm, propaganda_dir;
  bool synthetic = false;
  std::optional<std::size_t> n_per_type;
  std::optional<double> separability;
};

int run_ingest(const IngestArgs& a) {
  RunConfig cfg = a.common.load();
  if (!a.iac.empty()) cfg.data.iac_path = a.iac;
  if (!a.ibm.empty()) cfg.data.ibm_path = a.ibm;
  if (!a.propaganda_dir.empty()) cfg.data.propaganda_dir = a.propaganda_dir;
  if (a.synthetic || a.n_per_type || a.separability) {
    if (!cfg.data.synthetic) cfg.data.synthetic = SynthConfig{};
    if (a.n_per_type) cfg.data.synthetic->n_per_type = *a.n_per_type;
    if (a.separability) cfg.data.synthetic->separability = *a.separability;
    cfg.propagate_seed();
  }
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "ingest", {cfg.data.iac_path, cfg.data.ibm_path, cfg.data.propaganda_dir});

  std::vector<Record> records;
  std::vector<Diagnostic> diags;
  const auto take = [&](IngestResult r, const std::string& name) {
    std::cerr << name << ": " << r.records.size() << " records, " << r.diagnostics.size() << " rejected\n";
    records.insert(records.end(), r.records.begin(), r.records.end());
    diags.insert(diags.end(), r.diagnostics.begin(), r.diagnostics.end());
  };
  if (!cfg.data.iac_path.empty()) {
    std::ifstream in(cfg.data.iac_path);
    if (!in) throw DataError("cannot read " + cfg.data.iac_path);
    take(ingest_iac(in, cfg.data.delimiter), "iac");
  }
  if (!cfg.data.ibm_path.empty()) {
    std::ifstream in(cfg.data.ibm_path);
    if (!in) throw DataError("cannot read " + cfg.data.ibm_path);
    take(ingest_ibm(in, cfg.data.delimiter), "ibm");
  }
  if (!cfg.data.propaganda_dir.empty()) {
    std::vector<Diagnostic> read_diags;
    const auto articles = read_propaganda_dir(cfg.data.propaganda_dir, &read_diags);
    diags.insert(diags.end(), read_diags.begin(), read_diags.end());
    take(ingest_propaganda(articles), "propaganda");
  }
  if (cfg.data.synthetic) take({synthesize(*cfg.data.synthetic), {}}, "synthetic");
  if (records.empty()) throw DataError("ingest: no records (no inputs given or all rows rejected)");

  records = split(std::move(records), cfg.data.split_ratios, cfg.seed);
  save_records((out / "records.jsonl").string(), records);
  print_diagnostics(diags, out / "ingest_diagnostics.tsv");
  try {
    const std::string table = format_stats(stats(records));
    write_text(out / "stats.txt", table);
    std::cout << table;
  } catch (const DataError& e) {
    // Partial corpora (e.g. a single source) are still valid interchange files.
    write_text(out / "stats.txt", std::string("incomplete: ") + e.what() + "\n");
    std::cerr << "warning: " << e.what() << '\n';
  }
  std::cout << "wrote " << records.size() << " records to " << (out / "records.jsonl").string() << '\n';
  return 0;
}

// augment --------------------------------------------------------------------

struct AugmentArgs {
  Common common;
  std::vector<std::string> methods;
};

int run_augment(const AugmentArgs& a) {
  RunConfig cfg = a.common.load();
  if (!a.methods.empty()) {
    cfg.augment.enabled.clear();
    for (const auto& m : a.methods) cfg.augment.enabled.insert(parse_augment_method(m));
  }
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "augment", {a.common.data, cfg.synonyms_path});
  const auto all = load_records(a.common.data);

  std::unique_ptr<Translator> translator;
  std::unique_ptr<MaskedPredictor> predictor;
  if (const char* cmd = std::getenv("MTLAM_TRANSLATOR_CMD"); cmd && *cmd) {
    translator = std::make_unique<CommandTranslator>(cmd);
  } else {
    translator = std::make_unique<IdentityTranslator>();
  }
  if (const char* cmd = std::getenv("MTLAM_PREDICTOR_CMD"); cmd && *cmd) {
    predictor = std::make_unique<CommandPredictor>(cmd);
  } else {
    predictor = std::make_unique<EchoPredictor>();
  }
  const SynonymTable synonyms = cfg.synonyms_path.empty() ? SynonymTable::bundled() : SynonymTable::load(cfg.synonyms_path);

  std::vector<Record> train_part, rest;
  for (const auto& r : all) (r.split == Split::kTrain ? train_part : rest).push_back(r);
  auto result = augment_corpus(train_part, {translator.get(), predictor.get(), &synonyms}, cfg.augment);
  result.records.insert(result.records.end(), rest.begin(), rest.end());
  save_records((out / "records.jsonl").string(), result.records);
  print_diagnostics(result.diagnostics, out / "augment_diagnostics.tsv");
  std::cout << "augmented " << train_part.size() << " TRAIN records into "
            << result.records.size() - rest.size() << "; " << rest.size() << " other records unchanged\n";
  return 0;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string task, preset;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
};

void apply_train_overrides(RunConfig& cfg, const TrainArgs& a) {
  if (!a.preset.empty()) cfg.head.hidden_width = preset_width(parse_size_preset(a.preset));
  if (a.epochs) cfg.train.max_epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.lr) cfg.train.learning_rate = *a.lr;
  cfg.head.check();
  cfg.train.check();
}

int run_train(const TrainArgs& a) {
  RunConfig cfg = a.common.load();
  apply_train_overrides(cfg, a);
  const auto only = task_option(a.task);
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "train", {a.common.data});
  const auto all = load_records(a.common.data);
  const auto train_recs = of_split(all, Split::kTrain);
  const auto val_recs = of_split(all, Split::kVal);
  const LossWeights weights = compute_loss_weights(stats(all));

  Model model = make_model(cfg.encoder, cfg.head, cfg.encoder.seed);
  TrainOptions opts;
  opts.only_task = only;
  const TrainResult r = train(model, train_recs, val_recs, weights, cfg.train, opts);
  save_checkpoint((out / "model.ckpt").string(), make_checkpoint(model, weights, cfg.train, r.history));
  write_text(out / "history.json", to_json(r.history).dump(2) + "\n");
  for (const auto& e : r.history.epochs) {
    std::printf("epoch %zu  train_loss %.6f  val_loss %.6f  mean_val_f1 %.2f  (%.2fs)\n", e.epoch, e.train_loss,
                e.val_loss, e.mean_val_f1, e.seconds);
  }
  if (r.diverged) throw RuntimeFailure(r.diagnostic);
  std::printf("kept epoch %zu%s; checkpoint %s\n", r.best_epoch, r.stopped_early ? " (early stop)" : "",
              (out / "model.ckpt").c_str());
  return 0;
}

// grid-search ----------------------------------------------------------------

int run_grid(const TrainArgs& a) {
  RunConfig cfg = a.common.load();
  apply_train_overrides(cfg, a);
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "grid-search", {a.common.data});
  const auto all = load_records(a.common.data);
  const auto train_recs = of_split(all, Split::kTrain);
  const auto val_recs = of_split(all, Split::kVal);
  const LossWeights weights = compute_loss_weights(stats(all));

  const GridResult g = grid_search(cfg.grid, {cfg.head, cfg.train}, cfg.encoder, train_recs, val_recs, weights);
  std::ostringstream tsv;
  tsv << "run";
  for (const auto& [name, _] : cfg.grid.axes) tsv << '\t' << name;
  tsv << "\tmean_val_f1\tval_loss\tbest_epoch\terror\n";
  const auto settings = expand(cfg.grid, {cfg.head, cfg.train});
  for (std::size_t i = 0; i < g.runs.size(); ++i) {
    const auto& run = g.runs[i];
    tsv << i;
    for (const auto& [name, _] : cfg.grid.axes) {
      const auto cell = to_json(run.settings.head).contains(name) ? to_json(run.settings.head)[name]
                                                                  : to_json(run.settings.train)[name];
      tsv << '\t' << cell.dump();
    }
    tsv << '\t' << run.mean_val_f1 << '\t' << run.val_loss << '\t' << run.best_epoch << '\t'
        << run.error.value_or("") << '\n';
  }
  write_text(out / "grid.tsv", tsv.str());
  const auto& best = g.runs[g.best];
  ojson j = {{"run", g.best},
             {"mean_val_f1", best.mean_val_f1},
             {"val_loss", best.val_loss},
             {"head", to_json(best.settings.head)},
             {"train", to_json(best.settings.train)}};
  write_text(out / "best.json", j.dump(2) + "\n");
  std::cout << "best run " << g.best << " of " << g.runs.size() << ": mean val F1 " << best.mean_val_f1 << '\n';
  return 0;
}

// tune-thresholds / evaluate -------------------------------------------------

struct ModelArgs {
  Common common;
  std::string checkpoint, thresholds, reference, split = "VAL", layer;
};

int run_tune(const ModelArgs& a) {
  RunConfig cfg = a.common.load();
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "tune-thresholds", {a.common.data, a.checkpoint});
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Model model = restore_model(ck);
  const auto recs = of_split(load_records(a.common.data), parse_split(a.split));
  const auto ptrs = pointers(recs);
  const LabelBatch lb = make_label_batch(ptrs);
  const TunedThresholds tuned = tune_all(predict(model, ptrs), lb.labels, lb.mask);
  save_thresholds((out / "thresholds.json").string(), tuned.thresholds);
  print_diagnostics(tuned.diagnostics, out / "threshold_diagnostics.tsv");
  std::cout << to_json(tuned.thresholds).dump(2) << '\n';
  return 0;
}

int run_evaluate(const ModelArgs& a) {
  RunConfig cfg = a.common.load();
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "evaluate", {a.common.data, a.checkpoint, a.thresholds});
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Model model = restore_model(ck);
  ThresholdSet thr = ck.thresholds.value_or(ThresholdSet{});
  if (!a.thresholds.empty()) thr = load_thresholds(a.thresholds);
  const auto recs = of_split(load_records(a.common.data), parse_split(a.split));
  const Evaluation ev = evaluate_model(model, pointers(recs), ck.weights, std::nullopt, thr);

  write_text(out / "metrics.json", to_json(ev.report).dump(2) + "\n");
  std::string table = format_report(ev.report, "split " + a.split);
  if (!a.reference.empty()) {
    const auto rows = compare(ev.report, load_reference_table(a.reference));
    const std::string cmp = format_comparison(rows);
    write_text(out / "comparison.txt", cmp);
    table += "\n" + cmp;
  }
  write_text(out / "metrics.txt", table);
  std::cout << table;
  return 0;
}

// baseline -------------------------------------------------------------------

struct BaselineArgs {
  Common common;
  std::size_t trials = 100;
  std::string split = "TEST";
};

int run_baseline(const BaselineArgs& a) {
  RunConfig cfg = a.common.load();
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "baseline", {a.common.data});
  const auto all = load_records(a.common.data);
  const auto random = random_baseline(stats(all), a.trials, derive_seed(cfg.seed, "baseline"));
  const auto nb = unigram_nb_baseline(of_split(all, Split::kTrain), of_split(all, parse_split(a.split)));
  ojson j = {{"random", to_json(random)}, {"unigram_naive_bayes", to_json(nb)}};
  write_text(out / "baseline.json", j.dump(2) + "\n");
  const std::string text = format_report(random, "random guessing") + "\n" +
                           format_report(nb, "unigram naive Bayes, split " + a.split);
  write_text(out / "baseline.txt", text);
  std::cout << text;
  return 0;
}

// diagnose -------------------------------------------------------------------

int run_diagnose(const ModelArgs& a) {
  RunConfig cfg = a.common.load();
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "diagnose", {a.common.data, a.checkpoint});
  const Model model = restore_model(load_checkpoint(a.checkpoint));
  const auto all = load_records(a.common.data);
  const auto recs = a.split == "ALL" ? all : of_split(all, parse_split(a.split));
  std::vector<Layer> layers = {Layer::kEncoderOut, Layer::kShared, Layer::kTaskSpecific};
  if (!a.layer.empty()) layers = {parse_layer(a.layer)};
  const std::uint64_t sample_seed = derive_seed(cfg.seed, "diagnostics");
  for (Layer layer : layers) {
    const std::string name(to_string(layer));
    const auto dump = extract(model, recs, layer, cfg.diagnostics.max_points, sample_seed);
    {
      std::ofstream f(out / ("dump_" + name + ".tsv"));
      write_dump(f, dump);
    }
    const Matrix pts = tsne_project(dump.matrix, cfg.diagnostics.tsne);
    std::ostringstream s;
    s << "tag\tx\ty\n" << std::setprecision(9);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      s << dump.task_tags[static_cast<std::size_t>(i)] << '\t' << pts(i, 0) << '\t' << pts(i, 1) << '\n';
    }
    write_text(out / ("tsne_" + name + ".tsv"), s.str());
    const auto entries = emit_plot(pts, dump.task_tags, (out / ("tsne_" + name + ".svg")).string(), name);
    std::cout << name << ": " << pts.rows() << " points, " << entries << " legend entries\n";
  }
  return 0;
}

// profile --------------------------------------------------------------------

struct ProfileArgs {
  TrainArgs train;
  std::vector<std::string> variants;
  std::optional<std::size_t> repeats;
};

int run_profile(const ProfileArgs& a) {
  RunConfig cfg = a.train.common.load();
  apply_train_overrides(cfg, a.train);
  if (!a.variants.empty()) cfg.profile.variants = a.variants;
  if (a.repeats) cfg.profile.repeats = *a.repeats;
  const fs::path out(cfg.output_dir);
  write_run_record(out, cfg, "profile", {a.train.common.data});
  const auto train_recs = of_split(load_records(a.train.common.data), Split::kTrain);
  ProfileConfig pc{cfg.encoder, cfg.head, cfg.train, cfg.profile.repeats, cfg.encoder.seed};
  const auto rows = profile(cfg.profile.variants, train_recs, cfg.profile.fractions, pc);
  std::ostringstream s;
  write_profile(s, rows);
  write_text(out / "profile.tsv", s.str());
  std::cout << s.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtlam: multi-task argument mining pipeline"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Read corpora, split and write the interchange file");
  add_common(c_ingest, ingest.common, false);
  c_ingest->add_option("--iac", ingest.iac, "IAC posts table");
  c_ingest->add_option("--ibm", ingest.ibm, "IBM argument quality table");
  c_ingest->add_option("--propaganda-dir", ingest.propaganda_dir, "Directory of article<ID>.txt/.labels.tsv");
  c_ingest->add_flag("--synthetic", ingest.synthetic, "Add a synthetic corpus");
  c_ingest->add_option("--n-per-type", ingest.n_per_type, "Synthetic records per task type");
  c_ingest->add_option("--separability", ingest.separability, "Synthetic class-token rate in [0, 1]");

  AugmentArgs augment;
  auto* c_augment = app.add_subcommand("augment", "Augment the TRAIN split");
  add_common(c_augment, augment.common, true);
  c_augment->add_option("--methods", augment.methods, "BACKTRANSLATE CONTEXTUAL SYNONYM CROP");

  TrainArgs train_args;
  auto* c_train = app.add_subcommand("train", "Train a model");
  add_common(c_train, train_args.common, true);
  c_train->add_option("--task", train_args.task, "Train a single-task model for this task slug");
  c_train->add_option("--preset", train_args.preset, "SMALL, MEDIUM or LARGE head");
  c_train->add_option("--epochs", train_args.epochs, "Maximum epochs");
  c_train->add_option("--batch-size", train_args.batch_size);
  c_train->add_option("--lr", train_args.lr, "Peak learning rate");

  TrainArgs grid_args;
  auto* c_grid = app.add_subcommand("grid-search", "Train every grid point and pick the best on VAL");
  add_common(c_grid, grid_args.common, true);
  c_grid->add_option("--epochs", grid_args.epochs, "Maximum epochs");

  ModelArgs tune_args;
  auto* c_tune = app.add_subcommand("tune-thresholds", "Tune per-task thresholds (Youden's J)");
  add_common(c_tune, tune_args.common, true);
  c_tune->add_option("--checkpoint", tune_args.checkpoint)->required();
  c_tune->add_option("--split", tune_args.split, "Split to tune on")->capture_default_str();

  ModelArgs eval_args;
  eval_args.split = "TEST";
  auto* c_eval = app.add_subcommand("evaluate", "Score a checkpoint");
  add_common(c_eval, eval_args.common, true);
  c_eval->add_option("--checkpoint", eval_args.checkpoint)->required();
  c_eval->add_option("--thresholds", eval_args.thresholds, "thresholds.json (default 0.5)");
  c_eval->add_option("--reference", eval_args.reference, "Reference table to compare against");
  c_eval->add_option("--split", eval_args.split)->capture_default_str();

  BaselineArgs base_args;
  auto* c_base = app.add_subcommand("baseline", "Random and naive Bayes baselines");
  add_common(c_base, base_args.common, true);
  c_base->add_option("--trials", base_args.trials)->capture_default_str();
  c_base->add_option("--split", base_args.split)->capture_default_str();

  ModelArgs diag_args;
  diag_args.split = "TEST";
  auto* c_diag = app.add_subcommand("diagnose", "Layer dumps, t-SNE projections and plots");
  add_common(c_diag, diag_args.common, true);
  c_diag->add_option("--checkpoint", diag_args.checkpoint)->required();
  c_diag->add_option("--layer", diag_args.layer, "ENCODER_OUT, SHARED or TASK_SPECIFIC (default all)");
  c_diag->add_option("--split", diag_args.split, "TRAIN, VAL, TEST or ALL")->capture_default_str();

  ProfileArgs prof_args;
  auto* c_prof = app.add_subcommand("profile", "Time and memory of one epoch over data fractions");
  add_common(c_prof, prof_args.train.common, true);
  c_prof->add_option("--variants", prof_args.variants, "multi_task single_task");
  c_prof->add_option("--repeats", prof_args.repeats);
  c_prof->add_option("--batch-size", prof_args.train.batch_size);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_ingest) return run_ingest(ingest);
    if (*c_augment) return run_augment(augment);
    if (*c_train) return run_train(train_args);
    if (*c_grid) return run_grid(grid_args);
    if (*c_tune) return run_tune(tune_args);
    if (*c_eval) return run_evaluate(eval_args);
    if (*c_base) return run_baseline(base_args);
    if (*c_diag) return run_diagnose(diag_args);
    if (*c_prof) return run_profile(prof_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const RangeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
