// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "gradcheck.hpp"
#include "mtlam/checkpoint.hpp"
#include "mtlam/config.hpp"
#include "mtlam/corpus.hpp"
#include "mtlam/diagnostics.hpp"
#include "mtlam/eval.hpp"
#include "mtlam/head.hpp"
#include "mtlam/loss.hpp"
#include "mtlam/thresholds.hpp"
#include "mtlam/train.hpp"
#include "support.hpp"

#ifndef MTLAM_CLI_PATH
#error "MTLAM_CLI_PATH must name the CLI binary"
#endif

using namespace mtlam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- fixtures

// Smoke fixture: separability 1.0, HASHED_BOW, batch 32, at most 5 epochs.
RunConfig smoke_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  SynthConfig s;
  s.n_per_type = 6000;
  s.separability = 1.0;
  c.data.synthetic = s;
  c.head.hidden_width = 48;
  c.head.dropout_rate = 0.0;
  c.train.learning_rate = 2e-3;
  c.train.batch_size = 32;
  c.train.max_epochs = 4;
  c.propagate_seed();
  return c;
}

// Multi- vs single-task fixture: separability 0.7 with a cue pool shared by
// every task.
RunConfig transfer_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  SynthConfig s;
  s.n_per_type = 300;
  s.separability = 0.7;
  s.cue_vocabulary = 100;
  s.cues_per_record = 4;
  c.data.synthetic = s;
  c.head.hidden_width = preset_width(SizePreset::kMedium);
  c.head.dropout_rate = 0.4;
  c.train.learning_rate = 1e-3;
  c.train.batch_size = 32;
  c.train.max_epochs = 30;
  c.propagate_seed();
  return c;
}

std::vector<Record> corpus_of(const RunConfig& c) {
  return split(synthesize(*c.data.synthetic), c.data.split_ratios, c.seed);
}

// ---------------------------------------------------------------- criteria

Outcome loss_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const auto b = fixtures::random_batch(rng, 64);
    const auto w = fixtures::random_weights(rng);
    const double v = masked_bce(fixtures::to_matrix(b.probability), fixtures::to_matrix(b.label),
                                fixtures::to_matrix(b.mask), w).value;
    worst = std::max(worst, std::abs(v - fixtures::oracle_loss(b, w.type_weights, fixtures::class_array(w))));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && t < 60, fmt("200 batches, max |vectorized - oracle| = %.2e, %.2fs", worst, t)};
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t checked = 0;
  std::string where;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto g = fixtures::make_grad_instance(1000 + seed, 8);
    const auto rep = fixtures::check_gradients(g);
    checked += rep.checked;
    if (rep.max_relative_error > worst) {
      worst = rep.max_relative_error;
      where = rep.worst;
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 300,
          fmt("10 instances, width 8, %zu parameters checked, max relative error %.2e, %.1fs", checked, worst, t)};
}

Outcome mask_invariance() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u;
  std::uniform_int_distribution<int> bit(0, 1);
  int changed = 0;
  for (int i = 0; i < 100; ++i) {
    auto b = fixtures::random_batch(rng, 64);
    const auto w = fixtures::random_weights(rng);
    const auto loss = [&] {
      return masked_bce(fixtures::to_matrix(b.probability), fixtures::to_matrix(b.label), fixtures::to_matrix(b.mask), w)
          .value;
    };
    const double before = loss();
    for (std::size_t j = 0; j < b.mask.size(); ++j)
      for (int t = 0; t < 10; ++t)
        if (!b.mask[j][t]) b.probability[j][t] = u(rng), b.label[j][t] = bit(rng);
    changed += loss() != before;
  }
  return {changed == 0, fmt("100 instances, %d changed loss", changed)};
}

Outcome weight_formulas() {
  const auto nu = compute_type_weights(std::array<std::size_t, 3>{100, 200, 700});
  const bool exact = nu[0] == 14.0 / 23 && nu[1] == 7.0 / 23 && nu[2] == 2.0 / 23;
  const auto w = class_weights_for({0.21, 0.79});
  const bool close = std::abs(w[0] - 1.580) < 1e-3 && std::abs(w[1] - 0.420) < 1e-3;
  return {exact && close, fmt("nu = (%.17g, %.17g, %.17g), w(21/79) = (%.4f, %.4f)", nu[0], nu[1], nu[2], w[0], w[1])};
}

Outcome head_structure() {
  HeadConfig cfg;
  const std::size_t n = param_count(cfg);
  const double off = std::abs(static_cast<double>(n) - 17024.0) / 17024.0;

  // Branch isolation.
  HeadConfig small;
  small.input_dim = 16;
  small.hidden_width = 6;
  small.dropout_rate = 0;
  Rng init(5);
  const auto base = init_head(small, init);
  const HeadLayout layout(small);
  std::mt19937_64 rng(505);
  std::normal_distribution<double> g;
  int leaks = 0, silent = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Matrix x(4, 16);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    const int t = trial % 10;
    auto p = base;
    const auto& slot = layout.task_branch[t][(trial / 10) % 2];
    for (std::size_t i = 0; i < slot.size(); ++i) p.values[slot.offset + i] += 0.3 * g(rng);
    const Matrix a = forward(x, base, Mode::kEval).probabilities;
    const Matrix b = forward(x, p, Mode::kEval).probabilities;
    for (int u = 0; u < 10; ++u) {
      const bool diff = (a.col(u) - b.col(u)).cwiseAbs().maxCoeff() > 0;
      if (u != t && diff) ++leaks;
      if (u == t && !diff) ++silent;
    }
  }
  // Pooling commutes with sigmoid.
  int pool_mismatch = 0;
  std::normal_distribution<double> z(0, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> logits(18), probs(18);
    for (int i = 0; i < 18; ++i) probs[i] = sigmoid(logits[i] = z(rng));
    pool_mismatch += max_pool_propaganda(probs) != sigmoid(*std::max_element(logits.begin(), logits.end()));
  }
  // Zero parameters.
  HeadParams zero{cfg, std::vector<double>(n, 0.0)};
  Matrix x(8, 128);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  const bool half = (forward(x, zero, Mode::kEval).probabilities.array() == 0.5).all();
  const bool pass = n == 17121 && off < 0.01 && leaks == 0 && pool_mismatch == 0 && half;
  return {pass, fmt("param_count(22) = %zu (%.2f%% from 17,024); isolation leaks %d/1000 (%d perturbations without "
                    "effect on their own task); pooling mismatches %d/1000; zero-parameter outputs all 0.5: %s",
                    n, 100 * off, leaks, silent, pool_mismatch, half ? "yes" : "no")};
}

Outcome thresholds() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::uniform_int_distribution<int> n(2, 60), bit(0, 1), coarse(1, 9);
  int j_mismatch = 0;
  const auto j_of = [](const std::vector<double>& s, const std::vector<Label>& y, double thr) {
    double tp = 0, fp = 0, P = 0, N = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      (y[i] ? P : N) += 1;
      if (s[i] > thr) (y[i] ? tp : fp) += 1;
    }
    return tp / P - fp / N;
  };
  // Exhaustive midpoint scan; returns the best J and how many candidates hit it.
  const auto scan = [&](const std::vector<double>& s, const std::vector<Label>& y) {
    std::vector<double> v = s;
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    std::vector<double> cand = {1e-7, 1 - 1e-7};
    for (std::size_t i = 1; i < v.size(); ++i) cand.push_back((v[i - 1] + v[i]) / 2);
    double best = -2;
    int hits = 0;
    for (double c : cand) {
      const double j = j_of(s, y, c);
      if (j > best + 1e-12) best = j, hits = 1;
      else if (std::abs(j - best) <= 1e-12) ++hits;
    }
    return std::pair{best, hits};
  };
  std::vector<std::vector<double>> sets;
  std::vector<std::vector<Label>> labels;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(static_cast<std::size_t>(n(rng)));
    std::vector<Label> y(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = trial % 3 == 0 ? coarse(rng) / 10.0 : u(rng);
      y[i] = bit(rng);
    }
    y[0] = 0;
    y[1] = 1;
    const auto r = tune(s, y);
    const auto [best, hits] = scan(s, y);
    if (std::abs(r.youden_j - best) > 1e-12 || std::abs(j_of(s, y, r.threshold) - best) > 1e-12) ++j_mismatch;
    sets.push_back(std::move(s));
    labels.push_back(std::move(y));
  }
  // Rank invariance under 10 strictly increasing maps of (0, 1) into itself.
  std::vector<std::function<double(double)>> maps;
  std::uniform_real_distribution<double> slope(0.3, 3.0), shift(-2, 2), power(0.3, 3.0);
  for (int m = 0; m < 10; ++m) {
    if (m % 2) {
      const double a = slope(rng), b = shift(rng);
      maps.push_back([a, b](double x) { return sigmoid(a * std::log(x / (1 - x)) + b); });
    } else {
      const double p = power(rng);
      maps.push_back([p](double x) { return std::pow(x, p); });
    }
  }
  int j_changed = 0, class_changed = 0, unique_sets = 0, tied_sets = 0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const auto& s = sets[k];
    const auto& y = labels[k];
    const auto r = tune(s, y);
    const bool unique = scan(s, y).second == 1;
    (unique ? unique_sets : tied_sets) += 1;
    for (const auto& f : maps) {
      std::vector<double> fs;
      for (double v : s) fs.push_back(f(v));
      const auto rf = tune(fs, y);
      if (std::abs(rf.youden_j - r.youden_j) > 1e-12) ++j_changed;
      if (!unique) continue;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if ((s[i] > r.threshold) != (fs[i] > rf.threshold)) {
          ++class_changed;
          break;
        }
      }
    }
  }
  const bool pass = j_mismatch == 0 && j_changed == 0 && class_changed == 0;
  return {pass, fmt("optimality mismatches %d/1000; under 10 increasing maps: J changed %d/10000, classification "
                    "changed %d/%d on sets with a unique optimum (%d sets tie and are checked on J only)",
                    j_mismatch, j_changed, class_changed, unique_sets * 10, tied_sets)};
}

struct SmokeRun {
  MetricsReport test;
  TrainResult result;
  double seconds = 0;
};

SmokeRun smoke_pipeline(const RunConfig& cfg, const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  // synthesize -> ingest (through the interchange file) -> train -> tune -> evaluate.
  save_records((dir / "records.jsonl").string(), corpus_of(cfg));
  const auto all = load_records((dir / "records.jsonl").string());
  const auto train_recs = filter_split(all, Split::kTrain);
  const auto val_recs = filter_split(all, Split::kVal);
  const auto test_recs = filter_split(all, Split::kTest);
  const auto weights = compute_loss_weights(stats(all));
  Model model = make_model(cfg.encoder, cfg.head, cfg.encoder.seed);
  SmokeRun run;
  run.result = train(model, train_recs, val_recs, weights, cfg.train);
  const auto val = pointers(val_recs);
  const auto tuned = evaluate_model(model, val, weights).thresholds;
  run.test = evaluate_model(model, pointers(test_recs), weights, std::nullopt, tuned).report;
  run.seconds = seconds_since(t0);
  return run;
}

Outcome smoke(const fs::path& dir) {
  const auto run = smoke_pipeline(smoke_config(1), dir);
  double min_f1 = 100;
  std::string worst;
  for (const auto& spec : TaskRegistry::instance().tasks()) {
    const double f = run.test.tasks[spec.id] ? run.test.tasks[spec.id]->f1 : 0.0;
    if (f < min_f1) min_f1 = f, worst = std::string(spec.slug);
  }
  bool decreasing = true;
  std::string losses;
  const auto& ep = run.result.history.epochs;
  for (std::size_t i = 0; i < ep.size(); ++i) {
    losses += (i ? " " : "") + fmt("%.4f", ep[i].train_loss);
    if (i > 0 && !(ep[i].train_loss < ep[i - 1].train_loss)) decreasing = false;
  }
  const bool pass = min_f1 >= 95 && decreasing && run.seconds < 300 && ep.size() <= 5 && !run.result.diverged;
  return {pass, fmt("min test F1 %.2f (%s), mean %.2f; train loss %s; %zu epochs, %.1fs", min_f1, worst.c_str(),
                    run.test.aggregate.f1, losses.c_str(), ep.size(), run.seconds)};
}

Outcome transfer() {
  const RunConfig cfg = transfer_config(1);
  const auto all = corpus_of(cfg);
  const auto train_recs = filter_split(all, Split::kTrain);
  const auto val_recs = filter_split(all, Split::kVal);
  const auto weights = compute_loss_weights(stats(all));
  const auto best_of = [](const TrainResult& r) -> const EpochRecord& { return r.history.epochs.at(r.best_epoch - 1); };

  Model multi = make_model(cfg.encoder, cfg.head, cfg.encoder.seed);
  const auto rm = train(multi, train_recs, val_recs, weights, cfg.train);
  const double multi_f1 = best_of(rm).mean_val_f1;
  const double multi_time = rm.history.wall_seconds;

  double single_sum = 0, single_time = 0;
  for (TaskId t = 0; t < kNumTasks; ++t) {
    Model m = make_model(cfg.encoder, cfg.head, cfg.encoder.seed);
    TrainOptions opts;
    opts.only_task = t;
    const auto r = train(m, train_recs, val_recs, weights, cfg.train, opts);
    single_sum += *best_of(r).val_f1[t];
    single_time += r.history.wall_seconds;
  }
  const double single_f1 = single_sum / kNumTasks;
  return {multi_f1 >= single_f1 && multi_time < single_time,
          fmt("mean val F1 multi %.2f vs single %.2f; train time multi %.1fs vs single total %.1fs", multi_f1,
              single_f1, multi_time, single_time)};
}

Outcome comparison() {
  const auto a = compare_values({"disagree_agree", "", "Acc.", 68.20, 70.73}, 70.73);
  const auto b = compare_values({"emotion_fact", "", "F1", 46.20, 63.93}, 63.93);
  const bool pass = round2(a.absolute_gain) == 2.53 && round2(a.relative_gain) == 3.71 &&
                    round2(b.absolute_gain) == 17.73 && round2(b.relative_gain) == 38.38;
  return {pass, fmt("(68.20, 70.73) -> (%.2f, %.2f); (46.20, 63.93) -> (%.2f, %.2f)", a.absolute_gain,
                    a.relative_gain, b.absolute_gain, b.relative_gain)};
}

Outcome stopping_and_warmup() {
  EarlyStopping es(2);
  std::size_t stopped_at = 0;
  const std::vector<double> seq = {1.0, 0.9, 0.95, 0.97};
  for (std::size_t i = 0; i < seq.size() && !stopped_at; ++i) {
    if (es.observe(seq[i])) stopped_at = i + 1;
  }
  TrainConfig tc;  // lr 3e-4, warmup 5%
  const std::size_t total = 1000;
  const double half = lr_schedule(25, total, tc);

  // In a real run the kept parameters reproduce the best epoch's VAL loss.
  const RunConfig cfg = transfer_config(2);
  const auto all = corpus_of(cfg);
  const auto val = filter_split(all, Split::kVal);
  const auto weights = compute_loss_weights(stats(all));
  Model m = make_model(cfg.encoder, cfg.head, cfg.encoder.seed);
  TrainConfig quick = cfg.train;
  quick.max_epochs = 12;
  const auto r = train(m, filter_split(all, Split::kTrain), val, weights, quick);
  const double kept = evaluate_model(m, pointers(val), weights).loss;
  const double best = r.history.epochs.at(r.best_epoch - 1).val_loss;
  const bool restored = kept == best;
  const bool pass = stopped_at == 4 && es.best_epoch() == 2 && std::abs(half - 1.5e-4) < 1e-18 && restored;
  return {pass, fmt("stopped after epoch %zu keeping epoch %zu; lr at half warmup %.3g; training run kept epoch %zu "
                    "of %zu with VAL loss %.6f (recomputed %.6f)",
                    stopped_at, es.best_epoch(), half, r.best_epoch, r.history.epochs.size(), best, kept)};
}

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MTLAM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const fs::path& dir) {
  const auto cfg_path = dir / "smoke.json";
  std::ofstream(cfg_path) << R"({"data": {"synthetic": {"n_per_type": 6000, "separability": 1.0}},
    "head": {"hidden_width": 48, "dropout_rate": 0.0},
    "train": {"learning_rate": 0.002, "batch_size": 32, "max_epochs": 4}})";
  const std::vector<std::string> artifacts = {"data/records.jsonl", "eval/thresholds.json", "eval/metrics.json"};
  std::array<std::vector<std::string>, 2> bytes;
  for (int run = 0; run < 2; ++run) {
    const auto out = dir / ("run" + std::to_string(run));
    const std::string common = " --config " + cfg_path.string() + " --seed 11";
    const std::string data = (out / "data" / "records.jsonl").string();
    const std::string ckpt = (out / "model" / "model.ckpt").string();
    const std::vector<std::string> steps = {
        "ingest" + common + " --out " + (out / "data").string(),
        "train" + common + " --data " + data + " --out " + (out / "model").string(),
        "tune-thresholds" + common + " --data " + data + " --checkpoint " + ckpt + " --out " + (out / "eval").string(),
        "evaluate" + common + " --data " + data + " --checkpoint " + ckpt + " --thresholds " +
            (out / "eval" / "thresholds.json").string() + " --out " + (out / "eval").string()};
    for (std::size_t s = 0; s < steps.size(); ++s) {
      const int code = cli(steps[s], out.string() + ".step" + std::to_string(s) + ".log");
      if (code != 0) return {false, fmt("run %d step %zu exited %d", run + 1, s + 1, code)};
    }
    for (const auto& a : artifacts) bytes[run].push_back(slurp(out / a));
  }
  std::string report;
  bool same = true;
  for (std::size_t i = 0; i < artifacts.size(); ++i) {
    const bool eq = bytes[0][i] == bytes[1][i] && !bytes[0][i].empty();
    same &= eq;
    report += (i ? ", " : "") + artifacts[i] + (eq ? " identical" : " DIFFERENT") + fmt(" (%zu bytes)", bytes[0][i].size());
  }
  return {same, report};
}

Outcome diagnostics() {
  // Two 128-d Gaussian blobs, centers 10 apart.
  std::mt19937_64 rng(1212);
  std::normal_distribution<double> g;
  const Eigen::Index per = 100;
  Matrix x(2 * per, 128);
  std::vector<int> tag;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = i < per ? 0 : 1;
    tag.push_back(c);
    for (Eigen::Index k = 0; k < 128; ++k) x(i, k) = g(rng) + (c ? 10.0 / std::sqrt(128.0) : 0.0);
  }
  TsneConfig tc;
  tc.seed = 7;
  const Matrix y = tsne_project(x, tc);
  const double sil = silhouette(y, tag);

  // Profile on the smoke corpus.
  const RunConfig cfg = smoke_config(1);
  const auto train_recs = filter_split(corpus_of(cfg), Split::kTrain);
  ProfileConfig pc{cfg.encoder, cfg.head, cfg.train, 3, cfg.seed};
  const auto rows = profile({"multi_task", "single_task"}, train_recs, kProfileFractions, pc);
  bool monotone = true;
  std::string times;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].error) monotone = false;
    if (i % 4 && rows[i].wall_seconds < rows[i - 1].wall_seconds) monotone = false;
    times += (i % 4 ? " " : i ? "; " + rows[i].model_variant + " " : rows[i].model_variant + " ") +
             fmt("%.3f", rows[i].wall_seconds);
  }
  return {sil > 0.5 && monotone, fmt("t-SNE silhouette %.3f; epoch seconds at 5/10/20/40%%: %s", sil, times.c_str())};
}

}  // namespace

int main() {
  const fs::path dir = fixtures::scratch_dir("acceptance");
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, loss_oracle},
      {2, gradients},
      {3, mask_invariance},
      {4, weight_formulas},
      {5, head_structure},
      {6, thresholds},
      {7, [&] { return smoke(dir); }},
      {8, transfer},
      {9, comparison},
      {10, stopping_and_warmup},
      {11, [&] { return determinism(dir); }},
      {12, diagnostics},
  };
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("Criterion %d: %s (%s)\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
