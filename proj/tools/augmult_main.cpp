// Experiment CLI: train single runs, sweep grids, estimate gradient
// variance, probe dropout-mask averaging, and emit plot data from ledgers.
//
// Exit codes: 0 success, 2 configuration error, 3 divergence-only completion.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "augmult/analysis.hpp"
#include "augmult/errors.hpp"
#include "augmult/harness.hpp"
#include "augmult/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace augmult;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

// Relative output paths land in $AUGMULT_OUT_DIR when it is set.
std::string resolve_out(const std::string& path) {
  const char* dir = std::getenv("AUGMULT_OUT_DIR");
  if (!dir || !*dir || path.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(dir) / p).string();
}

void apply_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int cmd_train(const std::string& config_path, const std::string& out, int threads) {
  apply_threads(threads);
  RunSpec spec = parse_run_spec_file(config_path);
  auto [train_data, test_data] = spec.data.load();
  std::string ledger = resolve_out(out);
  RunStatus status = run_to_ledger(spec, train_data, test_data, ledger, true);
  std::cerr << "run " << spec.fingerprint() << " " << status_name(status) << " -> " << ledger
            << "\n";
  return status == RunStatus::kDiverged ? kExitDiverged : kExitOk;
}

int cmd_sweep(const std::string& spec_path, const std::string& out, int threads) {
  apply_threads(threads);
  SweepSpec spec = parse_sweep_spec_file(spec_path);
  std::string ledger = resolve_out(out);
  SweepOutcome outcome = run_sweep(spec, ledger, true);
  std::cerr << "sweep: executed " << outcome.executed << ", skipped " << outcome.skipped
            << ", diverged " << outcome.diverged << " -> " << ledger << "\n";
  if (outcome.executed > 0 && outcome.diverged == outcome.executed) return kExitDiverged;
  return kExitOk;
}

int cmd_variance(const std::string& config_path, const std::string& scheme_str, int n,
                 int64_t b_or_u, int64_t num_batches, int repeats, uint64_t seed,
                 const std::string& out, int threads) {
  apply_threads(threads);
  RunSpec base = parse_run_spec_file(config_path);
  auto [train_data, test_data] = base.data.load();
  (void)test_data;

  ModelConfig mc = base.model;
  mc.classes = train_data.classes;
  mc.in_channels = train_data.channels();
  SmallResNet model(mc);

  Scheme scheme{size_mode_from_name(scheme_str.substr(0, scheme_str.find('-'))),
                placement_from_name(scheme_str.substr(scheme_str.find('-') + 1))};
  std::string ledger = resolve_out(out);
  for (int r = 0; r < repeats; ++r) {
    uint64_t rep_seed = hash_combine(seed, static_cast<uint64_t>(r));
    ParamSet params = model.init(hash_combine(rep_seed, uint64_t{0x696e6974}));
    VarianceEntry entry;
    entry.seed = rep_seed;
    entry.report = grad_variance(model, params, train_data, scheme, n, b_or_u, num_batches,
                                 rep_seed, base.policy, true);
    append_framed_line(ledger, entry.to_json());
  }
  std::cerr << "variance: " << repeats << " estimates (" << scheme_str << ", n=" << n
            << ") -> " << ledger << "\n";
  return kExitOk;
}

int cmd_dropout_var(const std::string& config_path, const std::vector<int>& n_masks_list,
                    double drop_p, int repeats, int64_t batch_size, uint64_t seed,
                    const std::string& out, int threads) {
  apply_threads(threads);
  RunSpec base = parse_run_spec_file(config_path);
  auto [train_data, test_data] = base.data.load();
  (void)test_data;
  if (batch_size > train_data.size())
    throw ConfigError("batch size exceeds the dataset");

  ModelConfig mc = base.model;
  mc.classes = train_data.classes;
  mc.in_channels = train_data.channels();
  SmallResNet model(mc);
  ParamSet params = model.init(hash_combine(seed, uint64_t{0x696e6974}));

  // One fixed batch, one fixed augmentation per image (multiplicity 1); the
  // masks are the only source of randomness.
  std::vector<Slot> batch;
  for (int64_t i = 0; i < batch_size; ++i)
    batch.push_back({static_cast<int32_t>(i),
                     hash_combine(seed, uint64_t{0xf1} /* fixed aug */, static_cast<uint64_t>(i))});

  std::ostringstream csv;
  csv << "n_masks,variance_of_mean,repeats\n";
  for (int n_masks : n_masks_list) {
    // Variance across repeats of the mask-averaged gradient, averaged over
    // all parameter entries.
    std::vector<std::vector<Tensor>> grads;
    grads.reserve(static_cast<size_t>(repeats));
    for (int r = 0; r < repeats; ++r)
      grads.push_back(dropout_avg_gradient(model, params, train_data, batch, base.policy,
                                           n_masks, drop_p,
                                           hash_combine(seed, static_cast<uint64_t>(n_masks),
                                                        static_cast<uint64_t>(r)),
                                           0.0, true));
    int64_t total = 0;
    double var_sum = 0.0;
    size_t num_params = grads[0].size();
    for (size_t p = 0; p < num_params; ++p) {
      for (int64_t i = 0; i < grads[0][p].numel(); ++i) {
        double mean = 0.0;
        for (int r = 0; r < repeats; ++r) mean += grads[static_cast<size_t>(r)][p][i];
        mean /= repeats;
        double v = 0.0;
        for (int r = 0; r < repeats; ++r) {
          double d = grads[static_cast<size_t>(r)][p][i] - mean;
          v += d * d;
        }
        var_sum += v / (repeats - 1);
        ++total;
      }
    }
    csv << n_masks << "," << var_sum / static_cast<double>(total) << "," << repeats << "\n";
  }

  std::string path = resolve_out(out);
  if (path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open output: " + path);
    f << csv.str();
    std::cerr << "dropout-var -> " << path << "\n";
  }
  return kExitOk;
}

int cmd_report(const std::string& ledger_path, const std::string& view_name,
               const std::string& out, int top_k, int repeats) {
  Ledger ledger = read_ledger(ledger_path);
  if (ledger.had_corruption)
    std::cerr << "warning: ledger has corrupt lines (skipped)\n";
  std::string csv;
  bool nonempty = report_view(ledger, view_from_name(view_name), top_k, repeats, &csv);
  std::string path = resolve_out(out);
  if (path.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open output: " + path);
    f << csv;
  }
  if (!nonempty) {
    std::cerr << "report: empty selection for view " << view_name << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"augmentation-multiplicity training and measurement harness"};
  app.require_subcommand(1);

  std::string config_path, spec_path, ledger_path, out_path, view_name, scheme_str;
  int threads = 0;
  int n = 1;
  int64_t b_or_u = 16, num_batches = 100, batch_size = 16;
  int repeats = 10, top_k = 5, agg_repeats = 7;
  uint64_t seed = 1;
  double drop_p = 0.4;
  std::vector<int> n_masks_list{1, 2, 4, 8, 16};

  auto* t = app.add_subcommand("train", "run one configured training run");
  t->add_option("--config", config_path, "run config file")->required();
  t->add_option("--out", out_path, "ledger path")->required();
  t->add_option("--threads", threads, "OpenMP threads (0 = library default)");

  auto* s = app.add_subcommand("sweep", "run a grid sweep (resumable)");
  s->add_option("--spec", spec_path, "sweep spec file")->required();
  s->add_option("--out", out_path, "ledger path")->required();
  s->add_option("--threads", threads, "OpenMP threads");

  auto* v = app.add_subcommand("variance", "estimate minibatch gradient variance at init");
  v->add_option("--config", config_path, "base config file (model/data/policy)")->required();
  v->add_option("--scheme", scheme_str, "scheme, e.g. FIXED-WITHIN or GROWING-WITHIN")
      ->required();
  v->add_option("--n", n, "augmentation multiplicity")->required();
  v->add_option("--b-or-u", b_or_u, "B (fixed) or U (growing)")->required();
  v->add_option("--num-batches", num_batches, "gradient samples per estimate");
  v->add_option("--repeats", repeats, "independent estimates");
  v->add_option("--seed", seed, "estimator seed");
  v->add_option("--out", out_path, "variance ledger path")->required();
  v->add_option("--threads", threads, "OpenMP threads");

  auto* d = app.add_subcommand("dropout-var", "variance of the mask-averaged gradient");
  d->add_option("--config", config_path, "base config file")->required();
  d->add_option("--n-masks", n_masks_list, "mask multiplicities");
  d->add_option("--drop-p", drop_p, "drop probability");
  d->add_option("--repeats", repeats, "repeats per multiplicity");
  d->add_option("--batch-size", batch_size, "images in the fixed batch");
  d->add_option("--seed", seed, "seed");
  d->add_option("--out", out_path, "CSV output path (stdout if empty)");
  d->add_option("--threads", threads, "OpenMP threads");

  auto* r = app.add_subcommand("report", "emit plot-data CSV from a ledger");
  r->add_option("--ledger", ledger_path, "ledger path")->required();
  r->add_option("--view", view_name,
                "acc_vs_epochs | acc_vs_updates | acc_vs_lr | acc_vs_temperature | "
                "loss_vs_updates | variance_vs_n")
      ->required();
  r->add_option("--out", out_path, "CSV output path (stdout if empty)");
  r->add_option("--top-k", top_k, "aggregate the best k runs per cell");
  r->add_option("--repeats", agg_repeats, "expected runs per cell");

  CLI11_PARSE(app, argc, argv);

  try {
    if (t->parsed()) return cmd_train(config_path, out_path, threads);
    if (s->parsed()) return cmd_sweep(spec_path, out_path, threads);
    if (v->parsed())
      return cmd_variance(config_path, scheme_str, n, b_or_u, num_batches, repeats, seed,
                          out_path, threads);
    if (d->parsed())
      return cmd_dropout_var(config_path, n_masks_list, drop_p, repeats, batch_size, seed,
                             out_path, threads);
    if (r->parsed()) return cmd_report(ledger_path, view_name, out_path, top_k, agg_repeats);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
