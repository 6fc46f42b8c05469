#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "augmult/analysis.hpp"
#include "augmult/training.hpp"

namespace augmult {

// Where the training data comes from; parsed from the `dataset` config value.
//   synth:classes=2,per_class=64,h=10,w=10,c=1,seed=7
//   cifar:classes=10,train=a.bin;b.bin,test=t.bin
struct DataSpec {
  enum class Kind { kSynth, kCifar };
  Kind kind = Kind::kSynth;
  int classes = 2;
  int per_class = 64;
  int height = 10, width = 10, channels = 1;
  uint64_t seed = 7;
  std::vector<std::string> train_paths;
  std::string test_path;

  std::string to_string() const;
  static DataSpec parse(const std::string& text);
  std::pair<Dataset, Dataset> load() const;
};

// Everything one training run needs. The canonical text is the fingerprint
// input, so any field change yields a new fingerprint.
struct RunSpec {
  TrainConfig train;
  ModelConfig model;  // classes/in_channels filled from the dataset on load
  AugPolicy policy;
  DataSpec data;
  bool record_wall_ms = true;

  std::string canonical() const;
  std::string fingerprint() const;
};

// key = value configuration text (# comments allowed). Keys mirror the
// config field names exactly; unknown keys are an error.
RunSpec parse_run_spec(const std::string& text);
RunSpec parse_run_spec_file(const std::string& path);

// One ledger row.
struct RunRecord {
  std::string fingerprint;
  std::string size_mode, placement;
  int n = 1;
  int64_t batch_size = 0;        // B
  int64_t unique_per_batch = 0;  // U
  double lr = 0.0;
  double temperature = 0.0;
  int64_t epoch_budget = 0;
  uint64_t seed = 0;
  int64_t step = 0;
  int64_t epoch = 0;
  int64_t dataset_passes = 0;
  double train_loss_raw = 0.0;  // NaN (serialized null) for diverged rows
  double test_acc = 0.0;
  int64_t wall_ms = 0;
  std::string status;  // RUNNING | FINAL | DIVERGED

  std::string to_json() const;
  static RunRecord from_json(const std::string& text);
};

// A variance ledger row: a VarianceReport plus the estimator seed.
struct VarianceEntry {
  VarianceReport report;
  uint64_t seed = 0;
  std::string to_json() const;
  static VarianceEntry from_json(const std::string& text);
};

// Ledger framing: one record per line, JSON payload + space + CRC32 of the
// payload. A torn final line fails its checksum and is dropped on read, so
// an interrupted append never corrupts earlier rows.
uint32_t crc32(const std::string& payload);
std::string frame_line(const std::string& payload);
bool unframe_line(const std::string& line, std::string* payload);
std::vector<std::string> read_framed_lines(const std::string& path, bool* had_corruption);
void append_framed_line(const std::string& path, const std::string& payload);

struct Ledger {
  std::vector<RunRecord> runs;
  std::vector<VarianceEntry> variances;
  bool had_corruption = false;
};
Ledger read_ledger(const std::string& path);

// Executes one configured run and appends its records to the ledger.
RunStatus run_to_ledger(const RunSpec& spec, const Dataset& train_data,
                        const Dataset& test_data, const std::string& ledger_path,
                        bool parallel = true);

struct SweepSpec {
  std::vector<Scheme> schemes;
  std::vector<int> n_values;
  std::vector<double> lr_grid;          // strictly increasing by factors of 2
  std::vector<int64_t> epoch_budgets;
  int repeats = 7;
  int agg_top_k = 5;  // aggregate the best k of `repeats`
  uint64_t base_seed = 1;
  RunSpec base;

  void validate() const;
};

SweepSpec parse_sweep_spec(const std::string& text);
SweepSpec parse_sweep_spec_file(const std::string& path);

struct SweepOutcome {
  int executed = 0;
  int skipped = 0;
  int diverged = 0;
};

// Runs every cell x repeat, appending to the ledger. Restart-safe: cells
// whose fingerprint already has a FINAL or DIVERGED row are skipped, and
// rows from interrupted cells are compacted away before resuming.
SweepOutcome run_sweep(const SweepSpec& spec, const std::string& ledger_path,
                       bool parallel = true);

// Mean and standard error of the best k final accuracies out of exactly
// `expected` runs of one cell; DIVERGED rows count as accuracy 0.
struct CellKey {
  std::string size_mode, placement;
  int n = 1;
  double lr = 0.0;
  int64_t epoch_budget = 0;
  auto operator<=>(const CellKey&) const = default;
};

struct CellAggregate {
  CellKey key;
  double mean_acc = 0.0;
  double stderr_acc = 0.0;
  int64_t final_step = 0;
  int count = 0;
  bool complete = false;
};

CellAggregate aggregate_best_k(const CellKey& key, const std::vector<RunRecord>& cell_finals,
                               int top_k, int expected);

// All complete cell aggregates in a ledger, grouped by (scheme, n, lr, budget).
std::vector<CellAggregate> aggregate_ledger(const Ledger& ledger, int top_k, int expected,
                                            std::vector<CellKey>* incomplete = nullptr);

// Argmax over lr within one (scheme, n, budget) family; ties break toward
// the smaller learning rate.
const CellAggregate* best_over_lr(const std::vector<const CellAggregate*>& cells);

enum class ReportView {
  kAccVsEpochs,
  kAccVsUpdates,
  kAccVsLr,
  kAccVsTemperature,
  kLossVsUpdates,
  kVarianceVsN,
};
ReportView view_from_name(const std::string& name);

// Tidy plot data: header "series_key,x,y,yerr", one row per point, rows
// sorted by (series_key, x). Returns false when the selection is empty
// (header-only CSV).
bool report_view(const Ledger& ledger, ReportView view, int top_k, int expected,
                 std::string* csv);

// Audit helpers used by tests and the CLI.
bool temperature_audit(const Ledger& ledger, std::string* first_violation);

}  // namespace augmult
