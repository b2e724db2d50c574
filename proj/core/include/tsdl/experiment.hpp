#pragma once

#include "tsdl/cnn.hpp"
#include "tsdl/datasets.hpp"
#include "tsdl/ffnn.hpp"
#include "tsdl/matrix.hpp"
#include "tsdl/rnn.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tsdl {

enum class Parameterization { weight, target_scu, target_ocu };

// Accepts "weight", "target-scu", "target-ocu" (underscores tolerated).
Parameterization parse_parameterization(const std::string& name);
std::string to_string(Parameterization p);

// Flat key=value configuration: one pair per line, '#' starts a comment,
// whitespace around keys and values is stripped. Command-line flags overwrite
// file values; the effective map is serialized into the run's output
// directory so any run can be replayed from it.
struct RunConfig {
  std::map<std::string, std::string> kv;

  static RunConfig from_file(const std::string& path);
  static RunConfig parse(const std::string& text);

  bool has(const std::string& key) const { return kv.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { kv[key] = value; }
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  std::string serialize() const;  // sorted key=value lines
};

// One telemetry row; appended every 10 iterations (every iteration when the
// budget is at most 1000) and always at the final iteration.
struct MetricsRow {
  int iteration = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double seconds = 0.0;
};

std::string metrics_csv_header();
std::string to_csv_line(const MetricsRow& row);

struct RunResult {
  bool ok = false;            // finished without numerical failure
  bool success = false;       // experiment-specific goal reached
  int success_iteration = -1;
  double final_loss = 0.0;
  double final_train_acc = 0.0;
  double final_test_acc = 0.0;
  std::string error;
  std::vector<MetricsRow> history;
};

// Two interleaved spirals, feed-forward net (default 2-5-5-5-2 with all
// shortcut connections), full-batch by default. Success: 100% training
// accuracy at any recorded iteration. Writes metrics.csv, config.txt, a
// grey-scale decision map (binary PGM) and an accuracy line plot (SVG).
// Keys: param, opt, lr, lambda, batch, target_batch, iters, seed, sigma,
// widths, shortcuts, out.
RunResult run_two_spirals(const RunConfig& cfg);

// Delayed-recall ("memorize") and delayed-addition ("adder") bit-stream tasks
// on the recurrent net. Success: masked test-bit accuracy >= 0.99, at which
// point the run stops. Keys: task, delay, hidden, streams, stream_len,
// test_streams, target_steps, plus the common keys above.
RunResult run_bitstream(const RunConfig& cfg);

// Reduced MNIST CNN. Data directory resolution order: key data_dir, env var
// TSDL_DATA_DIR, ./data/mnist. Success: final test accuracy >= 0.9.
// Keys: conv (e.g. "3-8-2,3-16-2"), dense (e.g. "32,10"), epochs, dropout,
// plus the common keys.
RunResult run_mnist_small(const RunConfig& cfg);

// Cross product of axis values and seeds over the experiment named in
// base.kv["experiment"]; per-run outputs land in subdirectories and an
// aggregate CSV (one row per value: successes, median success iteration,
// median final accuracies) is written to <out>/sweep.csv. Individual run
// failures are recorded and do not abort the sweep.
struct SweepRow {
  std::string value;
  int seeds = 0;
  int successes = 0;
  int failures = 0;            // numerical failures, counted as unsuccessful
  double median_success_iter = -1.0;
  double median_final_train_acc = 0.0;
  double median_final_test_acc = 0.0;
};

std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& axis,
                                const std::vector<std::string>& values,
                                const std::vector<std::uint64_t>& seeds);

// ----- small artifact writers (exposed for tests) -----

// Probability of class 0 over the [-1,1]^2 input square, n x n grid, row 0 at
// the top (y = +1).
Matrix decision_map(const NetworkSpec& spec, const WeightParams& w, int n);

// Binary (P5) portable graymap; values clamped to [0,1] and scaled to 255.
void write_pgm(const std::string& path, const Matrix& gray01);

// Minimal line plot of train/test accuracy against iteration.
void write_accuracy_svg(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace tsdl
