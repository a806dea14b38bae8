// SPDX-License-Identifier: Apache-2.0
#pragma once
// Training driver, evaluation pass, and the benchmark bookkeeping that turns
// raw epoch timings into the speedup and layout-delta tables.
//
// run_train covers both execution shapes:
//   world == 1  -> train in-process, no sockets.
//   world  > 1  -> fork one worker process per extra rank (re-executing this
//                  binary's `worker` subcommand), become rank 0, rendezvous
//                  over loopback TCP, and train synchronously.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "srt/collective.hpp"
#include "srt/metrics.hpp"

namespace srt {

struct TrainConfig {
  std::string dataset;       // SRTDATA1 file, must carry normalization stats
  std::string out;           // checkpoint path written by rank 0 ("" = none)
  std::string log_csv;       // per-epoch training log ("" = none)
  std::string time_out;      // file receiving the training-loop seconds ("" = none)
  std::string precision = "f32";  // "f32" or "f64"
  std::size_t epochs = 20;
  std::size_t batch = 14;  // per worker; the global batch grows with world
  double lr = 0.00025;
  std::size_t patience = 10;
  std::size_t window = 3;
  std::size_t horizon = 1;
  std::size_t encoder_units = 200;
  std::size_t decoder_units = 200;
  std::size_t head_units = 100;
  std::uint64_t seed = 1;
  std::size_t world = 1;
  std::size_t rank = 0;      // only meaningful for spawned workers
  std::string address;       // rendezvous host:port; run_train picks one if empty
  std::string worker_exe;    // binary exec'd for extra ranks ("" = this one)
  double timeout_s = 30.0;   // rendezvous timeout
  bool frozen_shuffle = false;       // keep the epoch-0 permutation every epoch
  bool emit_rank_checkpoints = false;  // every rank writes <out>.rank<r>
};

// Stop once the validation loss has not improved for more than `patience`
// epochs: with the best epoch at b, training continues through b + patience
// and stops after the next one.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Feed one epoch's validation loss; true means stop after this epoch.
  bool update(std::size_t epoch, double val_loss) {
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
    }
    return epoch - best_epoch_ > patience_;
  }

  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::string stop_reason;  // "completed" or "early_stop"
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double loop_seconds = 0.0;  // training loop only; setup and I/O excluded
};

TrainResult run_train(const TrainConfig& cfg);

// Entry point for a spawned worker process (any rank, including re-running
// rank 0 externally). Returns a process exit code.
int worker_entry(const TrainConfig& cfg);

// CSV: epoch,train_loss,val_loss,seconds with a trailing
// "# stop_reason=..." comment line.
void save_training_log(const std::string& path, const TrainResult& result);

// Prediction quality on the test split. Each probed timestep t is predicted
// from the window that precedes it, predictions and targets are mapped back
// to physical units, and metrics pool every test case and component.
struct EvalGroup {
  std::size_t t_index = 0;
  MetricsReport metrics;
};

struct EvalReport {
  std::vector<EvalGroup> groups;  // probed indexes in ascending order
  std::size_t test_cases = 0;
};

// Probes timesteps {10, 20, last}. When scatter_prefix is non-empty each
// group additionally lands in <prefix>_t<index>.csv as "cfd,ai" pairs.
EvalReport evaluate(const std::string& dataset_path, const std::string& checkpoint_path,
                    const std::string& scatter_prefix = "", std::size_t bins = 64);

// Speedup bookkeeping over labeled timings in presentation order:
// parallel = t(baseline) / t, incremental = previous row's t / t (1.0 for
// the first row). Rounding to 2 decimals happens at display time only.
struct TimedRun {
  std::string label;
  double seconds = 0.0;
};

struct SpeedupRow {
  std::string label;
  double seconds = 0.0;
  double parallel = 1.0;
  double incremental = 1.0;
};

std::vector<SpeedupRow> speedup_table(const std::vector<TimedRun>& times,
                                      const std::string& baseline);

// Comparison matrix over an ordered layout list. Cell (i, j) is defined when
// the two layouts run the same number of workers and holds
// 100 * (t_j - t_i) / t_j, the percentage by which layout i is faster than
// layout j; the cell mirrored across the diagonal uses t_i as denominator,
// so the matrix is antisymmetric only up to the quadratic term. Cells
// comparing different worker counts are NaN, the diagonal is 0. Every world
// size present must contribute at least two layouts.
struct LayoutTiming {
  Layout layout;
  double seconds = 0.0;
};

struct DeltaMatrix {
  std::vector<Layout> layouts;
  std::vector<std::vector<double>> delta;  // percentages, NaN where undefined
};

DeltaMatrix layout_delta_matrix(const std::vector<LayoutTiming>& timings);

// Simulated wall seconds for one epoch: full steps only, each costing the
// per-worker batch compute plus one gradient all-reduce. With zero link
// costs this degenerates to samples / world * compute_per_sample.
double simulate_epoch_time(const Layout& layout, std::size_t samples, std::size_t batch,
                           std::uint64_t grad_bytes, const LinkCostModel& cost);

// Loopback helpers shared by the driver and the tests.
std::uint16_t pick_free_port();
std::string current_exe_path();

}  // namespace srt
