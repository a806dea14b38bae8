// SPDX-License-Identifier: Apache-2.0
// Command-line front end: dataset generation, (distributed) training, the
// worker entry point used by spawned ranks, evaluation, and the benchmark
// helpers (link-cost simulation, measured scaling, speedup tables).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "srt/collective.hpp"
#include "srt/datagen.hpp"
#include "srt/harness.hpp"

namespace {

void add_train_options(CLI::App* cmd, srt::TrainConfig& cfg) {
  cmd->add_option("--dataset", cfg.dataset, "input dataset file")->required();
  cmd->add_option("--out", cfg.out, "checkpoint path written by rank 0");
  cmd->add_option("--log-csv", cfg.log_csv, "per-epoch training log (CSV)");
  cmd->add_option("--time-out", cfg.time_out, "file receiving the training-loop seconds");
  cmd->add_option("--precision", cfg.precision, "training precision")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--epochs", cfg.epochs, "maximum epochs");
  cmd->add_option("--batch", cfg.batch, "per-worker batch size");
  cmd->add_option("--lr", cfg.lr, "Adam learning rate");
  cmd->add_option("--patience", cfg.patience, "early-stop patience in epochs");
  cmd->add_option("--window", cfg.window, "observed timesteps per sample");
  cmd->add_option("--horizon", cfg.horizon, "predicted timesteps per sample");
  cmd->add_option("--encoder-units", cfg.encoder_units, "encoder LSTM width");
  cmd->add_option("--decoder-units", cfg.decoder_units, "decoder LSTM width");
  cmd->add_option("--head-units", cfg.head_units, "dense head width");
  cmd->add_option("--seed", cfg.seed, "master seed (weights and shuffling)");
  cmd->add_option("--world", cfg.world, "number of synchronous workers");
  cmd->add_option("--address", cfg.address, "rendezvous host:port");
  cmd->add_option("--timeout", cfg.timeout_s, "rendezvous timeout in seconds");
  cmd->add_flag("--frozen-shuffle", cfg.frozen_shuffle, "reuse the epoch-0 sample order");
  cmd->add_flag("--emit-rank-checkpoints", cfg.emit_rank_checkpoints,
                "every rank writes <out>.rank<r>");
}

void print_result(const srt::TrainResult& res) {
  for (const auto& r : res.epochs) {
    std::printf("epoch %zu: train_loss=%.9g val_loss=%.9g (%.2fs)\n", r.epoch, r.train_loss,
                r.val_loss, r.seconds);
  }
  std::printf("stop_reason=%s best_epoch=%zu best_val_loss=%.9g loop_seconds=%.3f\n",
              res.stop_reason.c_str(), res.best_epoch, res.best_val_loss, res.loop_seconds);
}

std::vector<srt::Layout> parse_layouts(const std::vector<std::string>& specs) {
  std::vector<srt::Layout> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(srt::Layout::parse(s));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"time-series surrogate training workbench"};
  app.require_subcommand(1);

  // --- gen ------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_out;
  std::size_t gen_cases = 16, gen_timesteps = 64, gen_cells = 256;
  std::uint64_t gen_seed = 1;
  double q1_lo = 0.1666, q1_hi = 0.3389, q2_lo = 0.3333, q2_hi = 0.4443;
  gen->add_option("--out", gen_out, "output dataset file")->required();
  gen->add_option("--cases", gen_cases, "number of cases");
  gen->add_option("--timesteps", gen_timesteps, "timesteps per case");
  gen->add_option("--cells", gen_cells, "cells per timestep");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--q1-lo", q1_lo, "lower end of the q1 sweep");
  gen->add_option("--q1-hi", q1_hi, "upper end of the q1 sweep");
  gen->add_option("--q2-lo", q2_lo, "lower end of the q2 sweep");
  gen->add_option("--q2-hi", q2_hi, "upper end of the q2 sweep");

  // --- train ----------------------------------------------------------
  auto* train = app.add_subcommand("train", "train a surrogate model");
  srt::TrainConfig tcfg;
  add_train_options(train, tcfg);
  train->set_config("--config", "", "read options from a key=value file");

  // --- worker (spawned by train when world > 1) -----------------------
  auto* worker = app.add_subcommand("worker", "run one synchronous training rank");
  srt::TrainConfig wcfg;
  add_train_options(worker, wcfg);
  worker->add_option("--rank", wcfg.rank, "this worker's rank")->required();

  // --- eval -----------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
  std::string ev_dataset, ev_ckpt, ev_prefix;
  std::size_t ev_bins = 64;
  eval->add_option("--dataset", ev_dataset, "dataset file")->required();
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--scatter-prefix", ev_prefix, "write <prefix>_t<i>.csv scatter files");
  eval->add_option("--bins", ev_bins, "histogram bins for the agreement score");

  // --- simulate -------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "link-cost model for one all-reduce");
  std::vector<std::string> sim_layouts;
  std::uint64_t sim_bytes = 0;
  bool sim_delta = false;
  srt::LinkCostModel cost;
  sim->add_option("--layouts", sim_layouts, "layouts as NxS (nodes x slots)")
      ->required()
      ->delimiter(',');
  sim->add_option("--bytes", sim_bytes, "gradient bytes exchanged per step")->required();
  sim->add_option("--intra-latency", cost.intra_latency, "seconds per intra-node hop");
  sim->add_option("--intra-per-byte", cost.intra_per_byte, "seconds per byte, intra-node");
  sim->add_option("--inter-latency", cost.inter_latency, "seconds per inter-node hop");
  sim->add_option("--inter-per-byte", cost.inter_per_byte, "seconds per byte, inter-node");
  sim->add_flag("--delta", sim_delta, "print the layout delta matrix instead");

  // --- bench ----------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "time epochs per configuration (measured or simulated)");
  srt::TrainConfig bcfg;
  std::string bench_mode = "measured";
  std::vector<std::size_t> bench_worlds{1, 2, 4};
  std::size_t bench_repeats = 3;
  std::vector<std::string> bench_layouts;
  std::size_t bench_samples = 0;
  std::uint64_t bench_bytes = 0;
  srt::LinkCostModel bench_cost;
  add_train_options(bench, bcfg);
  bench->get_option("--dataset")->required(false);
  bench->add_option("--mode", bench_mode, "measured or simulated")
      ->check(CLI::IsMember({"measured", "simulated"}));
  bench->add_option("--worlds", bench_worlds, "worker counts to measure")->delimiter(',');
  bench->add_option("--repeats", bench_repeats, "measured runs per configuration");
  bench->add_option("--layouts", bench_layouts, "simulated layouts as NxS")->delimiter(',');
  bench->add_option("--samples", bench_samples, "simulated samples per epoch");
  bench->add_option("--bytes", bench_bytes, "simulated gradient bytes per step");
  bench->add_option("--compute-per-sample", bench_cost.compute_per_sample,
                    "simulated seconds per training sample");
  bench->add_option("--intra-latency", bench_cost.intra_latency, "seconds per intra-node hop");
  bench->add_option("--intra-per-byte", bench_cost.intra_per_byte, "seconds per byte, intra-node");
  bench->add_option("--inter-latency", bench_cost.inter_latency, "seconds per inter-node hop");
  bench->add_option("--inter-per-byte", bench_cost.inter_per_byte, "seconds per byte, inter-node");
  bench->set_config("--config", "", "read options from a key=value file");

  // --- speedup --------------------------------------------------------
  auto* speed = app.add_subcommand("speedup", "turn a time series into speedup rows");
  std::vector<double> speed_times;
  std::vector<std::string> speed_labels;
  std::string speed_baseline;
  speed->add_option("--times", speed_times, "seconds in presentation order")
      ->required()
      ->delimiter(',');
  speed->add_option("--labels", speed_labels, "row labels (default: 1-based positions)")
      ->delimiter(',');
  speed->add_option("--baseline", speed_baseline, "baseline label (default: first row)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      srt::Dataset ds =
          srt::build_dataset(gen_cases, gen_cells, gen_timesteps, {q1_lo, q1_hi}, {q2_lo, q2_hi},
                             gen_seed);
      srt::normalize(ds);
      srt::write_dataset(ds, gen_out);
      const auto tr = ds.case_indexes(srt::Split::train).size();
      const auto va = ds.case_indexes(srt::Split::val).size();
      const auto te = ds.case_indexes(srt::Split::test).size();
      std::printf("wrote %s: %zu cases (%zu train, %zu val, %zu test), %zu timesteps, %zu cells\n",
                  gen_out.c_str(), ds.case_count(), tr, va, te, ds.timesteps(), ds.cells());
    } else if (train->parsed()) {
      print_result(srt::run_train(tcfg));
    } else if (worker->parsed()) {
      return srt::worker_entry(wcfg);
    } else if (eval->parsed()) {
      const srt::EvalReport rep = srt::evaluate(ev_dataset, ev_ckpt, ev_prefix, ev_bins);
      std::printf("test_cases=%zu\n", rep.test_cases);
      for (const auto& g : rep.groups) {
        std::printf("t=%zu n=%zu pearson=%.6f spearman=%.6f rmse=%.9g hist_r2=%.2f%%\n", g.t_index,
                    g.metrics.n, g.metrics.pearson, g.metrics.spearman, g.metrics.rmse,
                    g.metrics.hist_r2_pct);
      }
    } else if (sim->parsed()) {
      const auto layouts = parse_layouts(sim_layouts);
      if (sim_delta) {
        std::vector<srt::LayoutTiming> timings;
        for (const auto& l : layouts) {
          timings.push_back({l, srt::simulate_allreduce_time(l, sim_bytes, cost)});
        }
        const srt::DeltaMatrix m = srt::layout_delta_matrix(timings);
        std::printf("layout");
        for (const auto& l : m.layouts) std::printf(",%s", l.str().c_str());
        std::printf("\n");
        for (std::size_t i = 0; i < m.layouts.size(); ++i) {
          std::printf("%s", m.layouts[i].str().c_str());
          for (std::size_t j = 0; j < m.layouts.size(); ++j) {
            if (std::isnan(m.delta[i][j])) {
              std::printf(",");
            } else {
              std::printf(",%.2f", m.delta[i][j]);
            }
          }
          std::printf("\n");
        }
      } else {
        std::printf("layout,seconds\n");
        for (const auto& l : layouts) {
          std::printf("%s,%.9g\n", l.str().c_str(),
                      srt::simulate_allreduce_time(l, sim_bytes, cost));
        }
      }
    } else if (bench->parsed()) {
      std::vector<srt::TimedRun> avg;
      std::vector<double> t_min, t_max;
      if (bench_mode == "measured") {
        if (bcfg.dataset.empty()) throw srt::ConfigError("measured mode needs --dataset");
        if (bench_repeats == 0) throw srt::ConfigError("--repeats must be positive");
        for (const std::size_t w : bench_worlds) {
          srt::TrainConfig c = bcfg;
          c.world = w;
          c.out.clear();
          c.log_csv.clear();
          c.time_out.clear();
          double sum = 0.0, lo = 0.0, hi = 0.0;
          for (std::size_t rep = 0; rep < bench_repeats; ++rep) {
            const double s = srt::run_train(c).loop_seconds;
            sum += s;
            lo = rep == 0 ? s : std::min(lo, s);
            hi = rep == 0 ? s : std::max(hi, s);
          }
          avg.push_back({std::to_string(w), sum / static_cast<double>(bench_repeats)});
          t_min.push_back(lo);
          t_max.push_back(hi);
        }
      } else {
        if (bench_layouts.empty()) throw srt::ConfigError("simulated mode needs --layouts");
        for (const auto& l : parse_layouts(bench_layouts)) {
          const double s =
              srt::simulate_epoch_time(l, bench_samples, bcfg.batch, bench_bytes, bench_cost);
          avg.push_back({l.str(), s});
          t_min.push_back(s);
          t_max.push_back(s);
        }
      }
      std::printf("label,seconds,min,max,parallel,incremental\n");
      const auto rows = srt::speedup_table(avg, avg.front().label);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::printf("%s,%.9g,%.9g,%.9g,%.2f,%.2f\n", rows[i].label.c_str(), rows[i].seconds,
                    t_min[i], t_max[i], rows[i].parallel, rows[i].incremental);
      }
    } else if (speed->parsed()) {
      if (!speed_labels.empty() && speed_labels.size() != speed_times.size()) {
        throw srt::ConfigError("--labels must match --times in length");
      }
      std::vector<srt::TimedRun> runs;
      for (std::size_t i = 0; i < speed_times.size(); ++i) {
        const std::string label =
            speed_labels.empty() ? std::to_string(i + 1) : speed_labels[i];
        runs.push_back({label, speed_times[i]});
      }
      const std::string base = speed_baseline.empty() ? runs.front().label : speed_baseline;
      std::printf("label,seconds,parallel,incremental\n");
      for (const auto& row : srt::speedup_table(runs, base)) {
        std::printf("%s,%.9g,%.2f,%.2f\n", row.label.c_str(), row.seconds, row.parallel,
                    row.incremental);
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
