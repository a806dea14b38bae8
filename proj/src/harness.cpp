// SPDX-License-Identifier: Apache-2.0
#include "srt/harness.hpp"

#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "srt/batching.hpp"
#include "srt/checkpoint.hpp"
#include "srt/datagen.hpp"
#include "srt/trainer.hpp"

namespace srt {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Shard-local validation loss folded in the training precision, then
// averaged across the group so every rank sees the identical number and the
// early-stop decision can never diverge between workers.
template <typename S>
double validation_loss(const ModelParams<S>& params, const GeneratorState& vg,
                       WorkerGroup& group) {
  const std::size_t nb = batches_per_epoch(vg);
  S sum = S(0);
  for (std::size_t k = 0; k < nb; ++k) {
    const MiniBatch<S> mb = gen_get_item<S>(vg, k);
    sum += batch_loss_sum(params, mb);
  }
  std::vector<S> buf{sum};
  group.allreduce_mean(std::span<S>(buf));
  return static_cast<double>(buf[0]) / static_cast<double>(nb * vg.batch);
}

template <typename S>
TrainResult train_loop(const TrainConfig& cfg, WorkerGroup& group, const Dataset& ds) {
  if (!ds.norm) {
    throw ConfigError("training requires a normalized dataset (stats trailer missing)");
  }
  if (cfg.epochs == 0) throw ConfigError("epochs must be positive");
  if (cfg.batch == 0 || cfg.window == 0 || cfg.horizon == 0) {
    throw ConfigError("batch, window and horizon must be positive");
  }
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg.patience == 0 || cfg.patience > cfg.epochs) {
    throw ConfigError("patience must lie in [1, epochs], got " + std::to_string(cfg.patience) +
                      " with " + std::to_string(cfg.epochs) + " epochs");
  }

  ModelDims dims;
  dims.flat_dim = ds.flat_dim();
  dims.window = cfg.window;
  dims.horizon = cfg.horizon;
  dims.encoder_units = cfg.encoder_units;
  dims.decoder_units = cfg.decoder_units;
  dims.head_units = cfg.head_units;

  ModelParams<S> params = init_params<S>(dims, cfg.seed);
  AdamState<S> opt = AdamState<S>::like(params, cfg.lr);

  GeneratorState tg = gen_init(ds, Split::train, cfg.batch, cfg.window, cfg.horizon, cfg.seed,
                               group.rank(), group.world(), cfg.frozen_shuffle);
  GeneratorState vg = gen_init(ds, Split::val, cfg.batch, cfg.window, cfg.horizon, cfg.seed,
                               group.rank(), group.world(), /*frozen=*/true);

  EarlyStopper stopper(cfg.patience);
  TrainResult res;
  const auto loop_start = Clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const std::size_t nb = batches_per_epoch(tg);
    double train_acc = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
      const MiniBatch<S> mb = gen_get_item<S>(tg, k);
      const StepStats st = train_step(params, opt, mb, &group);
      if (!std::isfinite(st.loss)) {
        throw Error("training diverged at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(k + 1) + " (loss is not finite)");
      }
      train_acc += st.loss;
    }
    gen_on_epoch_end(tg);

    const double val = validation_loss(params, vg, group);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_acc / static_cast<double>(nb);
    rec.val_loss = val;
    rec.seconds = seconds_since(epoch_start);
    res.epochs.push_back(rec);

    if (stopper.update(epoch, val)) {
      res.stop_reason = "early_stop";
      break;
    }
  }
  if (res.stop_reason.empty()) res.stop_reason = "completed";
  res.best_epoch = stopper.best_epoch();
  res.best_val_loss = stopper.best_loss();
  res.loop_seconds = seconds_since(loop_start);

  if (!cfg.out.empty()) {
    TrainingState<S> ts;
    ts.params = std::move(params);
    ts.opt = std::move(opt);
    ts.norm = *ds.norm;
    const CheckpointFile ck = pack_checkpoint(ts);
    if (group.rank() == 0) write_checkpoint(ck, cfg.out);
    if (cfg.emit_rank_checkpoints) {
      write_checkpoint(ck, cfg.out + ".rank" + std::to_string(group.rank()));
    }
  }

  if (group.rank() == 0) {
    if (!cfg.time_out.empty()) {
      FILE* f = std::fopen(cfg.time_out.c_str(), "w");
      if (f == nullptr) throw Error("cannot write timing file " + cfg.time_out);
      std::fprintf(f, "%.9g\n", res.loop_seconds);
      std::fclose(f);
    }
    if (!cfg.log_csv.empty()) save_training_log(cfg.log_csv, res);
  }
  return res;
}

TrainResult dispatch_train(const TrainConfig& cfg, WorkerGroup& group, const Dataset& ds) {
  if (cfg.precision == "f64") return train_loop<double>(cfg, group, ds);
  if (cfg.precision == "f32") return train_loop<float>(cfg, group, ds);
  throw ConfigError("precision must be f32 or f64, got '" + cfg.precision + "'");
}

pid_t spawn_worker(const std::string& exe, const TrainConfig& cfg, std::size_t rank) {
  std::vector<std::string> args = {exe,
                                   "worker",
                                   "--dataset",
                                   cfg.dataset,
                                   "--precision",
                                   cfg.precision,
                                   "--epochs",
                                   std::to_string(cfg.epochs),
                                   "--batch",
                                   std::to_string(cfg.batch),
                                   "--lr",
                                   fmt_double(cfg.lr),
                                   "--patience",
                                   std::to_string(cfg.patience),
                                   "--window",
                                   std::to_string(cfg.window),
                                   "--horizon",
                                   std::to_string(cfg.horizon),
                                   "--encoder-units",
                                   std::to_string(cfg.encoder_units),
                                   "--decoder-units",
                                   std::to_string(cfg.decoder_units),
                                   "--head-units",
                                   std::to_string(cfg.head_units),
                                   "--seed",
                                   std::to_string(cfg.seed),
                                   "--world",
                                   std::to_string(cfg.world),
                                   "--rank",
                                   std::to_string(rank),
                                   "--address",
                                   cfg.address,
                                   "--timeout",
                                   fmt_double(cfg.timeout_s)};
  if (cfg.frozen_shuffle) args.emplace_back("--frozen-shuffle");
  if (cfg.emit_rank_checkpoints) {
    args.emplace_back("--emit-rank-checkpoints");
    args.emplace_back("--out");
    args.emplace_back(cfg.out);
  }

  std::vector<char*> argv;
  argv.reserve(args.size() + 1);
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw Error("fork failed");
  if (pid == 0) {
    ::execv(exe.c_str(), argv.data());
    std::perror("execv");
    ::_exit(127);
  }
  return pid;
}

}  // namespace

std::uint16_t pick_free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error("socket failed");
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  sa.sin_port = 0;
  if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
    ::close(fd);
    throw Error("bind failed while picking a port");
  }
  socklen_t len = sizeof sa;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  const std::uint16_t port = ntohs(sa.sin_port);
  ::close(fd);
  return port;
}

std::string current_exe_path() {
  char buf[4096];
  const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) throw Error("cannot resolve the current executable path");
  return std::string(buf, static_cast<std::size_t>(n));
}

int worker_entry(const TrainConfig& cfg) {
  try {
    const Dataset ds = read_dataset(cfg.dataset);
    WorkerGroup group = rendezvous(cfg.world, cfg.address, cfg.rank, cfg.timeout_s);
    dispatch_train(cfg, group, ds);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "worker rank %zu: %s\n", cfg.rank, e.what());
    return 1;
  }
}

TrainResult run_train(const TrainConfig& cfg) {
  if (cfg.precision != "f32" && cfg.precision != "f64") {
    throw ConfigError("precision must be f32 or f64, got '" + cfg.precision + "'");
  }
  if (cfg.world == 0) throw ConfigError("world must be positive");
  const Dataset ds = read_dataset(cfg.dataset);

  if (cfg.world == 1) {
    WorkerGroup solo;
    return dispatch_train(cfg, solo, ds);
  }

  TrainConfig c = cfg;
  c.rank = 0;
  if (c.address.empty()) c.address = "127.0.0.1:" + std::to_string(pick_free_port());
  const std::string exe = c.worker_exe.empty() ? current_exe_path() : c.worker_exe;

  std::vector<pid_t> pids;
  pids.reserve(c.world - 1);
  for (std::size_t r = 1; r < c.world; ++r) pids.push_back(spawn_worker(exe, c, r));

  TrainResult res;
  std::exception_ptr err;
  try {
    WorkerGroup group = rendezvous(c.world, c.address, 0, c.timeout_s);
    res = dispatch_train(c, group, ds);
  } catch (...) {
    err = std::current_exception();
  }

  // Reap every worker; a failed rank 0 has already torn down its sockets,
  // which unblocks the others.
  std::string child_failure;
  for (std::size_t i = 0; i < pids.size(); ++i) {
    int status = 0;
    ::waitpid(pids[i], &status, 0);
    const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    if (!ok && child_failure.empty()) {
      child_failure = "worker rank " + std::to_string(i + 1) + " exited with status " +
                      std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1);
    }
  }
  if (err) std::rethrow_exception(err);
  if (!child_failure.empty()) throw CommError(child_failure);
  return res;
}

void save_training_log(const std::string& path, const TrainResult& result) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw Error("cannot write training log " + path);
  std::fprintf(f, "epoch,train_loss,val_loss,seconds\n");
  for (const auto& r : result.epochs) {
    std::fprintf(f, "%zu,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss, r.seconds);
  }
  std::fprintf(f, "# stop_reason=%s\n", result.stop_reason.c_str());
  std::fclose(f);
}

namespace {

template <typename S>
EvalReport eval_impl(const Dataset& ds, const CheckpointFile& ck, const std::string& prefix,
                     std::size_t bins) {
  const TrainingState<S> ts = unpack_checkpoint<S>(ck);
  const std::size_t W = ck.dims.window;
  const std::size_t F = ck.dims.flat_dim;
  const std::size_t T = ds.timesteps();

  const std::vector<std::size_t> slots = ds.case_indexes(Split::test);
  if (slots.empty()) throw ConfigError("dataset has no test cases");

  std::set<std::size_t> probe_set;
  for (std::size_t p : {std::size_t{10}, std::size_t{20}, T - 1}) {
    if (p >= W && p < T) probe_set.insert(p);
  }
  if (probe_set.empty()) {
    throw ConfigError("no probe timestep fits a series of length " + std::to_string(T));
  }

  EvalReport rep;
  rep.test_cases = slots.size();
  for (const std::size_t p : probe_set) {
    std::vector<double> cfd, ai;
    cfd.reserve(slots.size() * F);
    ai.reserve(slots.size() * F);
    for (const std::size_t slot : slots) {
      const Tensor<float>& field = ds.cases[slot].field;
      Tensor<S> win({W, F});
      for (std::size_t w = 0; w < W; ++w)
        for (std::size_t j = 0; j < F; ++j)
          win[w * F + j] = static_cast<S>(field[(p - W + w) * F + j]);
      const ForwardCache<S> fc = forward(ts.params, win);
      for (std::size_t j = 0; j < F; ++j) {
        const std::size_t comp = j % kComponents;
        ai.push_back(invert_norm(ts.norm, comp, static_cast<double>(fc.pred[j])));
        cfd.push_back(invert_norm(ts.norm, comp, static_cast<double>(field[p * F + j])));
      }
    }
    EvalGroup g;
    g.t_index = p;
    g.metrics = compute_report(cfd, ai, bins);
    rep.groups.push_back(g);
    if (!prefix.empty()) {
      scatter_export(cfd, ai, prefix + "_t" + std::to_string(p) + ".csv");
    }
  }
  return rep;
}

}  // namespace

EvalReport evaluate(const std::string& dataset_path, const std::string& checkpoint_path,
                    const std::string& scatter_prefix, std::size_t bins) {
  const Dataset ds = read_dataset(dataset_path);
  const CheckpointFile ck = read_checkpoint(checkpoint_path);
  if (ck.dims.flat_dim != ds.flat_dim()) {
    throw ConfigError("checkpoint expects " + std::to_string(ck.dims.flat_dim) +
                      " features, dataset provides " + std::to_string(ds.flat_dim()));
  }
  return ck.f64 ? eval_impl<double>(ds, ck, scatter_prefix, bins)
                : eval_impl<float>(ds, ck, scatter_prefix, bins);
}

std::vector<SpeedupRow> speedup_table(const std::vector<TimedRun>& times,
                                      const std::string& baseline) {
  if (times.empty()) throw ConfigError("speedup_table: no timings given");
  double t_base = 0.0;
  for (const auto& r : times) {
    if (!(r.seconds > 0.0)) {
      throw ConfigError("speedup_table: timing for '" + r.label + "' must be positive");
    }
    if (r.label == baseline) t_base = r.seconds;
  }
  if (t_base == 0.0) throw ConfigError("speedup_table: baseline '" + baseline + "' not present");

  std::vector<SpeedupRow> rows(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    rows[i].label = times[i].label;
    rows[i].seconds = times[i].seconds;
    rows[i].parallel = t_base / times[i].seconds;
    rows[i].incremental = i == 0 ? 1.0 : times[i - 1].seconds / times[i].seconds;
  }
  return rows;
}

DeltaMatrix layout_delta_matrix(const std::vector<LayoutTiming>& timings) {
  std::map<std::string, double> seen;
  std::map<std::size_t, std::size_t> per_world;
  for (const auto& lt : timings) {
    if (!seen.emplace(lt.layout.str(), lt.seconds).second) {
      throw ConfigError("duplicate timing for layout " + lt.layout.str());
    }
    if (!(lt.seconds > 0.0)) throw ConfigError("layout " + lt.layout.str() + " has no time");
    per_world[lt.layout.world()] += 1;
  }
  for (const auto& [world, count] : per_world) {
    if (count < 2) {
      throw ConfigError("world size " + std::to_string(world) +
                        " has no comparison partner (one layout only)");
    }
  }

  DeltaMatrix m;
  const std::size_t n = timings.size();
  m.delta.assign(n, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
  for (const auto& lt : timings) m.layouts.push_back(lt.layout);
  for (std::size_t i = 0; i < n; ++i) {
    m.delta[i][i] = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || timings[i].layout.world() != timings[j].layout.world()) continue;
      m.delta[i][j] = 100.0 * (timings[j].seconds - timings[i].seconds) / timings[j].seconds;
    }
  }
  return m;
}

double simulate_epoch_time(const Layout& layout, std::size_t samples, std::size_t batch,
                           std::uint64_t grad_bytes, const LinkCostModel& cost) {
  cost.validate();
  if (batch == 0) throw ConfigError("simulate_epoch_time: batch must be positive");
  const std::size_t world = layout.world();
  const std::size_t steps = samples / (batch * world);
  if (steps == 0) {
    throw ConfigError("simulate_epoch_time: " + std::to_string(samples) +
                      " samples cannot fill one step of " + std::to_string(batch * world));
  }
  const double per_step = static_cast<double>(batch) * cost.compute_per_sample +
                          (world > 1 ? simulate_allreduce_time(layout, grad_bytes, cost) : 0.0);
  return static_cast<double>(steps) * per_step;
}

}  // namespace srt
