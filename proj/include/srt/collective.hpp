// SPDX-License-Identifier: Apache-2.0
#pragma once

// Process group over TCP stream sockets with a ring topology, plus the
// link-cost simulator used by the benchmark harness.
//
// Wire protocol: every message is one frame,
//   u32 magic | u32 opcode | u64 payload length | payload bytes
// all little-endian. Rendezvous: rank 0 listens on the advertised address;
// every other rank connects and sends JOIN carrying its rank and its own
// ring-accept endpoint. Once all ranks are present rank 0 answers each JOIN
// with the endpoint table, each rank connects to its successor
// (rank + 1 mod world), accepts its predecessor, and a barrier completes.
//
// ring_allreduce computes the element-wise mean over all ranks in
// 2(world-1) hops: a reduce pass 0 -> 1 -> ... -> world-1 in which the
// traveling message carries partial sums that are merged pairwise whenever
// the two newest partials cover the same number of ranks, then a broadcast
// pass world-1 -> 0 -> ... -> world-2 of the finished mean. The pairwise
// merge makes the per-entry reduction a balanced tree over rank order when
// world is a power of two, which is exactly the tree the trainer uses when
// it folds per-sample gradients; that alignment is what lets a distributed
// step reproduce the serial union-batch step bit for bit in f64 mode.
// Every rank receives the same finished bytes, so replicas stay identical.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "srt/error.hpp"

namespace srt {

// Process layout: nodes x slots-per-node, filled rank-major, so ranks
// [k * slots, (k+1) * slots) share node k. On a single host the node
// boundaries only affect the cost model and benchmark grouping.
struct Layout {
  std::size_t nodes = 1;
  std::size_t slots = 1;

  std::size_t world() const { return nodes * slots; }
  std::size_t node_of(std::size_t rank) const { return rank / slots; }
  std::string str() const { return std::to_string(nodes) + "x" + std::to_string(slots); }

  // Accepts "NxS", e.g. "2x4".
  static Layout parse(const std::string& text);

  bool operator==(const Layout&) const = default;
};

// Per-link-class costs in seconds (latency) and seconds per byte.
struct LinkCostModel {
  double intra_latency = 0.0;
  double intra_per_byte = 0.0;
  double inter_latency = 0.0;
  double inter_per_byte = 0.0;
  double compute_per_sample = 0.0;

  void validate() const {
    if (intra_latency < 0 || intra_per_byte < 0 || inter_latency < 0 || inter_per_byte < 0 ||
        compute_per_sample < 0) {
      throw ConfigError("link cost model: negative cost");
    }
    if (inter_per_byte < intra_per_byte || inter_latency < intra_latency) {
      throw ConfigError("link cost model: inter-node link must not be cheaper than intra-node");
    }
  }
};

// Cost of one all-reduce of `bytes` under the hop schedule above: the active
// hop of each of the 2(world-1) steps contributes its link-class latency
// plus (bytes / world) at the link-class byte cost. A single process costs 0.
double simulate_allreduce_time(const Layout& layout, std::uint64_t bytes,
                               const LinkCostModel& cost);

namespace detail {
struct GroupImpl;
}

class WorkerGroup {
 public:
  WorkerGroup();  // world 1, no sockets
  ~WorkerGroup();
  WorkerGroup(WorkerGroup&&) noexcept;
  WorkerGroup& operator=(WorkerGroup&&) noexcept;
  WorkerGroup(const WorkerGroup&) = delete;
  WorkerGroup& operator=(const WorkerGroup&) = delete;

  std::size_t rank() const { return rank_; }
  std::size_t world() const { return world_; }

  void barrier();

  // Element-wise mean across ranks, in place. Buffers must agree in length
  // across ranks; a mismatch is a protocol error naming both lengths.
  void allreduce_mean(std::span<float> data);
  void allreduce_mean(std::span<double> data);

 private:
  friend WorkerGroup rendezvous(std::size_t world, const std::string& address, std::size_t rank,
                                double timeout_s, const std::string& advertise_host);
  std::size_t rank_ = 0;
  std::size_t world_ = 1;
  std::unique_ptr<detail::GroupImpl> impl_;
};

// Joins a group of `world` ranks at "host:port". Rank 0 hosts the rendezvous
// on that address. Duplicate ranks are rejected; a missing peer surfaces as
// a timeout error after `timeout_s`. advertise_host is the address peers use
// to reach this rank's ring socket (the rendezvous host by default).
WorkerGroup rendezvous(std::size_t world, const std::string& address, std::size_t rank,
                       double timeout_s = 30.0, const std::string& advertise_host = "");

template <typename S>
void ring_allreduce(WorkerGroup& g, std::span<S> data) {
  g.allreduce_mean(data);
}

}  // namespace srt
