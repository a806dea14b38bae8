// SPDX-License-Identifier: Apache-2.0
#include "srt/collective.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include "srt/bytes.hpp"

namespace srt {

Layout Layout::parse(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos || x == 0 || x + 1 >= text.size()) {
    throw ConfigError("layout: expected NxS, got '" + text + "'");
  }
  Layout l;
  try {
    l.nodes = std::stoul(text.substr(0, x));
    l.slots = std::stoul(text.substr(x + 1));
  } catch (const std::exception&) {
    throw ConfigError("layout: expected NxS, got '" + text + "'");
  }
  if (l.nodes == 0 || l.slots == 0) throw ConfigError("layout: zero extent in '" + text + "'");
  return l;
}

double simulate_allreduce_time(const Layout& layout, std::uint64_t bytes,
                               const LinkCostModel& cost) {
  cost.validate();
  if (bytes == 0) throw ConfigError("simulate_allreduce_time: bytes must be positive");
  const std::size_t world = layout.world();
  if (world == 1) return 0.0;

  const double chunk = static_cast<double>(bytes) / static_cast<double>(world);
  auto hop = [&](std::size_t from, std::size_t to) {
    const bool intra = layout.node_of(from) == layout.node_of(to);
    return intra ? cost.intra_latency + chunk * cost.intra_per_byte
                 : cost.inter_latency + chunk * cost.inter_per_byte;
  };

  double t = 0.0;
  // Reduce pass along the chain, then broadcast around the wrap link.
  for (std::size_t r = 0; r + 1 < world; ++r) t += hop(r, r + 1);
  t += hop(world - 1, 0);
  for (std::size_t r = 0; r + 2 < world; ++r) t += hop(r, r + 1);
  return t;
}

namespace detail {

namespace {

constexpr std::uint32_t kMagic = 0x53525401;  // "\x01TRS" on the wire

enum Opcode : std::uint32_t {
  kJoin = 1,
  kJoinAck = 2,
  kJoinReject = 3,
  kHello = 4,
  kReduce = 5,
  kBcast = 6,
  kBarrier = 7,
  kBarrierAck = 8,
};

using Clock = std::chrono::steady_clock;

struct Deadline {
  Clock::time_point end;
  explicit Deadline(double seconds)
      : end(Clock::now() + std::chrono::microseconds(static_cast<long long>(seconds * 1e6))) {}
  double remaining_s() const {
    return std::chrono::duration<double>(end - Clock::now()).count();
  }
  bool expired() const { return Clock::now() >= end; }
};

[[noreturn]] void comm_fail(const std::string& msg) { throw CommError(msg); }

}  // namespace

// Minimal RAII socket. All I/O is full-length (send_all / recv_all) and any
// short read means the peer went away.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { reset(); }
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }

  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void set_recv_timeout(double seconds) const {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(seconds);
    tv.tv_usec = static_cast<suseconds_t>((seconds - static_cast<double>(tv.tv_sec)) * 1e6);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }

  void send_all(const void* data, std::size_t n, const std::string& peer) const {
    const char* p = static_cast<const char*>(data);
    while (n > 0) {
      const ssize_t k = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (k <= 0) {
        if (k < 0 && errno == EINTR) continue;
        comm_fail("send to " + peer + " failed: " +
                  (k < 0 ? std::strerror(errno) : "connection closed"));
      }
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }

  void recv_all(void* data, std::size_t n, const std::string& peer) const {
    char* p = static_cast<char*>(data);
    while (n > 0) {
      const ssize_t k = ::recv(fd_, p, n, 0);
      if (k == 0) comm_fail("peer " + peer + " disconnected");
      if (k < 0) {
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) comm_fail("receive from " + peer + " timed out");
        comm_fail("receive from " + peer + " failed: " + std::strerror(errno));
      }
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }

 private:
  int fd_ = -1;
};

namespace {

void send_frame(const Socket& s, std::uint32_t opcode, const std::vector<unsigned char>& payload,
                const std::string& peer) {
  std::vector<unsigned char> head;
  put_u32le(head, kMagic);
  put_u32le(head, opcode);
  put_u64le(head, payload.size());
  s.send_all(head.data(), head.size(), peer);
  if (!payload.empty()) s.send_all(payload.data(), payload.size(), peer);
}

struct Frame {
  std::uint32_t opcode = 0;
  std::vector<unsigned char> payload;
};

Frame recv_frame(const Socket& s, const std::string& peer, std::uint64_t max_len = 1ull << 33) {
  unsigned char head[16];
  s.recv_all(head, sizeof head, peer);
  if (get_u32le(head) != kMagic) {
    throw ProtocolError("bad frame magic from " + peer);
  }
  Frame f;
  f.opcode = get_u32le(head + 4);
  const std::uint64_t len = get_u64le(head + 8);
  if (len > max_len) {
    throw ProtocolError("oversized frame (" + std::to_string(len) + " bytes) from " + peer);
  }
  f.payload.resize(len);
  if (len > 0) s.recv_all(f.payload.data(), len, peer);
  return f;
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  const std::string h = host == "localhost" || host.empty() ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &sa.sin_addr) != 1) {
    throw ConfigError("address: cannot parse IPv4 host '" + host + "'");
  }
  return sa;
}

std::pair<std::string, std::uint16_t> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 >= address.size()) {
    throw ConfigError("address: expected host:port, got '" + address + "'");
  }
  const int port = std::stoi(address.substr(colon + 1));
  if (port <= 0 || port > 65535) throw ConfigError("address: bad port in '" + address + "'");
  return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

Socket listen_on(const std::string& host, std::uint16_t port, std::uint16_t* bound_port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) comm_fail(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa = make_addr(host, port);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
    comm_fail("bind " + host + ":" + std::to_string(port) + " failed: " + std::strerror(errno));
  }
  if (::listen(s.fd(), 64) != 0) comm_fail(std::string("listen: ") + std::strerror(errno));
  if (bound_port) {
    sockaddr_in got{};
    socklen_t len = sizeof got;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&got), &len);
    *bound_port = ntohs(got.sin_port);
  }
  return s;
}

Socket accept_with_deadline(const Socket& listener, const Deadline& dl, const std::string& what) {
  while (true) {
    const double rem = dl.remaining_s();
    if (rem <= 0) comm_fail("timed out waiting for " + what);
    pollfd pf{listener.fd(), POLLIN, 0};
    const int r = ::poll(&pf, 1, static_cast<int>(rem * 1000) + 1);
    if (r < 0 && errno != EINTR) comm_fail(std::string("poll: ") + std::strerror(errno));
    if (r > 0) {
      const int fd = ::accept(listener.fd(), nullptr, nullptr);
      if (fd >= 0) {
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return Socket(fd);
      }
      if (errno != EINTR) comm_fail(std::string("accept: ") + std::strerror(errno));
    }
  }
}

Socket connect_with_deadline(const std::string& host, std::uint16_t port, const Deadline& dl,
                             const std::string& what) {
  const sockaddr_in sa = make_addr(host, port);
  while (true) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) comm_fail(std::string("socket: ") + std::strerror(errno));
    if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) == 0) {
      const int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return s;
    }
    if (dl.expired()) {
      comm_fail("timed out connecting to " + what + " at " + host + ":" + std::to_string(port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

}  // namespace

struct GroupImpl {
  Socket to_succ;    // writes travel rank -> rank+1 (and world-1 -> 0)
  Socket from_pred;  // reads arrive from rank-1 (and 0 reads from world-1)
  std::string succ_name;
  std::string pred_name;
};

}  // namespace detail

WorkerGroup::WorkerGroup() = default;
WorkerGroup::~WorkerGroup() = default;
WorkerGroup::WorkerGroup(WorkerGroup&&) noexcept = default;
WorkerGroup& WorkerGroup::operator=(WorkerGroup&&) noexcept = default;

WorkerGroup rendezvous(std::size_t world, const std::string& address, std::size_t rank,
                       double timeout_s, const std::string& advertise_host) {
  using namespace detail;
  if (world == 0 || rank >= world) {
    throw ConfigError("rendezvous: rank " + std::to_string(rank) + " outside world " +
                      std::to_string(world));
  }
  WorkerGroup g;
  g.rank_ = rank;
  g.world_ = world;
  if (world == 1) return g;

  const Deadline dl(timeout_s);
  const auto [rdv_host, rdv_port] = split_address(address);
  const std::string my_host = advertise_host.empty() ? std::string("127.0.0.1") : advertise_host;

  // Every rank opens its ring-accept socket first so the endpoint can be
  // advertised during the join.
  std::uint16_t ring_port = 0;
  Socket ring_listener = listen_on("0.0.0.0", 0, &ring_port);

  std::vector<std::string> hosts(world);
  std::vector<std::uint16_t> ports(world, 0);
  hosts[rank] = my_host;
  ports[rank] = ring_port;

  if (rank == 0) {
    Socket listener = listen_on(rdv_host, rdv_port, nullptr);
    std::vector<Socket> joined(world);
    std::size_t present = 1;
    while (present < world) {
      Socket conn = accept_with_deadline(
          listener, dl, std::to_string(world - present) + " more ranks at rendezvous");
      conn.set_recv_timeout(std::max(dl.remaining_s(), 0.01));
      Frame f = recv_frame(conn, "joining worker");
      if (f.opcode != kJoin || f.payload.size() < 24) {
        throw ProtocolError("rendezvous: expected JOIN frame, got opcode " +
                            std::to_string(f.opcode));
      }
      const std::uint64_t jr = get_u64le(f.payload.data());
      const std::uint64_t jport = get_u64le(f.payload.data() + 8);
      const std::uint64_t hlen = get_u64le(f.payload.data() + 16);
      if (f.payload.size() != 24 + hlen) {
        throw ProtocolError("rendezvous: JOIN length mismatch: frame has " +
                            std::to_string(f.payload.size()) + " bytes, header implies " +
                            std::to_string(24 + hlen));
      }
      std::vector<unsigned char> reject;
      if (jr >= world) {
        std::string msg = "rank " + std::to_string(jr) + " outside world " + std::to_string(world);
        put_u64le(reject, msg.size());
        reject.insert(reject.end(), msg.begin(), msg.end());
        send_frame(conn, kJoinReject, reject, "joining worker");
        continue;
      }
      if (jr == 0 || joined[jr].valid()) {
        std::string msg = "duplicate rank " + std::to_string(jr);
        put_u64le(reject, msg.size());
        reject.insert(reject.end(), msg.begin(), msg.end());
        send_frame(conn, kJoinReject, reject, "joining worker");
        continue;
      }
      hosts[jr].assign(f.payload.begin() + 24, f.payload.end());
      ports[jr] = static_cast<std::uint16_t>(jport);
      joined[jr] = std::move(conn);
      ++present;
    }
    // Everyone is here; hand each worker the endpoint table.
    std::vector<unsigned char> table;
    put_u64le(table, world);
    for (std::size_t r = 0; r < world; ++r) {
      put_u64le(table, ports[r]);
      put_u64le(table, hosts[r].size());
      table.insert(table.end(), hosts[r].begin(), hosts[r].end());
    }
    for (std::size_t r = 1; r < world; ++r) {
      send_frame(joined[r], kJoinAck, table, "rank " + std::to_string(r));
    }
  } else {
    Socket conn = connect_with_deadline(rdv_host, rdv_port, dl, "rendezvous");
    conn.set_recv_timeout(std::max(dl.remaining_s(), 0.01));
    std::vector<unsigned char> join;
    put_u64le(join, rank);
    put_u64le(join, ring_port);
    put_u64le(join, my_host.size());
    join.insert(join.end(), my_host.begin(), my_host.end());
    send_frame(conn, kJoin, join, "rendezvous");
    Frame f = recv_frame(conn, "rendezvous");
    if (f.opcode == kJoinReject) {
      const std::string why = f.payload.size() > 8
                                  ? std::string(f.payload.begin() + 8, f.payload.end())
                                  : std::string("no reason given");
      comm_fail("rendezvous rejected rank " + std::to_string(rank) + ": " + why);
    }
    if (f.opcode != kJoinAck) {
      throw ProtocolError("rendezvous: expected JOIN_ACK, got opcode " + std::to_string(f.opcode));
    }
    std::size_t off = 0;
    const std::uint64_t w = get_u64le(f.payload.data());
    off += 8;
    if (w != world) {
      throw ProtocolError("rendezvous: table is for world " + std::to_string(w) + ", expected " +
                          std::to_string(world));
    }
    for (std::size_t r = 0; r < world; ++r) {
      ports[r] = static_cast<std::uint16_t>(get_u64le(f.payload.data() + off));
      const std::uint64_t hlen = get_u64le(f.payload.data() + off + 8);
      hosts[r].assign(f.payload.begin() + static_cast<long>(off) + 16,
                      f.payload.begin() + static_cast<long>(off) + 16 + static_cast<long>(hlen));
      off += 16 + hlen;
    }
  }

  // Ring wiring: connect forward, accept backward, verify identities.
  const std::size_t succ = (rank + 1) % world;
  const std::size_t pred = (rank + world - 1) % world;
  auto impl = std::make_unique<detail::GroupImpl>();
  impl->succ_name = "rank " + std::to_string(succ);
  impl->pred_name = "rank " + std::to_string(pred);

  impl->to_succ = connect_with_deadline(hosts[succ], ports[succ], dl, impl->succ_name);
  std::vector<unsigned char> hello;
  put_u64le(hello, rank);
  send_frame(impl->to_succ, kHello, hello, impl->succ_name);

  impl->from_pred = accept_with_deadline(ring_listener, dl, "ring link from " + impl->pred_name);
  impl->from_pred.set_recv_timeout(std::max(dl.remaining_s(), 0.01));
  Frame hf = recv_frame(impl->from_pred, impl->pred_name);
  if (hf.opcode != kHello || hf.payload.size() != 8 || get_u64le(hf.payload.data()) != pred) {
    throw ProtocolError("ring link: expected HELLO from " + impl->pred_name);
  }

  // Settle into the long data-phase timeout and confirm the full ring.
  impl->from_pred.set_recv_timeout(600.0);
  g.impl_ = std::move(impl);
  g.barrier();
  return g;
}

void WorkerGroup::barrier() {
  using namespace detail;
  if (world_ == 1) return;
  const std::vector<unsigned char> empty;
  // Two trips of a token around the ring: the first proves every rank
  // arrived, the second releases every rank.
  for (std::uint32_t op : {kBarrier, kBarrierAck}) {
    if (rank_ == 0) {
      send_frame(impl_->to_succ, op, empty, impl_->succ_name);
      Frame f = recv_frame(impl_->from_pred, impl_->pred_name);
      if (f.opcode != op) throw ProtocolError("barrier: unexpected opcode");
    } else {
      Frame f = recv_frame(impl_->from_pred, impl_->pred_name);
      if (f.opcode != op) throw ProtocolError("barrier: unexpected opcode");
      send_frame(impl_->to_succ, op, empty, impl_->succ_name);
    }
  }
}

namespace detail {

namespace {

// One partial sum plus the number of rank contributions folded into it.
template <typename S>
struct Partial {
  std::uint64_t weight;
  std::vector<S> sum;
};

template <typename S>
void push_and_merge(std::vector<Partial<S>>& stack, std::vector<S> own) {
  stack.push_back({1, std::move(own)});
  while (stack.size() >= 2 && stack[stack.size() - 2].weight == stack.back().weight) {
    auto& a = stack[stack.size() - 2];
    auto& b = stack.back();
    for (std::size_t i = 0; i < a.sum.size(); ++i) a.sum[i] += b.sum[i];
    a.weight *= 2;
    stack.pop_back();
  }
}

template <typename S>
std::vector<unsigned char> encode_stack(const std::vector<Partial<S>>& stack, std::size_t n) {
  std::vector<unsigned char> out;
  put_u64le(out, sizeof(S));
  put_u64le(out, n);
  put_u64le(out, stack.size());
  for (const auto& p : stack) {
    put_u64le(out, p.weight);
    const auto* raw = reinterpret_cast<const unsigned char*>(p.sum.data());
    out.insert(out.end(), raw, raw + n * sizeof(S));
  }
  return out;
}

template <typename S>
std::vector<Partial<S>> decode_stack(const std::vector<unsigned char>& payload, std::size_t n,
                                     const std::string& peer) {
  if (payload.size() < 24) throw ProtocolError("reduce frame from " + peer + " is too short");
  const std::uint64_t dsize = get_u64le(payload.data());
  const std::uint64_t nelems = get_u64le(payload.data() + 8);
  const std::uint64_t nparts = get_u64le(payload.data() + 16);
  if (dsize != sizeof(S)) {
    throw ProtocolError("reduce frame from " + peer + " carries " + std::to_string(dsize * 8) +
                        "-bit scalars, local buffer is " + std::to_string(sizeof(S) * 8) + "-bit");
  }
  if (nelems != n) {
    throw ProtocolError("length mismatch: " + peer + " sent " + std::to_string(nelems) +
                        " elements, local buffer has " + std::to_string(n));
  }
  const std::size_t per = 8 + n * sizeof(S);
  if (payload.size() != 24 + nparts * per) {
    throw ProtocolError("reduce frame from " + peer + " has inconsistent length");
  }
  std::vector<Partial<S>> stack(nparts);
  std::size_t off = 24;
  for (auto& p : stack) {
    p.weight = get_u64le(payload.data() + off);
    p.sum.resize(n);
    std::memcpy(p.sum.data(), payload.data() + off + 8, n * sizeof(S));
    off += per;
  }
  return stack;
}

// Mean over ranks. Reduce pass 0 -> world-1 folds contributions in rank
// order with pairwise merging; the last rank finishes, divides by world and
// broadcasts the result bytes verbatim around the wrap link, so every rank
// deserializes the identical buffer.
template <typename S>
void allreduce_impl(GroupImpl& impl, std::size_t rank, std::size_t world, std::span<S> data) {
  const std::size_t n = data.size();
  std::vector<S> own(data.begin(), data.end());

  if (rank == 0) {
    std::vector<Partial<S>> stack;
    push_and_merge(stack, std::move(own));
    send_frame(impl.to_succ, kReduce, encode_stack(stack, n), impl.succ_name);
  } else {
    Frame f = recv_frame(impl.from_pred, impl.pred_name);
    if (f.opcode != kReduce) {
      throw ProtocolError("allreduce: expected reduce frame from " + impl.pred_name);
    }
    auto stack = decode_stack<S>(f.payload, n, impl.pred_name);
    push_and_merge(stack, std::move(own));
    if (rank + 1 < world) {
      send_frame(impl.to_succ, kReduce, encode_stack(stack, n), impl.succ_name);
    } else {
      // Collapse whatever is left bottom-up (a no-op when world is a power
      // of two), then divide once for the mean.
      std::vector<S> total = std::move(stack[0].sum);
      for (std::size_t k = 1; k < stack.size(); ++k)
        for (std::size_t i = 0; i < n; ++i) total[i] += stack[k].sum[i];
      const S inv = S(1) / static_cast<S>(world);
      for (std::size_t i = 0; i < n; ++i) total[i] *= inv;

      std::vector<unsigned char> out;
      put_u64le(out, sizeof(S));
      put_u64le(out, n);
      const auto* raw = reinterpret_cast<const unsigned char*>(total.data());
      out.insert(out.end(), raw, raw + n * sizeof(S));
      send_frame(impl.to_succ, kBcast, out, impl.succ_name);
      std::memcpy(data.data(), total.data(), n * sizeof(S));
      return;
    }
  }

  Frame f = recv_frame(impl.from_pred, impl.pred_name);
  if (f.opcode != kBcast) {
    throw ProtocolError("allreduce: expected broadcast frame from " + impl.pred_name);
  }
  if (f.payload.size() != 16 + n * sizeof(S) || get_u64le(f.payload.data()) != sizeof(S) ||
      get_u64le(f.payload.data() + 8) != n) {
    throw ProtocolError("length mismatch: broadcast from " + impl.pred_name + " does not carry " +
                        std::to_string(n) + " local elements");
  }
  if (rank + 2 < world) {
    send_frame(impl.to_succ, kBcast, f.payload, impl.succ_name);
  }
  std::memcpy(data.data(), f.payload.data() + 16, n * sizeof(S));
}

}  // namespace

}  // namespace detail

void WorkerGroup::allreduce_mean(std::span<float> data) {
  if (world_ == 1) return;
  detail::allreduce_impl<float>(*impl_, rank_, world_, data);
}

void WorkerGroup::allreduce_mean(std::span<double> data) {
  if (world_ == 1) return;
  detail::allreduce_impl<double>(*impl_, rank_, world_, data);
}

}  // namespace srt
