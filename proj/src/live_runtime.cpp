#include "psl/live_runtime.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

namespace psl {

namespace {

constexpr std::uint32_t kMaxFrame = 64u << 20;

bool write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0 && errno == EINTR) continue;
    if (w <= 0) return false;
    p += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    ssize_t r = ::recv(fd, p, n, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

void put_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v >> 24);
  p[1] = static_cast<std::uint8_t>(v >> 16);
  p[2] = static_cast<std::uint8_t>(v >> 8);
  p[3] = static_cast<std::uint8_t>(v);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

sockaddr_in make_addr(const Endpoint& ep) {
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &a.sin_addr) != 1) throw std::invalid_argument("bad IPv4 address: " + ep.host);
  return a;
}

}  // namespace

LiveRuntime::LiveRuntime(std::uint64_t seed, CostModel costs)
    : seed_(seed), costs_(costs), epoch_(std::chrono::steady_clock::now()) {}

LiveRuntime::~LiveRuntime() { stop(); }

void LiveRuntime::add(std::unique_ptr<Node> node) {
  node->bind(this);
  NodeId id = node->id();
  if (!nodes_.emplace(id, std::move(node)).second) throw std::invalid_argument("duplicate node id");
}

std::map<NodeId, Endpoint> LiveRuntime::listen(const std::map<NodeId, Endpoint>& requested) {
  std::map<NodeId, Endpoint> bound;
  for (const auto& [id, node] : nodes_) {
    Endpoint ep;
    if (auto it = requested.find(id); it != requested.end()) ep = it->second;
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in a = make_addr(ep);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0 || ::listen(fd, 64) != 0) {
      int err = errno;
      ::close(fd);
      throw std::runtime_error(std::string("bind/listen: ") + std::strerror(err));
    }
    socklen_t len = sizeof a;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
    ep.port = ntohs(a.sin_port);
    bound[id] = ep;
    addresses_[id] = ep;
    listen_fds_.push_back(fd);
    std::lock_guard lk(fds_mu_);
    threads_.emplace_back([this, fd] { accept_loop(fd); });
  }
  return bound;
}

void LiveRuntime::set_address(NodeId id, Endpoint ep) { addresses_[id] = std::move(ep); }

void LiveRuntime::start() {
  for (auto& [id, node] : nodes_) node->start();
}

SimTime LiveRuntime::now() const {
  return static_cast<SimTime>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - epoch_).count());
}

void LiveRuntime::accept_loop(int listen_fd) {
  while (!stopping_) {
    int fd = ::accept(listen_fd, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    std::lock_guard lk(fds_mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    conn_fds_.push_back(fd);
    threads_.emplace_back([this, fd] { receive_loop(fd); });
  }
}

void LiveRuntime::receive_loop(int fd) {
  std::uint8_t hello[8];
  if (!read_all(fd, hello, sizeof hello)) return;
  NodeId from = get_u32(hello);
  NodeId to = get_u32(hello + 4);
  if (nodes_.count(to) == 0) return;
  for (;;) {
    std::uint8_t hdr[4];
    if (!read_all(fd, hdr, sizeof hdr)) return;
    std::uint32_t len = get_u32(hdr);
    if (len > kMaxFrame) return;
    Bytes payload(len);
    if (len > 0 && !read_all(fd, payload.data(), len)) return;
    ++frames_in_;
    push({from, to, std::move(payload)});
  }
}

void LiveRuntime::push(Inbound in) {
  {
    std::lock_guard lk(mu_);
    inbound_.push_back(std::move(in));
  }
  cv_.notify_one();
}

int LiveRuntime::connect_to(NodeId from, NodeId to) {
  auto it = addresses_.find(to);
  if (it == addresses_.end()) return -1;
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  sockaddr_in a = make_addr(it->second);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) {
    ::close(fd);
    return -1;
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  std::uint8_t hello[8];
  put_u32(hello, from);
  put_u32(hello + 4, to);
  if (!write_all(fd, hello, sizeof hello)) {
    ::close(fd);
    return -1;
  }
  return fd;
}

void LiveRuntime::send(NodeId from, NodeId to, Payload frame) {
  if (nodes_.count(to) != 0) {
    push({from, to, *frame});
    return;
  }
  auto key = std::make_pair(from, to);
  auto it = outbound_.find(key);
  if (it == outbound_.end()) {
    int fd = connect_to(from, to);
    // Unreachable peers lose the frame; protocol retries cover it.
    if (fd < 0) return;
    it = outbound_.emplace(key, fd).first;
  }
  std::uint8_t hdr[4];
  put_u32(hdr, static_cast<std::uint32_t>(frame->size()));
  if (!write_all(it->second, hdr, sizeof hdr) || !write_all(it->second, frame->data(), frame->size())) {
    ::close(it->second);
    outbound_.erase(it);
    return;
  }
  ++frames_out_;
}

TimerId LiveRuntime::set_timer(NodeId owner, SimTime delay, std::function<void()> fn) {
  TimerId id = ++next_timer_;
  timers_[id] = {owner, std::move(fn)};
  timer_order_.emplace(now() + delay, id);
  return id;
}

void LiveRuntime::cancel_timer(TimerId id) { timers_.erase(id); }

bool LiveRuntime::run_until(const std::function<bool()>& done, SimTime timeout) {
  SimTime deadline = now() + timeout;
  while (!(done && done())) {
    SimTime t = now();
    if (t >= deadline) return false;
    // Due timers first, in deadline order.
    while (!timer_order_.empty() && timer_order_.begin()->first <= t) {
      TimerId id = timer_order_.begin()->second;
      timer_order_.erase(timer_order_.begin());
      auto it = timers_.find(id);
      if (it == timers_.end()) continue;
      auto fn = std::move(it->second.fn);
      timers_.erase(it);
      fn();
    }
    std::deque<Inbound> batch;
    {
      std::unique_lock lk(mu_);
      SimTime wake = deadline;
      if (!timer_order_.empty()) wake = std::min(wake, timer_order_.begin()->first);
      SimTime wait = wake > now() ? std::min<SimTime>(wake - now(), 10 * kMillis) : 0;
      cv_.wait_for(lk, std::chrono::microseconds(wait), [this] { return !inbound_.empty(); });
      batch.swap(inbound_);
    }
    for (auto& in : batch) {
      auto it = nodes_.find(in.to);
      if (it != nodes_.end()) it->second->receive(in.from, in.payload);
    }
  }
  return true;
}

void LiveRuntime::stop() {
  if (stopping_.exchange(true)) return;
  for (int fd : listen_fds_) {
    ::shutdown(fd, SHUT_RDWR);
    ::close(fd);
  }
  for (auto& [key, fd] : outbound_) ::close(fd);
  outbound_.clear();
  {
    std::lock_guard lk(fds_mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  // accept_loop may still append threads while we join; it checks stopping_
  // under fds_mu_ before doing so.
  for (std::size_t i = 0;; ++i) {
    std::thread t;
    {
      std::lock_guard lk(fds_mu_);
      if (i >= threads_.size()) break;
      t = std::move(threads_[i]);
    }
    if (t.joinable()) t.join();
  }
  std::lock_guard lk(fds_mu_);
  for (int fd : conn_fds_) ::close(fd);
  conn_fds_.clear();
}

}  // namespace psl
