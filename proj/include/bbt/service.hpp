// Loopback-friendly TCP service exposing the toy model behind the wire
// protocol: 4-byte LE length prefix, then one message body per frame. The
// server is stateless per request and keeps a byte-exact traffic ledger.
#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bbt/model.hpp"
#include "bbt/optimizer.hpp"
#include "bbt/wire.hpp"

namespace bbt {

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class TrafficLedger {
 public:
  void add_up(uint64_t n) { up_.fetch_add(n, std::memory_order_relaxed); }
  void add_down(uint64_t n) { down_.fetch_add(n, std::memory_order_relaxed); }
  void add_request() { requests_.fetch_add(1, std::memory_order_relaxed); }
  uint64_t upload_bytes() const { return up_.load(); }
  uint64_t download_bytes() const { return down_.load(); }
  uint64_t requests() const { return requests_.load(); }

 private:
  std::atomic<uint64_t> up_{0}, down_{0}, requests_{0};
};

namespace net {

inline void send_all(int fd, const uint8_t* data, size_t n) {
  size_t off = 0;
  while (off < n) {
    const ssize_t w = ::send(fd, data + off, n - off, MSG_NOSIGNAL);
    if (w <= 0) throw TransportError("send failed");
    off += static_cast<size_t>(w);
  }
}

// Returns false on clean EOF at a frame boundary.
inline bool recv_all(int fd, uint8_t* data, size_t n, bool eof_ok) {
  size_t off = 0;
  while (off < n) {
    const ssize_t r = ::recv(fd, data + off, n - off, 0);
    if (r == 0) {
      if (off == 0 && eof_ok) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (r < 0) throw TransportError("recv failed");
    off += static_cast<size_t>(r);
  }
  return true;
}

// Length prefix and body go out in one send so small frames are not split
// across segments (splitting triggers Nagle / delayed-ACK stalls).
inline void write_frame(int fd, const std::vector<uint8_t>& body) {
  const uint32_t n = static_cast<uint32_t>(body.size());
  std::vector<uint8_t> frame(4 + body.size());
  for (int i = 0; i < 4; ++i) frame[i] = static_cast<uint8_t>(n >> (8 * i));
  std::memcpy(frame.data() + 4, body.data(), body.size());
  send_all(fd, frame.data(), frame.size());
}

inline bool read_frame(int fd, std::vector<uint8_t>& body, bool eof_ok) {
  uint8_t len[4];
  if (!recv_all(fd, len, 4, eof_ok)) return false;
  uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<uint32_t>(len[i]) << (8 * i);
  if (n > (64u << 20)) throw TransportError("oversized frame");
  body.resize(n);
  recv_all(fd, body.data(), n, false);
  return true;
}

inline size_t frame_bytes(const std::vector<uint8_t>& body) {
  return body.size() + 4;
}

}  // namespace net

class Server {
 public:
  // port 0 binds an ephemeral port; call port() after start().
  Server(const ToyModel& model, const std::string& host = "127.0.0.1",
         uint16_t port = 0)
      : model_(model), host_(host), port_(port) {}

  ~Server() { stop(); }

  void start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError("socket failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1)
      throw TransportError("bad bind address " + host_);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
      throw TransportError("bind failed on " + host_);
    if (::listen(listen_fd_, 64) < 0) throw TransportError("listen failed");
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> threads;
    {
      std::lock_guard<std::mutex> lk(conn_mu_);
      for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
      threads.swap(conn_threads_);
    }
    for (auto& t : threads)
      if (t.joinable()) t.join();
  }

  uint16_t port() const { return port_; }
  const TrafficLedger& ledger() const { return ledger_; }

 private:
  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (!running_) break;
        continue;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard<std::mutex> lk(conn_mu_);
      conn_fds_.push_back(fd);
      conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
  }

  void serve_connection(int fd) {
    std::vector<uint8_t> body;
    try {
      while (running_ && net::read_frame(fd, body, true)) {
        ledger_.add_up(net::frame_bytes(body));
        ledger_.add_request();
        std::vector<uint8_t> reply = handle(body);
        ledger_.add_down(net::frame_bytes(reply));
        net::write_frame(fd, reply);
      }
    } catch (const TransportError&) {
      // peer went away; nothing to do
    }
    {
      std::lock_guard<std::mutex> lk(conn_mu_);
      for (auto it = conn_fds_.begin(); it != conn_fds_.end(); ++it)
        if (*it == fd) {
          conn_fds_.erase(it);
          break;
        }
    }
    ::close(fd);
  }

  std::vector<uint8_t> handle(const std::vector<uint8_t>& body) {
    uint32_t request_id = 0;
    try {
      switch (wire::peek_kind(body)) {
        case wire::MsgKind::InferRequest: {
          const wire::InferenceRequest req = wire::decode_request(body);
          request_id = req.request_id;
          return handle_infer(req);
        }
        case wire::MsgKind::StatsRequest: {
          const wire::StatsRequest req = wire::decode_stats_request(body);
          request_id = req.request_id;
          return handle_stats(req);
        }
        default:
          throw wire::WireError("unexpected message kind");
      }
    } catch (const std::exception& e) {
      return wire::encode_error(
          wire::ErrorMsg{request_id, 1, std::string(e.what())});
    }
  }

  std::vector<uint8_t> handle_infer(const wire::InferenceRequest& req) {
    const ModelConfig& cfg = model_.config();
    Batch b;
    b.batch = static_cast<int>(req.batch);
    b.seqlen = static_cast<int>(req.seqlen);
    b.ids = req.input_ids;
    b.attention_mask = req.attention_mask;
    b.mask_pos = req.mask_positions;
    b.label_words = req.label_words;

    DeepPrompt prompt;
    const DeepPrompt* pptr = nullptr;
    if (req.prompt_kind != wire::PromptKind::None) {
      if (static_cast<int>(req.prompt_len) != cfg.prompt_len ||
          static_cast<int>(req.prompt_dim) != cfg.hidden)
        throw wire::WireError("prompt shape does not match served model");
      const int layers = static_cast<int>(req.prompt_layers);
      for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXf m(cfg.prompt_len, cfg.hidden);
        const float* src =
            req.prompt.data() + static_cast<size_t>(l) * cfg.prompt_len * cfg.hidden;
        for (int i = 0; i < cfg.prompt_len; ++i)
          for (int j = 0; j < cfg.hidden; ++j) m(i, j) = src[i * cfg.hidden + j];
        prompt.offsets.push_back(std::move(m));
      }
      pptr = &prompt;
    }

    const Eigen::MatrixXf logits = model_.forward(pptr, b);
    wire::InferenceResponse resp;
    resp.request_id = req.request_id;
    resp.batch = req.batch;
    resp.classes = static_cast<uint32_t>(logits.cols());
    for (int i = 0; i < logits.rows(); ++i)
      for (int j = 0; j < logits.cols(); ++j) resp.logits.push_back(logits(i, j));
    return wire::encode_response(resp);
  }

  std::vector<uint8_t> handle_stats(const wire::StatsRequest& req) {
    Batch b;
    b.batch = static_cast<int>(req.batch);
    b.seqlen = static_cast<int>(req.seqlen);
    b.ids = req.input_ids;
    b.attention_mask = req.attention_mask;
    b.mask_pos.assign(req.batch, 0);
    b.label_words = {0};  // unused by the statistics pass
    const auto stats =
        model_.hidden_stats(b, static_cast<int>(req.clip_rounds));
    wire::StatsResponse resp;
    resp.request_id = req.request_id;
    for (const auto& s : stats) resp.layer_stats.emplace_back(s.mu_hat, s.sigma_hat);
    return wire::encode_stats_response(resp);
  }

  const ToyModel& model_;
  std::string host_;
  uint16_t port_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex conn_mu_;
  std::vector<std::thread> conn_threads_;
  std::vector<int> conn_fds_;
  TrafficLedger ledger_;
};

// EvalApi whose evaluations travel over the wire. One persistent connection,
// serialized by a mutex; transport failures trigger reconnect-and-retry up
// to retry_limit, then surface as TransportError.
class RemoteEvalApi final : public EvalApi {
 public:
  RemoteEvalApi(const std::string& host, uint16_t port, int prompt_len,
                int hidden, int retry_limit = 3)
      : host_(host),
        port_(port),
        prompt_len_(prompt_len),
        hidden_(hidden),
        retry_limit_(retry_limit) {}

  ~RemoteEvalApi() override { disconnect(); }

  const TrafficLedger& ledger() const { return ledger_; }

  std::vector<LayerStats> stats(const Batch& b, int clip_rounds = 5) {
    wire::StatsRequest req;
    req.request_id = next_id_++;
    req.batch = static_cast<uint32_t>(b.batch);
    req.seqlen = static_cast<uint32_t>(b.seqlen);
    req.clip_rounds = static_cast<uint32_t>(clip_rounds);
    req.input_ids = b.ids;
    req.attention_mask = b.attention_mask;
    const auto reply = round_trip(wire::encode_stats_request(req));
    const auto resp = wire::decode_stats_response(reply);
    if (resp.request_id != req.request_id)
      throw TransportError("stats response id mismatch");
    std::vector<LayerStats> out;
    for (size_t i = 0; i < resp.layer_stats.size(); ++i)
      out.push_back(LayerStats{static_cast<int>(i), resp.layer_stats[i].first,
                               resp.layer_stats[i].second, clip_rounds});
    return out;
  }

 protected:
  Eigen::MatrixXf do_evaluate(const DeepPrompt& p, const Batch& b) override {
    wire::InferenceRequest req;
    req.request_id = next_id_++;
    req.batch = static_cast<uint32_t>(b.batch);
    req.seqlen = static_cast<uint32_t>(b.seqlen);
    req.prompt_kind = p.offsets.size() == 1 ? wire::PromptKind::Flat
                                            : wire::PromptKind::Deep;
    req.prompt_layers = static_cast<uint32_t>(p.offsets.size());
    req.prompt_len = static_cast<uint32_t>(prompt_len_);
    req.prompt_dim = static_cast<uint32_t>(hidden_);
    req.input_ids = b.ids;
    req.attention_mask = b.attention_mask;
    req.mask_positions = b.mask_pos;
    req.label_words = b.label_words;
    for (const auto& o : p.offsets)
      for (int i = 0; i < o.rows(); ++i)
        for (int j = 0; j < o.cols(); ++j) req.prompt.push_back(o(i, j));

    const auto reply = round_trip(wire::encode_request(req));
    if (wire::peek_kind(reply) == wire::MsgKind::Error) {
      const auto err = wire::decode_error(reply);
      throw std::runtime_error("server error: " + err.message);
    }
    const auto resp = wire::decode_response(reply);
    if (resp.request_id != req.request_id)
      throw TransportError("response id mismatch");
    Eigen::MatrixXf logits(resp.batch, resp.classes);
    for (uint32_t i = 0; i < resp.batch; ++i)
      for (uint32_t j = 0; j < resp.classes; ++j)
        logits(i, j) = resp.logits[i * resp.classes + j];
    return logits;
  }

 private:
  std::vector<uint8_t> round_trip(const std::vector<uint8_t>& body) {
    std::lock_guard<std::mutex> lk(mu_);
    for (int attempt = 0;; ++attempt) {
      try {
        connect_locked();
        net::write_frame(fd_, body);
        std::vector<uint8_t> reply;
        if (!net::read_frame(fd_, reply, false))
          throw TransportError("connection closed");
        ledger_.add_up(net::frame_bytes(body));
        ledger_.add_down(net::frame_bytes(reply));
        ledger_.add_request();
        return reply;
      } catch (const TransportError&) {
        disconnect_locked();
        if (attempt + 1 >= retry_limit_) throw;
      }
    }
  }

  void connect_locked() {
    if (fd_ >= 0) return;
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw TransportError("socket failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
      disconnect_locked();
      throw TransportError("bad address " + host_);
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
      disconnect_locked();
      throw TransportError("connect to " + host_ + " failed");
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  void disconnect_locked() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  void disconnect() {
    std::lock_guard<std::mutex> lk(mu_);
    disconnect_locked();
  }

  std::string host_;
  uint16_t port_;
  int prompt_len_, hidden_;
  int retry_limit_;
  int fd_ = -1;
  std::mutex mu_;
  std::atomic<uint32_t> next_id_{1};
  TrafficLedger ledger_;
};

}  // namespace bbt
