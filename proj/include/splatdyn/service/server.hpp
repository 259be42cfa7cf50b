#pragma once

#include "splatdyn/log.hpp"
#include "splatdyn/service/simulation.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <filesystem>
#include <thread>

// WebSocket transport for a Simulation. One io thread serves every client;
// a separate loop thread steps the simulation in real time and broadcasts
// frames at most max_fps times per second. Each client has its own bounded
// frame queue, so a slow viewer loses old frames instead of stalling the
// loop. Replies to requests are never dropped.
namespace splatdyn::service {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace detail {

inline std::string mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".wasm") return "application/wasm";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

// Resolves a request target inside `root`; empty when it escapes the root.
inline std::filesystem::path resolve_static(const std::string& root, std::string_view target) {
  std::string t(target.substr(0, target.find('?')));
  if (t.empty() || t == "/") t = "/index.html";
  const auto base = std::filesystem::weakly_canonical(root);
  const auto full = std::filesystem::weakly_canonical(base / t.substr(1));
  const auto rel = full.lexically_relative(base);
  if (rel.empty() || *rel.begin() == "..") return {};
  return full;
}

}  // namespace detail

class Server;

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, Server& server);
  void start();
  // Thread-safe: hands a shared frame to this client's bounded queue.
  void deliver_frame(std::shared_ptr<const std::string> frame, bool binary);
  std::size_t dropped_frames() const { return dropped_.load(); }

 private:
  struct Outgoing {
    std::shared_ptr<const std::string> data;
    bool binary = false;
  };

  void on_request(beast::error_code ec);
  void serve_file();
  void on_accept(beast::error_code ec);
  void read();
  void on_read(beast::error_code ec);
  void send_reply(std::string text, bool binary);
  void pump();

  beast::tcp_stream stream_;
  std::optional<websocket::stream<beast::tcp_stream>> ws_;
  Server& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  std::deque<Outgoing> replies_;
  BoundedBuffer<Outgoing> frames_;
  bool writing_ = false;
  bool open_ = false;
  std::atomic<std::size_t> dropped_{0};
};

class Server {
 public:
  // port 0 binds an ephemeral port (see port()).
  Server(Simulation& sim, ServiceConfig config)
      : sim_(sim), config_(std::move(config)), acceptor_(io_) {
    if (!(config_.max_fps > 0.0)) throw Error(ErrorCode::config, "max_fps must be positive");
    const tcp::endpoint ep(net::ip::make_address("127.0.0.1"), static_cast<unsigned short>(config_.port));
    beast::error_code ec;
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw Error(ErrorCode::io, "cannot listen on port " + std::to_string(config_.port) + ": " + ec.message());
  }

  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start() {
    if (running_.exchange(true)) return;
    accept();
    io_thread_ = std::thread([this] { io_.run(); });
    loop_thread_ = std::thread([this] { loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    net::post(io_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
    });
    if (loop_thread_.joinable()) loop_thread_.join();
    io_.stop();
    if (io_thread_.joinable()) io_thread_.join();
  }

  // Blocks until stop() is called from another thread or a signal handler.
  void wait() {
    if (loop_thread_.joinable()) loop_thread_.join();
    if (io_thread_.joinable()) io_thread_.join();
  }

  Simulation& simulation() { return sim_; }
  const ServiceConfig& config() const { return config_; }

  std::string encode(const StateFrame& f) const {
    return config_.binary_frames ? encode_binary(f) : encode_json(f).dump();
  }

  void add_session(const std::shared_ptr<Session>& s) {
    std::lock_guard lock(sessions_mutex_);
    sessions_.push_back(s);
  }

 private:
  void accept() {
    acceptor_.async_accept(net::make_strand(io_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<Session>(std::move(socket), *this)->start();
      accept();
    });
  }

  void broadcast() {
    auto frame = std::make_shared<const std::string>(encode(*sim_.snapshot()));
    std::lock_guard lock(sessions_mutex_);
    std::erase_if(sessions_, [&](const std::weak_ptr<Session>& w) {
      auto s = w.lock();
      if (!s) return true;
      s->deliver_frame(frame, config_.binary_frames);
      return false;
    });
  }

  // Real-time stepping: one simulation step per dt of wall time (or as fast
  // as possible when a step takes longer), frames decimated to max_fps.
  void loop() {
    using clock = std::chrono::steady_clock;
    const auto step = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(sim_.config().dt));
    const auto frame_gap =
        std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / config_.max_fps));
    auto next = clock::now();
    auto last_sent = clock::time_point{};
    bool pending = true;  // the initial frame has not been broadcast yet
    while (running_) {
      bool urgent = false;
      try {
        const auto r = sim_.tick();
        pending = pending || r.published;
        urgent = r.forced;
      } catch (const std::exception& e) {
        log::error(std::string("simulation step failed: ") + e.what());
        sim_.handle(R"({"v":1,"type":"control","action":"pause"})");
      }
      const auto now = clock::now();
      // Frames that show a user's force skip decimation.
      if (pending && (urgent || now - last_sent >= frame_gap)) {
        broadcast();
        last_sent = now;
        pending = false;
      }
      next += step;
      if (next < now) next = now;
      std::this_thread::sleep_until(next);
    }
  }

  Simulation& sim_;
  ServiceConfig config_;
  net::io_context io_;
  tcp::acceptor acceptor_;
  std::atomic<bool> running_{false};
  std::thread io_thread_, loop_thread_;
  std::mutex sessions_mutex_;
  std::vector<std::weak_ptr<Session>> sessions_;
};

inline Session::Session(tcp::socket socket, Server& server)
    : stream_(std::move(socket)), server_(server), frames_(server.config().frame_buffer) {}

inline void Session::start() {
  net::dispatch(stream_.get_executor(), [self = shared_from_this()] {
    http::async_read(self->stream_, self->buffer_, self->request_,
                     [self](beast::error_code ec, std::size_t) { self->on_request(ec); });
  });
}

inline void Session::on_request(beast::error_code ec) {
  if (ec) return;
  if (websocket::is_upgrade(request_)) {
    ws_.emplace(std::move(stream_));
    ws_->set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_->async_accept(request_, [self = shared_from_this()](beast::error_code e) { self->on_accept(e); });
    return;
  }
  serve_file();
}

inline void Session::serve_file() {
  auto res = std::make_shared<http::response<http::string_body>>();
  res->version(request_.version());
  res->keep_alive(false);
  const std::string& root = server_.config().static_dir;
  std::filesystem::path file;
  if (!root.empty() && request_.method() == http::verb::get) file = detail::resolve_static(root, std::string_view(request_.target().data(), request_.target().size()));
  if (!file.empty() && std::filesystem::is_regular_file(file)) {
    res->result(http::status::ok);
    res->set(http::field::content_type, detail::mime_type(file));
    res->body() = io::read_file(file.string());
  } else {
    res->result(http::status::not_found);
    res->set(http::field::content_type, "text/plain");
    res->body() = "not found\n";
  }
  res->prepare_payload();
  http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
    beast::error_code e;
    self->stream_.socket().shutdown(tcp::socket::shutdown_send, e);
  });
}

inline void Session::on_accept(beast::error_code ec) {
  if (ec) return;
  open_ = true;
  buffer_.clear();
  // scene-info always precedes the first frame.
  send_reply(server_.simulation().scene_info().dump(), false);
  frames_.push({std::make_shared<const std::string>(server_.encode(*server_.simulation().snapshot())),
                server_.config().binary_frames});
  server_.add_session(shared_from_this());
  pump();
  read();
}

inline void Session::read() {
  ws_->async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
}

inline void Session::on_read(beast::error_code ec) {
  if (ec) {
    open_ = false;
    return;
  }
  const std::string text = beast::buffers_to_string(buffer_.data());
  buffer_.consume(buffer_.size());
  Reply r = server_.simulation().handle(text);
  if (r.frame) {
    send_reply(server_.encode(*r.frame), server_.config().binary_frames);
  } else {
    send_reply(r.json.dump(), false);
  }
  read();
}

inline void Session::send_reply(std::string text, bool binary) {
  replies_.push_back({std::make_shared<const std::string>(std::move(text)), binary});
  pump();
}

inline void Session::deliver_frame(std::shared_ptr<const std::string> frame, bool binary) {
  net::post(ws_->get_executor(), [self = shared_from_this(), frame = std::move(frame), binary]() mutable {
    if (!self->open_) return;
    const std::size_t before = self->frames_.dropped();
    self->frames_.push({std::move(frame), binary});
    self->dropped_ += self->frames_.dropped() - before;
    self->pump();
  });
}

// Writes one message at a time; replies go before queued frames.
inline void Session::pump() {
  if (writing_ || !open_) return;
  std::optional<Outgoing> next;
  if (!replies_.empty()) {
    next = std::move(replies_.front());
    replies_.pop_front();
  } else {
    next = frames_.pop();
  }
  if (!next) return;
  writing_ = true;
  ws_->binary(next->binary);
  auto data = next->data;
  ws_->async_write(net::buffer(*data), [self = shared_from_this(), data](beast::error_code ec, std::size_t) {
    self->writing_ = false;
    if (ec) {
      self->open_ = false;
      return;
    }
    self->pump();
  });
}

}  // namespace splatdyn::service
