#include "elastica/io.hpp"
#include "elastica/manip.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

namespace elastica {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using json = nlohmann::json;

namespace {

using Message = std::shared_ptr<const std::string>;

Message share(const json& j) { return std::make_shared<const std::string>(j.dump()); }

std::string content_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

}  // namespace

class WsConnection;

struct ManipServer::Impl {
  Impl(SceneBundle bundle, ServeOptions options)
      : opt(std::move(options)), session(std::move(bundle), opt.session), acceptor(ioc) {
    scene = to_json(session.bundle(), false).dump();
    const tcp::endpoint ep(net::ip::make_address(opt.address), opt.port);
    acceptor.open(ep.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen();
  }

  void accept();
  void simulate();
  void enqueue(std::weak_ptr<WsConnection> from, std::string text) {
    std::lock_guard lock(mutex);
    commands.push_back({std::move(from), std::move(text)});
  }

  struct Command {
    std::weak_ptr<WsConnection> from;
    std::string text;
  };

  ServeOptions opt;
  Session session;  // touched only by the simulation thread once running
  std::string scene;
  net::io_context ioc{1};
  tcp::acceptor acceptor;
  std::vector<std::weak_ptr<WsConnection>> connections;  // io thread only
  std::atomic<int> gaussian_subscribers{0};
  std::mutex mutex;
  std::deque<Command> commands;
  std::condition_variable wake;
  std::atomic<bool> running{false};
};

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket&& socket, ManipServer::Impl& server) : ws_(std::move(socket)), server_(server) {}

  ~WsConnection() {
    if (gaussians_) --server_.gaussian_subscribers;
  }

  void start(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->server_.connections.push_back(self);
      self->read();
    });
  }

  // io thread only
  void send(Message m, bool droppable) {
    if (droppable && queue_.size() > 32) return;
    queue_.push_back(std::move(m));
    if (queue_.size() == 1) write();
  }
  void set_gaussians(bool on) {
    if (on != gaussians_) server_.gaussian_subscribers += on ? 1 : -1;
    gaussians_ = on;
  }
  bool gaussians() const { return gaussians_; }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->server_.enqueue(self, beast::buffers_to_string(self->buffer_.data()));
      self->buffer_.consume(self->buffer_.size());
      self->read();
    });
  }
  void write() {
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  ManipServer::Impl& server_;
  beast::flat_buffer buffer_;
  std::deque<Message> queue_;
  bool gaussians_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& socket, ManipServer::Impl& server) : stream_(std::move(socket)), server_(server) {}

  void start() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (websocket::is_upgrade(self->req_)) {
        std::make_shared<WsConnection>(self->stream_.release_socket(), self->server_)->start(std::move(self->req_));
        return;
      }
      self->respond();
    });
  }

 private:
  void respond() {
    auto res = std::make_shared<http::response<http::string_body>>(http::status::ok, req_.version());
    res->keep_alive(false);
    const std::string target(req_.target());
    const std::string path = target.substr(0, target.find('?'));
    if (req_.method() != http::verb::get) {
      res->result(http::status::method_not_allowed);
    } else if (path == "/healthz") {
      res->set(http::field::content_type, "text/plain");
      res->body() = "ok\n";
    } else if (path == "/scene") {
      res->set(http::field::content_type, "application/json");
      res->set(http::field::access_control_allow_origin, "*");
      res->body() = server_.scene;
    } else if (!serve_file(path, *res)) {
      res->result(http::status::not_found);
      res->body() = "not found\n";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  bool serve_file(const std::string& path, http::response<http::string_body>& res) {
    if (server_.opt.ui_dir.empty() || path.find("..") != std::string::npos) return false;
    std::filesystem::path file = server_.opt.ui_dir / (path == "/" ? "index.html" : path.substr(1));
    if (!std::filesystem::is_regular_file(file)) return false;
    res.set(http::field::content_type, content_type(file));
    res.body() = read_text_file(file);
    return true;
  }

  beast::tcp_stream stream_;
  ManipServer::Impl& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

void ManipServer::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<HttpConnection>(std::move(socket), *this)->start();
    accept();
  });
}

void ManipServer::Impl::simulate() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / opt.session.hz));
  auto next = clock::now();
  while (running) {
    std::deque<Command> batch;
    {
      std::lock_guard lock(mutex);
      batch.swap(commands);
    }
    // Messages apply in arrival order, strictly between ticks.
    for (auto& cmd : batch) {
      MessageResult r = session.handle_message(cmd.text);
      std::vector<Message> replies;
      for (const auto& j : r.replies) replies.push_back(share(j));
      net::post(ioc, [from = cmd.from, replies = std::move(replies), detail = r.gaussians] {
        auto c = from.lock();
        if (!c) return;
        if (detail) c->set_gaussians(*detail);
        for (const auto& m : replies) c->send(m, false);
      });
    }

    const auto t0 = clock::now();
    const auto error = session.tick();
    const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    if (opt.on_tick) opt.on_tick(ms);

    const Message plain = share(session.state_message(false));
    const Message detailed = gaussian_subscribers > 0 ? share(session.state_message(true)) : plain;
    const Message err = error ? share(*error) : nullptr;
    net::post(ioc, [this, plain, detailed, err] {
      std::erase_if(connections, [](const auto& w) { return w.expired(); });
      for (const auto& w : connections)
        if (auto c = w.lock()) {
          if (err) c->send(err, false);
          c->send(c->gaussians() ? detailed : plain, true);
        }
    });

    next += period;
    const auto now = clock::now();
    if (next < now) next = now;
    std::unique_lock lock(mutex);
    wake.wait_until(lock, next, [this] { return !running; });
  }
}

ManipServer::ManipServer(SceneBundle bundle, ServeOptions options)
    : impl_(std::make_unique<Impl>(std::move(bundle), std::move(options))) {}

ManipServer::~ManipServer() { stop(); }

unsigned short ManipServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void ManipServer::run() {
  impl_->running = true;
  impl_->accept();
  std::thread sim([this] { impl_->simulate(); });
  impl_->ioc.run();
  {
    std::lock_guard lock(impl_->mutex);
    impl_->running = false;
  }
  impl_->wake.notify_all();
  sim.join();
}

void ManipServer::stop() {
  {
    std::lock_guard lock(impl_->mutex);
    impl_->running = false;
  }
  impl_->wake.notify_all();
  impl_->ioc.stop();
}

}  // namespace elastica
