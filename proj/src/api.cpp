#include <csignal>
#include <deque>
#include <memory>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "scadatb/session.hpp"

namespace scadatb {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

constexpr std::size_t kMaxQueuedMessages = 4096;
constexpr auto kCommandTimeout = std::chrono::seconds(5);

http::status status_for(const CommandResult& r) {
  if (r.ok) return http::status::ok;
  switch (*r.error) {
    case SessionErrorKind::ConflictingCommand: return http::status::conflict;
    case SessionErrorKind::SessionNotLive: return http::status::service_unavailable;
    case SessionErrorKind::InvalidCommand: return http::status::bad_request;
  }
  return http::status::internal_server_error;
}

CommandResult await(std::future<CommandResult> f) {
  if (f.wait_for(kCommandTimeout) != std::future_status::ready) {
    CommandResult r;
    r.ok = false;
    r.error = SessionErrorKind::SessionNotLive;
    r.message = "session did not answer in time";
    r.body = {{"error", to_string(SessionErrorKind::SessionNotLive)}, {"message", r.message}};
    return r;
  }
  return f.get();
}

CommandResult invalid(const std::string& message) {
  CommandResult r;
  r.ok = false;
  r.error = SessionErrorKind::InvalidCommand;
  r.message = message;
  r.body = {{"error", to_string(SessionErrorKind::InvalidCommand)}, {"message", message}};
  return r;
}

http::response<http::string_body> route(LiveSession& session, const http::request<http::string_body>& req) {
  const std::string target(req.target());
  const std::string path = target.substr(0, target.find('?'));
  auto respond = [&](http::status status, const json& body) {
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::content_type, "application/json");
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = body.dump();
    res.prepare_payload();
    return res;
  };
  auto reply = [&](const CommandResult& r) { return respond(status_for(r), r.body); };
  auto method_is = [&](http::verb v) { return req.method() == v; };

  if (path == "/api/state" || path == "/api/metrics") {
    if (!method_is(http::verb::get)) return respond(http::status::method_not_allowed, {{"error", "method-not-allowed"}});
    return reply(await(path == "/api/state" ? session.snapshot() : session.metrics()));
  }
  if (path == "/api/command" || path == "/api/attack") {
    if (!method_is(http::verb::post)) return respond(http::status::method_not_allowed, {{"error", "method-not-allowed"}});
    json body;
    try {
      body = json::parse(req.body());
    } catch (const json::exception&) {
      return reply(invalid("request body is not valid JSON"));
    }
    if (path == "/api/command") {
      const auto button = body.value("button", std::string());
      if (button != "on" && button != "off") return reply(invalid("button must be \"on\" or \"off\""));
      return reply(await(session.press(button == "on")));
    }
    attacks::AttackSpec spec;
    try {
      spec = body.get<attacks::AttackSpec>();
      if (!body.contains("target")) spec.target = session.config().server;
    } catch (const std::exception& e) {
      return reply(invalid(e.what()));
    }
    return reply(await(session.launch_attack(spec)));
  }
  return respond(http::status::not_found, {{"error", "not-found"}, {"path", path}});
}

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, LiveSession& session)
      : ws_(std::move(socket)), session_(session) {}

  ~WsSession() {
    if (subscription_) session_.unsubscribe(subscription_);
  }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      std::weak_ptr<WsSession> weak = self;
      self->subscription_ = self->session_.subscribe([weak](const std::string& text) {
        if (auto s = weak.lock()) {
          asio::post(s->ws_.get_executor(), [s, text] { s->enqueue(text); });
        }
      });
      self->read();
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        return;
      }
      self->buffer_.consume(self->buffer_.size());
      self->read();
    });
  }

  void enqueue(const std::string& text) {
    if (closed_) return;
    if (queue_.size() >= kMaxQueuedMessages) queue_.pop_front();
    queue_.push_back(text);
    if (!writing_) write();
  }

  void write() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->queue_.pop_front();
      self->writing_ = false;
      if (ec) {
        self->closed_ = true;
        self->queue_.clear();
        return;
      }
      if (!self->queue_.empty()) self->write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  LiveSession& session_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  bool writing_ = false;
  bool closed_ = false;
  std::uint64_t subscription_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, LiveSession& session) : stream_(std::move(socket)), session_(session) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->handle();
    });
  }

  void handle() {
    if (websocket::is_upgrade(req_)) {
      const std::string target(req_.target());
      if (target.substr(0, target.find('?')) == "/ws") {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), session_)->run(std::move(req_));
        return;
      }
    }
    auto self = shared_from_this();
    std::thread([self] {
      auto res = std::make_shared<http::response<http::string_body>>(route(self->session_, self->req_));
      asio::post(self->stream_.get_executor(), [self, res] {
        http::async_write(self->stream_, *res, [self, res](beast::error_code ec, std::size_t) {
          if (ec || !res->keep_alive()) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
            return;
          }
          self->read();
        });
      });
    }).detach();
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  LiveSession& session_;
};

}  // namespace

struct ApiServer::Impl {
  Impl(LiveSession& s, const std::string& address, std::uint16_t port, unsigned n)
      : session(s), threads_wanted(n == 0 ? 1 : n), acceptor(asio::make_strand(ioc)) {
    const tcp::endpoint ep{asio::ip::make_address(address), port};
    acceptor.open(ep.protocol());
    acceptor.set_option(asio::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen(asio::socket_base::max_listen_connections);
  }

  void accept() {
    acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), session)->run();
      accept();
    });
  }

  LiveSession& session;
  unsigned threads_wanted;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::vector<std::thread> threads;
  std::optional<asio::signal_set> signals;
  std::mutex mutex;
  bool started = false;
};

ApiServer::ApiServer(LiveSession& session, const std::string& address, std::uint16_t port, unsigned threads)
    : impl_(std::make_unique<Impl>(session, address, port, threads)) {}

ApiServer::~ApiServer() { stop(); }

std::uint16_t ApiServer::port() const noexcept {
  beast::error_code ec;
  const auto ep = impl_->acceptor.local_endpoint(ec);
  return ec ? 0 : ep.port();
}

void ApiServer::start() {
  std::lock_guard lock(impl_->mutex);
  if (impl_->started) return;
  impl_->started = true;
  impl_->accept();
  for (unsigned i = 0; i < impl_->threads_wanted; ++i) {
    impl_->threads.emplace_back([this] { impl_->ioc.run(); });
  }
}

void ApiServer::stop() {
  asio::post(impl_->acceptor.get_executor(), [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
  });
  impl_->ioc.stop();
  for (auto& t : impl_->threads) {
    if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
  }
  impl_->threads.clear();
}

void ApiServer::wait() {
  impl_->signals.emplace(impl_->ioc, SIGINT, SIGTERM);
  impl_->signals->async_wait([this](beast::error_code, int) { impl_->ioc.stop(); });
  for (auto& t : impl_->threads) {
    if (t.joinable()) t.join();
  }
  impl_->threads.clear();
}

}  // namespace scadatb
