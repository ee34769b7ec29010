#include "scadatb/loopback.hpp"

#include <sys/socket.h>

#include <atomic>
#include <map>
#include <thread>

#include <boost/asio.hpp>

namespace scadatb::loopback {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

namespace {

constexpr std::size_t kMbapBytes = 7;

net::Endpoint to_endpoint(const tcp::endpoint& ep) {
  return net::Endpoint{static_cast<std::uint32_t>(ep.address().to_v4().to_uint()), ep.port()};
}

// Reads one MBAP-framed ADU; false on a clean EOF before the header.
bool read_adu(tcp::socket& socket, std::vector<std::uint8_t>& adu) {
  adu.assign(kMbapBytes, 0);
  boost::system::error_code ec;
  asio::read(socket, asio::buffer(adu), ec);
  if (ec) return false;
  const std::size_t length = (static_cast<std::size_t>(adu[4]) << 8) | adu[5];
  if (length < 1) return false;
  adu.resize(kMbapBytes - 1 + length);
  asio::read(socket, asio::buffer(adu.data() + kMbapBytes, length - 1), ec);
  return !ec;
}

}  // namespace

TapQueue::TapQueue() : epoch_(std::chrono::steady_clock::now()) {}

Micros TapQueue::now() const {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - epoch_).count();
}

void TapQueue::push(net::PacketEvent event) {
  {
    std::lock_guard lock(mutex_);
    events_.push_back(event);
    ++total_;
  }
  cv_.notify_all();
}

std::vector<net::PacketEvent> TapQueue::drain() {
  std::lock_guard lock(mutex_);
  std::vector<net::PacketEvent> out(events_.begin(), events_.end());
  events_.clear();
  return out;
}

bool TapQueue::wait_for_total(std::uint64_t count, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] { return total_ >= count; });
}

std::uint64_t TapQueue::total() const {
  std::lock_guard lock(mutex_);
  return total_;
}

// Server ---------------------------------------------------------------------------

struct LoopbackServer::Impl {
  Impl(net::RequestHandler h, TapQueue& t, std::uint16_t port)
      : handler(std::move(h)), tap(t), acceptor(ioc, tcp::endpoint(asio::ip::address_v4::loopback(), port)) {}

  void serve(tcp::socket socket, net::ConnectionId id) {
    boost::system::error_code ec;
    const auto client = to_endpoint(socket.remote_endpoint(ec));
    const auto server = to_endpoint(socket.local_endpoint(ec));
    std::uint32_t seq = 0;
    auto emit = [&](bool from_client, net::PacketKind kind, std::size_t payload) {
      net::PacketEvent e;
      e.timestamp = tap.now();
      e.src = from_client ? client : server;
      e.dst = from_client ? server : client;
      e.kind = kind;
      e.payload_bytes = static_cast<std::uint32_t>(payload);
      e.connection = id;
      e.sequence = seq++;
      tap.push(e);
    };
    emit(true, net::PacketKind::HandshakeSyn, 0);
    emit(false, net::PacketKind::HandshakeSynAck, 0);
    emit(true, net::PacketKind::HandshakeAck, 0);

    std::vector<std::uint8_t> adu;
    while (!stopping && read_adu(socket, adu)) {
      emit(true, net::PacketKind::Data, adu.size());
      std::optional<std::vector<std::uint8_t>> reply;
      {
        std::lock_guard lock(handler_mutex);
        reply = handler(adu);
      }
      if (!reply) continue;
      asio::write(socket, asio::buffer(*reply), ec);
      if (ec) break;
      emit(false, net::PacketKind::Data, reply->size());
    }
    emit(true, net::PacketKind::Fin, 0);
    emit(false, net::PacketKind::Fin, 0);
    {
      std::lock_guard lock(sockets_mutex);
      sockets.erase(id);
    }
    socket.close(ec);
  }

  net::RequestHandler handler;
  TapQueue& tap;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::mutex handler_mutex;
  std::mutex sockets_mutex;
  std::map<net::ConnectionId, int> sockets;  // native handles, for shutdown on stop
  std::vector<std::thread> workers;
  std::thread accept_thread;
  std::atomic<bool> stopping{false};
  std::atomic<std::uint64_t> accepted{0};
};

LoopbackServer::LoopbackServer(net::RequestHandler handler, TapQueue& tap, std::uint16_t port)
    : impl_(std::make_unique<Impl>(std::move(handler), tap, port)) {}

LoopbackServer::~LoopbackServer() { stop(); }

std::uint16_t LoopbackServer::port() const noexcept { return impl_->acceptor.local_endpoint().port(); }

std::uint64_t LoopbackServer::connections() const noexcept { return impl_->accepted.load(); }

void LoopbackServer::start() {
  if (impl_->accept_thread.joinable()) return;
  impl_->accept_thread = std::thread([impl = impl_.get()] {
    while (!impl->stopping) {
      tcp::socket socket(impl->ioc);
      boost::system::error_code ec;
      impl->acceptor.accept(socket, ec);
      if (ec || impl->stopping) break;
      const net::ConnectionId id = ++impl->accepted;
      {
        std::lock_guard lock(impl->sockets_mutex);
        impl->sockets[id] = socket.native_handle();
      }
      impl->workers.emplace_back([impl, id, s = std::move(socket)]() mutable { impl->serve(std::move(s), id); });
    }
  });
}

void LoopbackServer::stop() {
  if (impl_->stopping.exchange(true)) return;
  if (impl_->accept_thread.joinable()) {
    boost::system::error_code ec;
    asio::io_context wake_ctx;
    tcp::socket wake(wake_ctx);
    wake.connect(tcp::endpoint(asio::ip::address_v4::loopback(), port()), ec);
    impl_->accept_thread.join();
  }
  {
    std::lock_guard lock(impl_->sockets_mutex);
    for (const auto& [id, fd] : impl_->sockets) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& w : impl_->workers) {
    if (w.joinable()) w.join();
  }
  boost::system::error_code ec;
  impl_->acceptor.close(ec);
}

// Client ---------------------------------------------------------------------------

struct LoopbackClient::Impl {
  asio::io_context ioc;
  tcp::socket socket{ioc};
};

LoopbackClient::LoopbackClient(const std::string& host, std::uint16_t port) : impl_(std::make_unique<Impl>()) {
  impl_->socket.connect(tcp::endpoint(asio::ip::make_address(host), port));
  impl_->socket.set_option(tcp::no_delay(true));
}

LoopbackClient::~LoopbackClient() { close(); }

std::vector<std::uint8_t> LoopbackClient::exchange(const std::vector<std::uint8_t>& request) {
  asio::write(impl_->socket, asio::buffer(request));
  std::vector<std::uint8_t> adu;
  if (!read_adu(impl_->socket, adu)) throw std::runtime_error("connection closed before a complete response");
  return adu;
}

void LoopbackClient::close() {
  if (!impl_ || !impl_->socket.is_open()) return;
  boost::system::error_code ec;
  impl_->socket.shutdown(tcp::socket::shutdown_both, ec);
  impl_->socket.close(ec);
}

net::Endpoint LoopbackClient::local_endpoint() const { return to_endpoint(impl_->socket.local_endpoint()); }

}  // namespace scadatb::loopback
