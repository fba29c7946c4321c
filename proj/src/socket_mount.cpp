// Copyright 2024 The Converge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <memory>
#include <thread>

#include <boost/asio.hpp>

#include "converge/mlserve.hpp"

namespace converge::mlserve {

namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

// One connection; requests on it are answered strictly in order.
class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, Service& service) : socket_(std::move(socket)), service_(service) {}

  void start() { read_next(); }

 private:
  void read_next() {
    auto self = shared_from_this();
    asio::async_read_until(socket_, buffer_, '\n', [self](boost::system::error_code ec, std::size_t n) {
      if (ec) return;
      std::string line(asio::buffers_begin(self->buffer_.data()),
                       asio::buffers_begin(self->buffer_.data()) + static_cast<std::ptrdiff_t>(n));
      self->buffer_.consume(n);
      ServiceResponse response;
      try {
        response = self->service_.handle(decode_request(line));
      } catch (const WireError& e) {
        response = {Status::bad_request, {{"error", e.what()}}};
      }
      self->reply_ = encode(response) + "\n";
      asio::async_write(self->socket_, asio::buffer(self->reply_),
                        [self](boost::system::error_code wec, std::size_t) {
                          if (!wec) self->read_next();
                        });
    });
  }

  tcp::socket socket_;
  Service& service_;
  asio::streambuf buffer_;
  std::string reply_;
};

}  // namespace

struct SocketServer::Impl {
  Impl(Service& svc, std::uint16_t port)
      : service(svc), acceptor(io, tcp::endpoint(asio::ip::address_v4::loopback(), port)) {}

  void accept() {
    acceptor.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<Session>(std::move(socket), service)->start();
      accept();
    });
  }

  Service& service;
  asio::io_context io;
  tcp::acceptor acceptor;
  std::thread worker;
};

SocketServer::SocketServer(Service& service, std::uint16_t port) : impl_(std::make_unique<Impl>(service, port)) {
  impl_->accept();
  // A single I/O thread: every request is handled in arrival order.
  impl_->worker = std::thread([this] { impl_->io.run(); });
}

SocketServer::~SocketServer() { stop(); }

std::uint16_t SocketServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void SocketServer::stop() {
  if (!impl_ || !impl_->worker.joinable()) return;
  impl_->io.stop();
  impl_->worker.join();
}

struct SocketMount::Impl {
  asio::io_context io;
  tcp::socket socket{io};
  asio::streambuf buffer;
};

SocketMount::SocketMount(const std::string& host, std::uint16_t port) : impl_(std::make_unique<Impl>()) {
  tcp::resolver resolver(impl_->io);
  asio::connect(impl_->socket, resolver.resolve(host, std::to_string(port)));
}

SocketMount::~SocketMount() = default;

ServiceResponse SocketMount::call(const ServiceRequest& request) {
  const std::string line = encode(request) + "\n";
  asio::write(impl_->socket, asio::buffer(line));
  const std::size_t n = asio::read_until(impl_->socket, impl_->buffer, '\n');
  std::string reply(asio::buffers_begin(impl_->buffer.data()),
                    asio::buffers_begin(impl_->buffer.data()) + static_cast<std::ptrdiff_t>(n));
  impl_->buffer.consume(n);
  return decode_response(reply);
}

}  // namespace converge::mlserve
