#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <string>

#include "birr/classifier.hpp"

namespace httplib {
class Server;
}

namespace birr {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t max_body_bytes = 10 * 1024 * 1024;
};

// HTTP front end over a shared, immutable Classifier.
//   GET  /health    {"status", "model_id", "num_classes", "input_resolution", "requests"}
//   GET  /labels    label table
//   POST /classify  raw PNG/PPM body -> PredictionResponse with latency_ms
// Oversized bodies get 413, undecodable bodies 422, unknown routes 404.
// Every response carries permissive CORS headers.
class Service {
 public:
  Service(const Classifier& classifier, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and returns the port; throws IoError when binding fails.
  int bind();
  // Blocks serving requests until stop().
  void serve();
  void stop();
  // Blocks until the listener accepts connections.
  void wait_until_ready() const;

  int port() const { return port_; }
  std::size_t requests_served() const { return requests_.load(); }

 private:
  void install_routes();

  const Classifier& classifier_;
  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = -1;
  std::atomic<std::size_t> requests_{0};
};

}  // namespace birr
