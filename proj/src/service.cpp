#include "birr/service.hpp"

#include <chrono>

#include <httplib.h>

#include "birr/errors.hpp"

namespace birr {

namespace {

constexpr const char* kJson = "application/json; charset=utf-8";

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::ordered_json{{"error", message}, {"status", status}}.dump(), kJson);
}

}  // namespace

Service::Service(const Classifier& classifier, ServiceOptions options)
    : classifier_(classifier), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

Service::~Service() { stop(); }

void Service::install_routes() {
  auto& s = *server_;
  s.set_payload_max_length(options_.max_body_bytes);

  s.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    ++requests_;
    const auto& cfg = classifier_.model().config;
    nlohmann::ordered_json j{{"status", "ok"},
                             {"model_id", classifier_.model_id()},
                             {"num_classes", cfg.num_classes},
                             {"input_resolution", cfg.input_resolution},
                             {"requests", requests_.load()}};
    res.set_content(j.dump(), kJson);
  });

  s.Get("/labels", [this](const httplib::Request&, httplib::Response& res) {
    ++requests_;
    res.set_content(classifier_.labels().to_json().dump(), kJson);
  });

  s.Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    const auto start = std::chrono::steady_clock::now();
    if (req.body.empty()) {
      send_error(res, 422, "empty request body; send raw PNG or PPM bytes");
      return;
    }
    try {
      const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
      PredictionResponse r = classifier_.classify({data, req.body.size()});
      r.latency_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      res.set_content(r.to_json().dump(), kJson);
    } catch (const UnsupportedFormatError& e) {
      send_error(res, 422, e.what());
    } catch (const DecodeError& e) {
      send_error(res, 422, e.what());
    }
  });

  s.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string message = res.status == 404   ? "no such route"
                                : res.status == 413 ? "request body exceeds the size limit"
                                                    : "request failed";
    send_error(res, res.status, message);
  });

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "unknown error");
    }
  });

  s.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
}

int Service::bind() {
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else {
    port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ < 0) {
    throw IoError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  }
  return port_;
}

void Service::serve() {
  if (port_ < 0) bind();
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void Service::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace birr
