#include "httplib.h"

#include "gca/errors.hpp"
#include "gca/service.hpp"

namespace gca {

using nlohmann::json;

struct HttpServer::Impl {
  explicit Impl(ChatService& s) : service(s) {}
  ChatService& service;
  httplib::Server server;
};

namespace {

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Maps the error hierarchy onto status codes.
template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    send(res, 200, f());
  } catch (const NotFoundError& e) {
    send(res, 404, {{"error", e.what()}});
  } catch (const ValidationError& e) {
    send(res, 400, {{"error", e.what()}});
  } catch (const UsageError& e) {
    send(res, 400, {{"error", e.what()}});
  } catch (const std::exception& e) {
    send(res, 500, {{"error", e.what()}});
  }
}

json body_json(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty() && allow_empty) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

HttpServer::HttpServer(ChatService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Post("/session", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return svc.create_session(body_json(req, true)); });
  });
  srv.Post("/chat", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return svc.chat(body_json(req, false)); });
  });
  srv.Post("/vote", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return svc.vote(body_json(req, false)); });
  });
  srv.Get("/report", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { return svc.report(); });
  });
  srv.Get(R"(/dialogues/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return svc.dialogue(req.matches[1]); });
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw UsageError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw UsageError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace gca
