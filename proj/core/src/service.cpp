#include "coalfake/service.hpp"

#include <httplib.h>

#include <chrono>

#include "coalfake/util.hpp"

namespace coalfake::service {

using nlohmann::json;

CommandQueue::CommandQueue() : worker_([this] { loop(); }) {}

CommandQueue::~CommandQueue() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

void CommandQueue::loop() {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    job();  // exceptions land in the caller's future
  }
}

struct Service::Http {
  httplib::Server server;
};

namespace {

Response error(int status, const std::string& message) { return {status, {{"error", message}}}; }

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto slash = path.find('/', start);
    const auto seg = path.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
    if (!seg.empty()) out.push_back(seg);
    if (slash == std::string::npos) break;
    start = slash + 1;
  }
  return out;
}

}  // namespace

Service::Service(pipeline::Pipeline& pipeline, Options opts)
    : pipeline_(pipeline), opts_(std::move(opts)), http_(std::make_unique<Http>()) {
  publish();

  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const Response r = handle(req.method, req.path, req.body, req.get_header_value("X-Coalfake-Token"));
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body.dump(), "application/json");
  };
  auto& s = http_->server;
  s.set_default_headers({{"Access-Control-Allow-Origin", opts_.cors_origin},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                         {"Access-Control-Allow-Headers", "Content-Type, X-Coalfake-Token"}});
  s.Get(R"(/.*)", route);
  s.Post(R"(/.*)", route);
  s.Options(R"(/.*)", route);
}

Service::~Service() { stop(); }

void Service::publish() {
  auto snap = std::make_shared<Snapshot>();
  snap->status = pipeline_.status_json();
  snap->status["run_id"] = opts_.run_id;
  snap->tasks = pipeline_.tasks_json();
  {
    std::lock_guard lock(snap_mu_);
    snap_ = std::move(snap);
  }
  {
    std::lock_guard lock(changed_mu_);
    ++version_;
  }
  changed_.notify_all();
}

std::shared_ptr<const Service::Snapshot> Service::snapshot() const {
  std::lock_guard lock(snap_mu_);
  return snap_;
}

json Service::status_snapshot() const { return snapshot()->status; }

Response Service::handle(const std::string& method, const std::string& path, const std::string& body,
                         const std::string& token) {
  if (method == "OPTIONS") return {204, nullptr};
  if (!opts_.token.empty() && token != opts_.token) return error(401, "missing or invalid token");

  const auto seg = split_path(path);
  if (seg.size() < 3 || seg[0] != "runs") return error(404, "no route for " + path);
  if (seg[1] != opts_.run_id) return error(404, "unknown run '" + seg[1] + "'");

  if (seg.size() == 3 && seg[2] == "status") {
    if (method != "GET") return error(405, "method not allowed");
    return {200, snapshot()->status};
  }
  if (seg.size() == 3 && seg[2] == "tasks") {
    if (method != "GET") return error(405, "method not allowed");
    return {200, snapshot()->tasks};
  }
  if (seg.size() == 5 && seg[2] == "tasks" && seg[4] == "label") {
    if (method != "POST") return error(405, "method not allowed");
    return post_label(seg[3], body);
  }
  return error(404, "no route for " + path);
}

Response Service::post_label(const std::string& record_id, const std::string& body) {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error&) {
    return error(422, "body must be a JSON object");
  }
  if (!req.is_object() || !req.contains("label") || !req["label"].is_string())
    return error(422, "body needs a string \"label\"");
  const auto raw = req["label"].get<std::string>();
  const auto lowered = [&] {
    std::string s = trim(raw);
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }();
  if (lowered != "fake" && lowered != "real") return error(422, "label must be \"fake\" or \"real\", got \"" + raw + "\"");
  const Label label = lowered == "fake" ? Label::kFake : Label::kReal;
  const std::string annotator =
      req.contains("annotator") && req["annotator"].is_string() ? req["annotator"].get<std::string>() : "anonymous";

  try {
    const auto remaining =
        execute([&](pipeline::Pipeline& p) { return p.apply_human_label(record_id, label, annotator); });
    return {200, {{"queue_size", remaining}}};
  } catch (const NotFound& e) {
    return error(404, e.what());
  } catch (const Conflict& e) {
    return error(409, e.what());
  } catch (const InvalidArgument& e) {
    return error(422, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

void Service::drive(std::stop_token stop) {
  using clock = std::chrono::steady_clock;
  std::optional<clock::time_point> waiting_since;
  const auto timeout = pipeline_.config().annotator.human_timeout_s;
  while (!stop.stop_requested()) {
    const auto [progressed, status] = execute([](pipeline::Pipeline& p) {
      const bool moved = p.step();
      return std::pair{moved, p.state().status};
    });
    if (status == pipeline::Status::kDone) return;
    if (progressed) {
      waiting_since.reset();
      continue;
    }
    if (!waiting_since) waiting_since = clock::now();
    if (timeout && clock::now() - *waiting_since >= std::chrono::duration<double>(*timeout)) {
      execute([](pipeline::Pipeline& p) {
        if (p.state().status == pipeline::Status::kAwaitingHuman) p.expire_human_queue();
      });
      waiting_since.reset();
      continue;
    }
    std::unique_lock lock(changed_mu_);
    const auto seen = version_;
    changed_.wait_for(lock, std::chrono::milliseconds(200), [&] { return version_ != seen; });
  }
}

int Service::bind(const std::string& host, int port) {
  if (port == 0) return http_->server.bind_to_any_port(host);
  if (!http_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Service::listen() { http_->server.listen_after_bind(); }

void Service::stop() {
  if (http_) http_->server.stop();
}

}  // namespace coalfake::service
