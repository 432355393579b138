#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <stop_token>
#include <string>
#include <thread>

#include "coalfake/pipeline.hpp"

namespace coalfake::service {

/// Runs submitted closures one at a time on a dedicated thread.
class CommandQueue {
 public:
  CommandQueue();
  ~CommandQueue();
  CommandQueue(const CommandQueue&) = delete;
  CommandQueue& operator=(const CommandQueue&) = delete;

  template <class F>
  auto submit(F f) -> std::future<decltype(f())> {
    auto task = std::make_shared<std::packaged_task<decltype(f())()>>(std::move(f));
    auto fut = task->get_future();
    {
      std::lock_guard lock(mu_);
      jobs_.emplace_back([task] { (*task)(); });
    }
    cv_.notify_one();
    return fut;
  }

 private:
  void loop();

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::thread worker_;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

struct Options {
  std::string run_id = "default";
  std::string token;  // when set, requests must carry it in X-Coalfake-Token
  std::string cors_origin = "*";
};

/// HTTP front end over one pipeline. All pipeline mutation goes through the command queue;
/// GET requests read the most recent published snapshot.
class Service {
 public:
  Service(pipeline::Pipeline& pipeline, Options opts);
  ~Service();

  /// Routes a request without a socket. `token` is the X-Coalfake-Token header value.
  Response handle(const std::string& method, const std::string& path, const std::string& body,
                  const std::string& token = "");

  /// Runs `f(pipeline)` on the command queue, then republishes the snapshot.
  template <class F>
  auto execute(F f) -> decltype(f(std::declval<pipeline::Pipeline&>())) {
    return queue_
        .submit([this, f = std::move(f)]() mutable {
          struct Publish {
            Service* s;
            ~Publish() { s->publish(); }
          } guard{this};
          return f(pipeline_);
        })
        .get();
  }

  /// Advances the run until it is done or `stop` is requested, waiting whenever the human
  /// queue is open. Expires the queue after `human_timeout_s` when configured.
  void drive(std::stop_token stop);

  /// Binds to host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void listen();
  void stop();

  nlohmann::json status_snapshot() const;

 private:
  struct Snapshot {
    nlohmann::json status;
    nlohmann::json tasks;
  };
  struct Http;

  void publish();
  std::shared_ptr<const Snapshot> snapshot() const;
  Response post_label(const std::string& record_id, const std::string& body);

  pipeline::Pipeline& pipeline_;
  Options opts_;
  CommandQueue queue_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<const Snapshot> snap_;
  std::condition_variable changed_;
  std::mutex changed_mu_;
  std::uint64_t version_ = 0;
  std::unique_ptr<Http> http_;
};

}  // namespace coalfake::service
