#pragma once

// Session-oriented inference service for interactive refinement.
//
// SessionStore holds the state and rules and is usable without HTTP.
// HttpService maps it onto JSON endpoints:
//
//   POST   /sessions              multipart: "image" (+ optional "gt")
//   GET    /sessions/{id}
//   POST   /sessions/{id}/seeds   body {"fg":[[r,c],...],"bg":[[r,c],...]}
//   POST   /sessions/{id}/refine
//   DELETE /sessions/{id}
//
// Errors are {"code": "...", "message": "..."} with 400, 404 or 503.

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "refineseg/evaluator.hpp"
#include "refineseg/nets.hpp"

namespace httplib {
class Server;
}

namespace refineseg {

// Row-major run lengths alternating 0-runs and 1-runs, starting with a
// (possibly empty) 0-run.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<int> runs;
};

RleMask rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const RleMask& rle);
std::string rle_to_json(const RleMask& rle);
RleMask rle_from_json(const std::string& text);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

struct ServiceConfig {
  double sigma = kDefaultSigma;
  double threshold = 0.5;
  std::chrono::seconds idle_timeout{30 * 60};
};

struct SessionView {
  std::string id;
  long revision = 0;
  BinaryMask initial_mask;
  Image initial_difficulty;
  SeedSet seeds;
  std::optional<BinaryMask> refined_mask;
  bool has_ground_truth = false;
};

struct RefineOutcome {
  long revision = 0;
  BinaryMask mask;
  Image difficulty;
  std::optional<MetricsRecord> metrics;
};

class SessionStore {
 public:
  using Clock = std::chrono::steady_clock;

  // `net` may be null: every session operation then fails as unavailable.
  SessionStore(std::shared_ptr<const RefineNet> net, ServiceConfig config = {},
               std::function<Clock::time_point()> now = Clock::now);

  SessionView create(const Image& image, std::optional<BinaryMask> ground_truth);
  SessionView get(const std::string& id);
  // Union per class; a point sent in the other class moves there. Rejects the
  // whole delta when any point is out of bounds or appears in both lists.
  long add_seeds(const std::string& id, const SeedSet& delta);
  RefineOutcome refine(const std::string& id);
  void remove(const std::string& id);

  // Drops sessions idle for longer than the timeout; returns how many.
  int evict_idle();
  size_t size() const;
  const ServiceConfig& config() const { return config_; }

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id);
  std::string new_id();

  std::shared_ptr<const RefineNet> net_;
  ServiceConfig config_;
  std::function<Clock::time_point()> now_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t id_state_;
};

class HttpService {
 public:
  explicit HttpService(std::shared_ptr<SessionStore> store);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Starts listening in a background thread. Port 0 picks a free port.
  // Returns the bound port.
  int start(const std::string& host, int port);
  // Blocks in the calling thread until stop() is called from elsewhere.
  void listen(const std::string& host, int port);
  void stop();

 private:
  void install_routes();
  int bind(const std::string& host, int port);
  void start_janitor();

  std::shared_ptr<SessionStore> store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::thread janitor_;
  std::mutex janitor_mutex_;
  std::condition_variable janitor_cv_;
  bool stopping_ = false;
};

}  // namespace refineseg
