#include "refineseg/service.hpp"

#include <httplib.h>

#include <array>
#include <json.hpp>
#include <random>
#include <set>

#include "refineseg/data.hpp"
#include "refineseg/seedgen.hpp"

namespace refineseg {

RleMask rle_encode(const BinaryMask& mask) {
  RleMask out{mask.height, mask.width, {}};
  std::uint8_t current = 0;
  int run = 0;
  for (std::uint8_t v : mask.values) {
    if (v != current) {
      out.runs.push_back(run);
      current = v;
      run = 0;
    }
    ++run;
  }
  out.runs.push_back(run);
  return out;
}

BinaryMask rle_decode(const RleMask& rle) {
  if (rle.height <= 0 || rle.width <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "rle: extents must be positive");
  }
  BinaryMask out(rle.height, rle.width);
  size_t pos = 0;
  std::uint8_t value = 0;
  for (int run : rle.runs) {
    if (run < 0 || pos + run > out.values.size()) {
      throw Error(ErrorCode::kParse, "rle: runs exceed " +
                                         shape_string(rle.height, rle.width));
    }
    std::fill_n(out.values.begin() + pos, run, value);
    pos += run;
    value ^= 1;
  }
  if (pos != out.values.size()) {
    throw Error(ErrorCode::kParse, "rle: runs cover " + std::to_string(pos) + " of " +
                                       std::to_string(out.values.size()) + " pixels");
  }
  return out;
}

namespace {

nlohmann::json rle_json(const BinaryMask& mask) {
  const RleMask r = rle_encode(mask);
  return {{"h", r.height}, {"w", r.width}, {"rle", r.runs}};
}

}  // namespace

std::string rle_to_json(const RleMask& rle) {
  return nlohmann::json{{"h", rle.height}, {"w", rle.width}, {"rle", rle.runs}}.dump();
}

RleMask rle_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    return RleMask{j.at("h").get<int>(), j.at("w").get<int>(),
                   j.at("rle").get<std::vector<int>>()};
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParse, std::string("rle: ") + ex.what());
  }
}

namespace {
constexpr char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint8_t(bytes[i]) << 16) |
                            (std::uint8_t(bytes[i + 1]) << 8) | std::uint8_t(bytes[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out += kB64[(v >> s) & 63];
  }
  const size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = std::uint8_t(bytes[i]) << 16;
    if (rest == 2) v |= std::uint8_t(bytes[i + 1]) << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += rest == 2 ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (int k = 0; k < 64; ++k) lookup[static_cast<std::uint8_t>(kB64[k])] = k;
  if (text.size() % 4 != 0) {
    throw Error(ErrorCode::kParse, "base64: length is not a multiple of 4");
  }
  std::string out;
  for (size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char ch = text[i + k];
      int d = 0;
      if (ch == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
      } else if (pad > 0 || (d = lookup[static_cast<std::uint8_t>(ch)]) < 0) {
        throw Error(ErrorCode::kParse,
                    "base64: invalid character at offset " + std::to_string(i + k));
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out += static_cast<char>((v >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(v & 0xFF);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SessionStore::Session {
  std::mutex mutex;
  std::string id;
  std::shared_ptr<const RefineNet> net;
  Image image;
  MultiScaleSeg seg;
  BinaryMask initial_mask;
  Image initial_difficulty;
  std::set<Point> fg, bg;
  std::optional<BinaryMask> ground_truth;
  std::optional<BinaryMask> refined_mask;
  long revision = 0;
  Clock::time_point last_used;

  SeedSet seeds() const {
    return SeedSet{{fg.begin(), fg.end()}, {bg.begin(), bg.end()}};
  }

  SessionView view() const {
    return SessionView{id, revision, initial_mask, initial_difficulty, seeds(),
                       refined_mask, ground_truth.has_value()};
  }
};

SessionStore::SessionStore(std::shared_ptr<const RefineNet> net, ServiceConfig config,
                           std::function<Clock::time_point()> now)
    : net_(std::move(net)), config_(config), now_(std::move(now)) {
  if (!(config_.sigma > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "service: sigma must be positive");
  }
  if (!(config_.threshold > 0.0 && config_.threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "service: threshold must lie in (0,1)");
  }
  std::random_device rd;
  id_state_ = (std::uint64_t{rd()} << 32) ^ rd();
}

std::string SessionStore::new_id() {
  // splitmix64 stepping from a random start.
  std::uint64_t z = (id_state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(z));
  return buf;
}

SessionView SessionStore::create(const Image& image, std::optional<BinaryMask> gt) {
  if (!net_) throw Error(ErrorCode::kUnavailable, "no model loaded");
  validate_image(image);
  if (image.height % 4 != 0 || image.width % 4 != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "image extents must be divisible by 4, got " +
                    shape_string(image.height, image.width));
  }
  if (image.height != image.width) {
    throw Error(ErrorCode::kInvalidArgument,
                "image must be square, got " + shape_string(image.height, image.width));
  }
  if (gt) {
    validate_mask(*gt);
    require_same_shape(image, *gt, "ground truth");
  }
  auto s = std::make_shared<Session>();
  s->net = net_;
  if (image.height != net_->config().input_size) {
    // The network is fully convolutional; only the declared size differs.
    NetConfig c = net_->config();
    c.input_size = image.height;
    s->net = std::make_shared<RefineNet>(c, net_->params());
  }
  s->image = image;
  s->seg = s->net->backbone_forward(image);
  s->initial_mask = binarize(s->seg.full, config_.threshold);
  s->initial_difficulty = difficulty_map(s->seg.full);
  s->ground_truth = std::move(gt);
  s->last_used = now_();

  std::lock_guard lock(mutex_);
  s->id = new_id();
  while (sessions_.count(s->id)) s->id = new_id();
  sessions_.emplace(s->id, s);
  return s->view();
}

std::shared_ptr<SessionStore::Session> SessionStore::find(const std::string& id) {
  if (!net_) throw Error(ErrorCode::kUnavailable, "no model loaded");
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "no session '" + id + "'");
  it->second->last_used = now_();
  return it->second;
}

SessionView SessionStore::get(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return s->view();
}

long SessionStore::add_seeds(const std::string& id, const SeedSet& delta) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  validate_seeds(delta, s->image.height, s->image.width);
  for (const Point& p : delta.foreground) {
    s->bg.erase(p);
    s->fg.insert(p);
  }
  for (const Point& p : delta.background) {
    s->fg.erase(p);
    s->bg.insert(p);
  }
  return ++s->revision;
}

RefineOutcome SessionStore::refine(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  const SeedChannels ch =
      render_seeds(s->seeds(), s->image.height, s->image.width, config_.sigma);
  const ProbMap p = s->net->refine_forward(s->seg, ch);
  RefineOutcome out;
  out.mask = binarize(p, config_.threshold);
  out.difficulty = difficulty_map(p);
  if (s->ground_truth) out.metrics = metrics(out.mask, *s->ground_truth);
  s->refined_mask = out.mask;
  out.revision = ++s->revision;
  return out;
}

void SessionStore::remove(const std::string& id) {
  if (!net_) throw Error(ErrorCode::kUnavailable, "no model loaded");
  std::lock_guard lock(mutex_);
  if (sessions_.erase(id) == 0) throw Error(ErrorCode::kNotFound, "no session '" + id + "'");
}

int SessionStore::evict_idle() {
  const auto now = now_();
  std::lock_guard lock(mutex_);
  int evicted = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second->last_used > config_.idle_timeout) {
      it = sessions_.erase(it);
      ++evicted;
    } else {
      ++it;
    }
  }
  return evicted;
}

size_t SessionStore::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

// ---------------------------------------------------------------------------
// HTTP layer

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kUnavailable:
      return 503;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kOutOfRange:
    case ErrorCode::kParse:
      return 400;
    default:
      return 500;
  }
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  send_json(res, http_status(e.code()),
            {{"code", error_code_name(e.code())}, {"message", e.what()}});
}

std::string difficulty_b64(const Image& d) { return base64_encode(encode_image(d)); }

nlohmann::json seeds_json(const SeedSet& s) { return nlohmann::json::parse(seeds_to_json(s)); }

nlohmann::json metrics_json(const MetricsRecord& m) {
  return {{"dice", m.dice}, {"sen", m.sen}, {"ppv", m.ppv}};
}

template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      send_json(res, 500, {{"code", "internal"}, {"message", e.what()}});
    }
  };
}

}  // namespace

HttpService::HttpService(std::shared_ptr<SessionStore> store)
    : store_(std::move(store)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpService::~HttpService() { stop(); }

void HttpService::install_routes() {
  auto store = store_;
  httplib::Server& srv = *server_;

  srv.Post("/sessions", guarded([store](const httplib::Request& req,
                                        httplib::Response& res) {
    if (!req.has_file("image")) {
      throw Error(ErrorCode::kInvalidArgument, "multipart field 'image' is required");
    }
    const Image image = decode_image(req.get_file_value("image").content);
    std::optional<BinaryMask> gt;
    if (req.has_file("gt")) gt = decode_mask(req.get_file_value("gt").content);
    const SessionView v = store->create(image, std::move(gt));
    send_json(res, 201,
              {{"session_id", v.id},
               {"revision", v.revision},
               {"initial_mask", rle_json(v.initial_mask)},
               {"difficulty_map", difficulty_b64(v.initial_difficulty)}});
  }));

  srv.Get(R"(/sessions/([0-9a-zA-Z]+))",
          guarded([store](const httplib::Request& req, httplib::Response& res) {
            const SessionView v = store->get(req.matches[1]);
            nlohmann::json j{{"session_id", v.id},
                             {"revision", v.revision},
                             {"initial_mask", rle_json(v.initial_mask)},
                             {"difficulty_map", difficulty_b64(v.initial_difficulty)},
                             {"seeds", seeds_json(v.seeds)},
                             {"has_gt", v.has_ground_truth}};
            j["refined_mask"] =
                v.refined_mask ? rle_json(*v.refined_mask) : nlohmann::json(nullptr);
            send_json(res, 200, j);
          }));

  srv.Post(R"(/sessions/([0-9a-zA-Z]+)/seeds)",
           guarded([store](const httplib::Request& req, httplib::Response& res) {
             const SeedSet delta = seeds_from_json(req.body.empty() ? "{}" : req.body);
             const long rev = store->add_seeds(req.matches[1], delta);
             send_json(res, 200, {{"revision", rev}});
           }));

  srv.Post(R"(/sessions/([0-9a-zA-Z]+)/refine)",
           guarded([store](const httplib::Request& req, httplib::Response& res) {
             const RefineOutcome r = store->refine(req.matches[1]);
             nlohmann::json j{{"revision", r.revision},
                              {"refined_mask", rle_json(r.mask)},
                              {"difficulty_map", difficulty_b64(r.difficulty)}};
             if (r.metrics) j["metrics"] = metrics_json(*r.metrics);
             send_json(res, 200, j);
           }));

  srv.Delete(R"(/sessions/([0-9a-zA-Z]+))",
             guarded([store](const httplib::Request& req, httplib::Response& res) {
               store->remove(req.matches[1]);
               send_json(res, 200, {{"deleted", std::string(req.matches[1])}});
             }));
}

int HttpService::bind(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host)
                              : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void HttpService::start_janitor() {
  janitor_ = std::thread([this] {
    std::unique_lock lock(janitor_mutex_);
    while (!stopping_) {
      janitor_cv_.wait_for(lock, std::chrono::seconds(30));
      if (!stopping_) store_->evict_idle();
    }
  });
}

int HttpService::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  start_janitor();
  server_->wait_until_ready();
  return bound;
}

void HttpService::listen(const std::string& host, int port) {
  bind(host, port);
  start_janitor();
  server_->listen_after_bind();
}

void HttpService::stop() {
  {
    std::lock_guard lock(janitor_mutex_);
    stopping_ = true;
  }
  janitor_cv_.notify_all();
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
  if (janitor_.joinable()) janitor_.join();
}

}  // namespace refineseg
