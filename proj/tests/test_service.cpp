#include <gtest/gtest.h>

#include <atomic>
#include <httplib.h>
#include <json.hpp>
#include <thread>

#include "refineseg/data.hpp"
#include "refineseg/seedgen.hpp"
#include "refineseg/service.hpp"
#include "test_util.hpp"

using namespace refineseg;
using namespace refineseg::testing;
using json = nlohmann::json;

namespace {

constexpr int kSize = 32;

std::shared_ptr<const RefineNet> small_net() {
  static const auto net = [] {
    NetConfig c;
    c.input_size = kSize;
    c.base_channels = 4;
    return std::make_shared<const RefineNet>(c, init_params(c, 3));
  }();
  return net;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kNumeric;
}

struct FakeClock {
  std::shared_ptr<SessionStore::Clock::time_point> t =
      std::make_shared<SessionStore::Clock::time_point>();
  std::function<SessionStore::Clock::time_point()> fn() const {
    auto p = t;
    return [p] { return *p; };
  }
  void advance(std::chrono::seconds s) { *t += s; }
};

}  // namespace

// ---------------------------------------------------------------------------
// Wire formats

TEST(Rle, RoundTripAndLayout) {
  const BinaryMask m = mask_from_rows({"0011", "1000"});
  const RleMask r = rle_encode(m);
  EXPECT_EQ(r.height, 2);
  EXPECT_EQ(r.width, 4);
  EXPECT_EQ(r.runs, (std::vector<int>{2, 3, 3}));
  EXPECT_EQ(rle_decode(r), m);
  // A mask starting with 1 opens with an empty 0-run.
  EXPECT_EQ(rle_encode(mask_from_rows({"10"})).runs, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(rle_decode(rle_from_json(rle_to_json(r))), m);
  const json j = json::parse(rle_to_json(r));
  EXPECT_EQ(j["h"], 2);
  EXPECT_EQ(j["w"], 4);
}

TEST(Rle, RandomRoundTrip) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const BinaryMask m = random_mask(rng, 1 + static_cast<int>(rng.below(20)),
                                     1 + static_cast<int>(rng.below(20)), rng.uniform());
    ASSERT_EQ(rle_decode(rle_encode(m)), m);
  }
}

TEST(Rle, RejectsInconsistentRuns) {
  EXPECT_THROW(rle_decode(RleMask{2, 2, {1, 1}}), Error);
  EXPECT_THROW(rle_decode(RleMask{2, 2, {5}}), Error);
  EXPECT_THROW(rle_decode(RleMask{2, 2, {-1, 5}}), Error);
  EXPECT_THROW(rle_from_json("{\"h\":2}"), Error);
  EXPECT_THROW(rle_from_json("nope"), Error);
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  EXPECT_EQ(base64_encode(""), "");
  EXPECT_EQ(base64_encode("f"), "Zg==");
  EXPECT_EQ(base64_encode("fo"), "Zm8=");
  EXPECT_EQ(base64_encode("foo"), "Zm9v");
  EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
  std::string bytes;
  for (int i = 0; i < 256; ++i) bytes.push_back(static_cast<char>(i));
  EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  EXPECT_THROW(base64_decode("Zm9"), Error);
  EXPECT_THROW(base64_decode("Zm9*"), Error);
}

// ---------------------------------------------------------------------------
// Session rules

TEST(SessionStore, CreateGivesShapedOutputs) {
  SessionStore store(small_net());
  const Sample s = make_phantom(1, kSize);
  const SessionView v = store.create(s.image, std::nullopt);
  EXPECT_EQ(v.revision, 0);
  EXPECT_EQ(v.initial_mask.height, kSize);
  EXPECT_EQ(v.initial_difficulty.width, kSize);
  EXPECT_FALSE(v.refined_mask);
  EXPECT_TRUE(v.seeds.empty());
  EXPECT_EQ(store.size(), 1u);
  // The model is frozen: same image, same initial mask.
  const SessionView w = store.create(s.image, std::nullopt);
  EXPECT_NE(v.id, w.id);
  EXPECT_EQ(v.initial_mask, w.initial_mask);
}

TEST(SessionStore, OtherSquareSizesUseTheSameWeights) {
  SessionStore store(small_net());
  const Sample s = make_phantom(2, 64);
  const SessionView v = store.create(s.image, s.mask);
  EXPECT_EQ(v.initial_mask.height, 64);
  EXPECT_EQ(store.refine(v.id).mask.width, 64);
}

TEST(SessionStore, RejectsBadImages) {
  SessionStore store(small_net());
  try {
    store.create(Image(63, 63, 0.5), std::nullopt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    EXPECT_NE(std::string(e.what()).find("divisible by 4"), std::string::npos);
  }
  EXPECT_EQ(code_of([&] { store.create(Image(32, 64, 0.5), std::nullopt); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { store.create(Image(32, 32, 2.0), std::nullopt); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { store.create(Image(32, 32, 0.5), BinaryMask(16, 16)); }),
            ErrorCode::kShapeMismatch);
}

TEST(SessionStore, SeedRules) {
  SessionStore store(small_net());
  const std::string id = store.create(make_phantom(3, kSize).image, std::nullopt).id;
  EXPECT_EQ(store.add_seeds(id, {}), 1);
  EXPECT_TRUE(store.get(id).seeds.empty());
  EXPECT_EQ(store.add_seeds(id, {{{1, 1}, {2, 2}}, {}}), 2);
  EXPECT_EQ(store.add_seeds(id, {{{3, 3}}, {{1, 1}}}), 3);
  const SeedSet s = store.get(id).seeds;
  EXPECT_EQ(s.foreground, (PointList{{2, 2}, {3, 3}}));
  EXPECT_EQ(s.background, (PointList{{1, 1}}));

  // Out of bounds: whole delta rejected, offending point named, no revision.
  try {
    store.add_seeds(id, {{{4, 4}, {kSize, 0}}, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutOfRange);
    EXPECT_NE(std::string(e.what()).find("32"), std::string::npos) << e.what();
  }
  EXPECT_EQ(code_of([&] { store.add_seeds(id, {{{5, 5}}, {{5, 5}}}); }),
            ErrorCode::kInvalidArgument);
  const SessionView v = store.get(id);
  EXPECT_EQ(v.revision, 3);
  EXPECT_EQ(v.seeds, s);
}

TEST(SessionStore, RefineIsTotalAndRepeatable) {
  SessionStore store(small_net());
  const Sample smp = make_phantom(4, kSize);
  const std::string id = store.create(smp.image, smp.mask).id;
  const RefineOutcome a = store.refine(id);
  EXPECT_EQ(a.revision, 1);
  EXPECT_EQ(a.mask.height, kSize);
  ASSERT_TRUE(a.metrics);
  const RefineOutcome b = store.refine(id);
  EXPECT_EQ(b.revision, 2);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.difficulty, b.difficulty);
  EXPECT_EQ(store.get(id).refined_mask, b.mask);
  EXPECT_TRUE(store.get(id).has_ground_truth);

  const std::string plain = store.create(smp.image, std::nullopt).id;
  EXPECT_FALSE(store.refine(plain).metrics);
}

TEST(SessionStore, SeedsChangeTheRefinement) {
  SessionStore store(small_net());
  const Sample smp = make_phantom(5, kSize);
  const std::string id = store.create(smp.image, std::nullopt).id;
  const BinaryMask before = store.refine(id).mask;
  SeedSet seeds;
  for (int r = 0; r < kSize; r += 4) {
    for (int c = 0; c < kSize; c += 4) seeds.foreground.push_back({r, c});
  }
  store.add_seeds(id, seeds);
  EXPECT_FALSE(store.refine(id).mask == before);
}

TEST(SessionStore, UnknownAndRemoved) {
  SessionStore store(small_net());
  EXPECT_EQ(code_of([&] { store.get("nope"); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { store.refine("nope"); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { store.add_seeds("nope", {}); }), ErrorCode::kNotFound);
  const std::string id = store.create(Image(kSize, kSize, 0.3), std::nullopt).id;
  store.remove(id);
  EXPECT_EQ(code_of([&] { store.get(id); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { store.remove(id); }), ErrorCode::kNotFound);
}

TEST(SessionStore, NoModelIsUnavailable) {
  SessionStore store(nullptr);
  EXPECT_EQ(code_of([&] { store.create(Image(kSize, kSize, 0.3), std::nullopt); }),
            ErrorCode::kUnavailable);
  EXPECT_EQ(code_of([&] { store.get("x"); }), ErrorCode::kUnavailable);
}

TEST(SessionStore, IdleEviction) {
  FakeClock clock;
  ServiceConfig cfg;
  cfg.idle_timeout = std::chrono::seconds(60);
  SessionStore store(small_net(), cfg, clock.fn());
  const std::string a = store.create(Image(kSize, kSize, 0.3), std::nullopt).id;
  clock.advance(std::chrono::seconds(40));
  const std::string b = store.create(Image(kSize, kSize, 0.4), std::nullopt).id;
  clock.advance(std::chrono::seconds(30));
  EXPECT_EQ(store.evict_idle(), 1);
  EXPECT_EQ(code_of([&] { store.get(a); }), ErrorCode::kNotFound);
  // Access refreshes the idle timer.
  clock.advance(std::chrono::seconds(50));
  store.get(b);
  clock.advance(std::chrono::seconds(50));
  EXPECT_EQ(store.evict_idle(), 0);
  clock.advance(std::chrono::seconds(61));
  EXPECT_EQ(store.evict_idle(), 1);
  EXPECT_EQ(store.size(), 0u);
}

TEST(SessionStore, ConfigValidation) {
  ServiceConfig cfg;
  cfg.sigma = 0;
  EXPECT_THROW(SessionStore(small_net(), cfg), Error);
  cfg = {};
  cfg.threshold = 1.0;
  EXPECT_THROW(SessionStore(small_net(), cfg), Error);
}

TEST(SessionStore, NoCrossSessionInterference) {
  // Two sessions driven from separate threads must answer exactly as when
  // each is driven alone.
  const Sample a = make_phantom(7, kSize), b = make_phantom(8, kSize);
  auto script = [](SessionStore& store, const std::string& id, int salt) {
    std::vector<BinaryMask> out;
    for (int k = 0; k < 8; ++k) {
      store.add_seeds(id, {{{(k * 3 + salt) % kSize, (k * 5) % kSize}},
                           {{(k * 7 + salt) % kSize, (k * 11 + 1) % kSize}}});
      out.push_back(store.refine(id).mask);
    }
    return out;
  };
  SessionStore serial(small_net());
  const auto ref_a = script(serial, serial.create(a.image, std::nullopt).id, 1);
  const auto ref_b = script(serial, serial.create(b.image, std::nullopt).id, 2);

  SessionStore shared(small_net());
  const std::string ia = shared.create(a.image, std::nullopt).id;
  const std::string ib = shared.create(b.image, std::nullopt).id;
  std::vector<BinaryMask> got_a, got_b;
  std::thread ta([&] { got_a = script(shared, ia, 1); });
  std::thread tb([&] { got_b = script(shared, ib, 2); });
  ta.join();
  tb.join();
  EXPECT_EQ(got_a, ref_a);
  EXPECT_EQ(got_b, ref_b);
  EXPECT_EQ(shared.get(ia).revision, 16);
}

TEST(SessionStore, ConcurrentMutationsHaveNoGaps) {
  SessionStore store(small_net());
  const std::string id = store.create(Image(kSize, kSize, 0.5), std::nullopt).id;
  std::vector<std::thread> threads;
  std::vector<std::vector<long>> revs(4);
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int k = 0; k < 25; ++k) revs[t].push_back(store.add_seeds(id, {{{t, k}}, {}}));
    });
  }
  for (auto& th : threads) th.join();
  std::vector<long> all;
  for (const auto& r : revs) all.insert(all.end(), r.begin(), r.end());
  std::sort(all.begin(), all.end());
  for (size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], static_cast<long>(i) + 1);
  EXPECT_EQ(store.get(id).seeds.foreground.size(), 100u);
}

// ---------------------------------------------------------------------------
// HTTP

class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    store_ = std::make_shared<SessionStore>(small_net());
    service_ = std::make_unique<HttpService>(store_);
    port_ = service_->start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override { service_->stop(); }

  httplib::Result create(const std::string& image, const std::string& gt = "") {
    httplib::MultipartFormDataItems items{
        {"image", image, "image.img", "application/octet-stream"}};
    if (!gt.empty()) items.push_back({"gt", gt, "gt.msk", "application/octet-stream"});
    return client_->Post("/sessions", items);
  }

  std::shared_ptr<SessionStore> store_;
  std::unique_ptr<HttpService> service_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

TEST_F(HttpTest, FullRoundTrip) {
  const Sample s = make_phantom(9, kSize);
  auto res = create(encode_image(s.image), encode_mask(s.mask));
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 201) << res->body;
  const json created = json::parse(res->body);
  const std::string id = created["session_id"];
  EXPECT_EQ(created["revision"], 0);
  const BinaryMask initial = rle_decode(rle_from_json(created["initial_mask"].dump()));
  EXPECT_EQ(initial, store_->get(id).initial_mask);
  const Image diff = decode_image(base64_decode(created["difficulty_map"]));
  EXPECT_EQ(diff.height, kSize);

  res = client_->Post("/sessions/" + id + "/seeds", R"({"fg":[[10,11]],"bg":[[0,0]]})",
                      "application/json");
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(json::parse(res->body)["revision"], 1);

  res = client_->Post("/sessions/" + id + "/refine", "", "application/json");
  ASSERT_EQ(res->status, 200) << res->body;
  const json refined = json::parse(res->body);
  EXPECT_EQ(refined["revision"], 2);
  ASSERT_TRUE(refined.contains("metrics"));
  const BinaryMask mask = rle_decode(rle_from_json(refined["refined_mask"].dump()));
  EXPECT_EQ(mask, store_->refine(id).mask);

  res = client_->Get("/sessions/" + id);
  ASSERT_EQ(res->status, 200);
  const json view = json::parse(res->body);
  EXPECT_EQ(view["seeds"]["fg"], json::parse("[[10,11]]"));
  EXPECT_EQ(view["seeds"]["bg"], json::parse("[[0,0]]"));
  EXPECT_EQ(view["has_gt"], true);
  EXPECT_FALSE(view["refined_mask"].is_null());

  res = client_->Delete("/sessions/" + id);
  ASSERT_EQ(res->status, 200);
  res = client_->Get("/sessions/" + id);
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(json::parse(res->body)["code"], "not_found");
}

TEST_F(HttpTest, FreshSessionHasNullRefinedMask) {
  auto res = create(encode_pgm(make_phantom(10, kSize).image));
  ASSERT_EQ(res->status, 201) << res->body;
  const std::string id = json::parse(res->body)["session_id"];
  const json view = json::parse(client_->Get("/sessions/" + id)->body);
  EXPECT_TRUE(view["refined_mask"].is_null());
  EXPECT_EQ(view["has_gt"], false);
}

TEST_F(HttpTest, ErrorsMapToStatusCodes) {
  auto res = create("garbage");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["code"], "parse_error");

  res = create(encode_image(Image(62, 62, 0.5)));
  EXPECT_EQ(res->status, 400);
  EXPECT_NE(json::parse(res->body)["message"].get<std::string>().find("divisible"),
            std::string::npos);

  res = client_->Post("/sessions", "", "application/json");
  EXPECT_EQ(res->status, 400);

  const std::string id =
      json::parse(create(encode_image(Image(kSize, kSize, 0.5)))->body)["session_id"];
  res = client_->Post("/sessions/" + id + "/seeds", R"({"fg":[[99,0]]})",
                      "application/json");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["code"], "out_of_range");
  res = client_->Post("/sessions/" + id + "/seeds", "{not json", "application/json");
  EXPECT_EQ(res->status, 400);
  res = client_->Post("/sessions/deadbeef/refine", "", "application/json");
  EXPECT_EQ(res->status, 404);
}

TEST(HttpNoModel, ReturnsServiceUnavailable) {
  HttpService service(std::make_shared<SessionStore>(nullptr));
  const int port = service.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);
  httplib::MultipartFormDataItems items{
      {"image", encode_image(Image(kSize, kSize, 0.5)), "i.img", "application/octet-stream"}};
  auto res = client.Post("/sessions", items);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 503);
  EXPECT_EQ(json::parse(res->body)["code"], "unavailable");
  service.stop();
}

TEST_F(HttpTest, ParallelClientsOnSeparateSessions) {
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) {
    ids.push_back(json::parse(create(encode_image(make_phantom(20 + i, kSize).image))->body)
                      ["session_id"]);
  }
  std::atomic<int> failures{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port_);
      for (int k = 0; k < 5; ++k) {
        const std::string body =
            "{\"fg\":[[" + std::to_string(k) + "," + std::to_string(i) + "]]}";
        auto r = c.Post("/sessions/" + ids[i] + "/seeds", body, "application/json");
        if (!r || r->status != 200) ++failures;
        r = c.Post("/sessions/" + ids[i] + "/refine", "", "application/json");
        if (!r || r->status != 200) ++failures;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(failures.load(), 0);
  for (int i = 0; i < 4; ++i) {
    const SessionView v = store_->get(ids[i]);
    EXPECT_EQ(v.revision, 10);
    EXPECT_EQ(v.seeds.foreground.size(), 5u);
    for (const Point& p : v.seeds.foreground) EXPECT_EQ(p.col, i);
  }
}
