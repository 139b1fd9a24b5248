#include <gtest/gtest.h>

#include <algorithm>
#include <mutex>
#include <thread>

#include "cfmd/bridge_client.hpp"
#include "cfmd/scoring.hpp"
#include "mock_bridge.hpp"

namespace {

using cfmd::BridgeClient;
using cfmd::BridgeError;
using cfmd::testing::MockBridge;

cfmd::ProviderSpec spec_for(const std::string& url, const std::string& model = MockBridge::kModel) {
    cfmd::ProviderSpec s;
    s.provider_id = "remote";
    s.endpoint = url;
    s.model_name = model;
    s.timeout = std::chrono::milliseconds(5000);
    return s;
}

const cfmd::RetryPolicy kFastRetry{3, std::chrono::milliseconds(1)};

// Canned-response transport that records concurrency and attempts.
class FakeTransport final : public cfmd::Transport {
public:
    explicit FakeTransport(std::function<cfmd::HttpResponse(int attempt)> respond, std::chrono::milliseconds delay = {})
        : respond_(std::move(respond)), delay_(delay) {}

    cfmd::HttpResponse post(const std::string&, const std::string& path, const std::string& body,
                            std::chrono::milliseconds) override {
        const int now = ++in_flight_;
        {
            std::lock_guard lock(mu_);
            peak_ = std::max(peak_, now);
            bodies_.push_back(path + " " + body);
        }
        std::this_thread::sleep_for(delay_);
        const int attempt = attempts_++;
        --in_flight_;
        return respond_(attempt);
    }

    int peak() const { return peak_; }
    int attempts() const { return attempts_; }
    std::vector<std::string> bodies() const {
        std::lock_guard lock(mu_);
        return bodies_;
    }

private:
    std::function<cfmd::HttpResponse(int)> respond_;
    std::chrono::milliseconds delay_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> attempts_{0};
    int peak_ = 0;
    mutable std::mutex mu_;
    std::vector<std::string> bodies_;
};

cfmd::HttpResponse ok_logprobs() { return {200, R"({"tokens":["a","b"],"logprobs":[-0.5,-1.0]})"}; }

TEST(BridgeLogprobs, DirectMapping) {
    auto t = std::make_shared<FakeTransport>([](int) { return ok_logprobs(); });
    BridgeClient c(spec_for("http://x"), t);
    const auto ts = c.fetch_logprobs("a b");
    EXPECT_EQ(ts.tokens, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(ts.logprobs, (std::vector<double>{-0.5, -1.0}));
    EXPECT_EQ(ts.provider_id, "remote");
    EXPECT_EQ(nlohmann::json::parse(t->bodies()[0].substr(t->bodies()[0].find(' ') + 1)),
              (nlohmann::json{{"model", MockBridge::kModel}, {"text", "a b"}}));
}

TEST(BridgeLogprobs, LengthMismatchIsProtocolError) {
    auto t = std::make_shared<FakeTransport>([](int) {
        return cfmd::HttpResponse{200, R"({"tokens":["a","b"],"logprobs":[-0.5,-1.0,-2.0]})"};
    });
    BridgeClient c(spec_for("http://x"), t);
    try {
        c.fetch_logprobs("a b");
        FAIL();
    } catch (const BridgeError& e) {
        EXPECT_EQ(e.kind(), BridgeError::Kind::protocol);
    }
}

TEST(BridgeLogprobs, RejectsPositiveOrNonFiniteLogprobs) {
    for (const char* body : {R"({"tokens":["a"],"logprobs":[0.5]})", R"({"tokens":["a"],"logprobs":[null]})",
                             R"({"tokens":"a","logprobs":[-1]})", "not json"}) {
        auto t = std::make_shared<FakeTransport>([body](int) { return cfmd::HttpResponse{200, body}; });
        BridgeClient c(spec_for("http://x"), t);
        EXPECT_THROW(c.fetch_logprobs("a"), BridgeError) << body;
    }
}

TEST(BridgeLogprobs, SequenceLogprobCrossCheck) {
    auto good = std::make_shared<FakeTransport>([](int) {
        return cfmd::HttpResponse{200, R"({"tokens":["a","b"],"logprobs":[-0.5,-1.0],"sequence_logprob":-1.50005})"};
    });
    EXPECT_NO_THROW(BridgeClient(spec_for("http://x"), good).fetch_logprobs("a b"));
    auto bad = std::make_shared<FakeTransport>([](int) {
        return cfmd::HttpResponse{200, R"({"tokens":["a","b"],"logprobs":[-0.5,-1.0],"sequence_logprob":-1.6})"};
    });
    EXPECT_THROW(BridgeClient(spec_for("http://x"), bad).fetch_logprobs("a b"), BridgeError);
}

TEST(BridgeRetry, RetriesOn503ThenSucceeds) {
    auto t = std::make_shared<FakeTransport>([](int attempt) {
        return attempt < 2 ? cfmd::HttpResponse{503, R"({"error":{"code":"model_loading","message":"wait"}})"} : ok_logprobs();
    });
    BridgeClient c(spec_for("http://x"), t, kFastRetry);
    EXPECT_EQ(c.fetch_logprobs("a b").size(), 2u);
    EXPECT_EQ(t->attempts(), 3);
    // The retried request body is byte-identical.
    const auto bodies = t->bodies();
    EXPECT_TRUE(std::all_of(bodies.begin(), bodies.end(), [&](const auto& b) { return b == bodies[0]; }));
}

TEST(BridgeRetry, GivesUpAfterThreeRetries) {
    auto t = std::make_shared<FakeTransport>([](int) -> cfmd::HttpResponse {
        throw BridgeError(BridgeError::Kind::transport, "connection refused");
    });
    BridgeClient c(spec_for("http://x"), t, kFastRetry);
    EXPECT_THROW(c.fetch_logprobs("a"), BridgeError);
    EXPECT_EQ(t->attempts(), 4);
}

TEST(BridgeRetry, NoRetryOnClientErrors) {
    for (int status : {400, 404, 500}) {
        auto t = std::make_shared<FakeTransport>([status](int) {
            return cfmd::HttpResponse{status, R"({"error":{"code":"x","message":"y"}})"};
        });
        BridgeClient c(spec_for("http://x"), t, kFastRetry);
        try {
            c.fetch_logprobs("a");
            FAIL();
        } catch (const BridgeError& e) {
            EXPECT_EQ(e.kind(), status == 404 ? BridgeError::Kind::unknown_model : BridgeError::Kind::protocol);
            EXPECT_NE(std::string(e.what()).find("HTTP " + std::to_string(status)), std::string::npos);
        }
        EXPECT_EQ(t->attempts(), 1);
    }
}

TEST(BridgeConcurrency, InFlightNeverExceedsLimit) {
    auto t = std::make_shared<FakeTransport>([](int) { return ok_logprobs(); }, std::chrono::milliseconds(15));
    auto spec = spec_for("http://x");
    spec.max_in_flight = 3;
    BridgeClient c(spec, t);
    std::vector<std::jthread> threads;
    for (int i = 0; i < 12; ++i) threads.emplace_back([&] { c.fetch_logprobs("a b"); });
    threads.clear();
    EXPECT_LE(t->peak(), 3);
    EXPECT_EQ(t->attempts(), 12);
}

TEST(BridgeSpec, Validation) {
    auto s = spec_for("ftp://x");
    EXPECT_THROW(BridgeClient{s}, cfmd::ValidationError);
    s = spec_for("http://x", "");
    EXPECT_THROW(BridgeClient{s}, cfmd::ValidationError);
    s = spec_for("http://x");
    s.max_in_flight = 0;
    EXPECT_THROW(BridgeClient{s}, cfmd::ValidationError);
}

// -- against the in-process mock server ---------------------------------------------

TEST(MockServer, LogprobsMatchTheServedModel) {
    MockBridge server;
    BridgeClient c(spec_for(server.url()));
    const std::string text = "Il sindaco ha detto che la cosa va bene .";
    const auto remote = c.fetch_logprobs(text);
    const auto local = server.provider().score(text);
    EXPECT_EQ(remote.tokens, local.tokens);
    ASSERT_EQ(remote.logprobs.size(), local.logprobs.size());
    for (std::size_t i = 0; i < local.size(); ++i) EXPECT_NEAR(remote.logprobs[i], local.logprobs[i], 1e-12);
}

TEST(MockServer, SingleTokenText) {
    MockBridge server;
    const auto ts = BridgeClient(spec_for(server.url())).fetch_logprobs("ciao");
    ASSERT_EQ(ts.size(), 1u);
    EXPECT_TRUE(std::isfinite(ts.logprobs[0]));
    EXPECT_LE(ts.logprobs[0], 0.0);
}

TEST(MockServer, CorruptSequenceLogprobDetected) {
    MockBridge server;
    server.corrupt_sequence_logprob = true;
    EXPECT_THROW(BridgeClient(spec_for(server.url())).fetch_logprobs("a b c"), BridgeError);
    server.corrupt_sequence_logprob = false;
    server.mismatched_lengths = true;
    EXPECT_THROW(BridgeClient(spec_for(server.url())).fetch_logprobs("a b c"), BridgeError);
}

TEST(MockServer, UnknownModelIs404WithoutRetry) {
    MockBridge server;
    BridgeClient c(spec_for(server.url(), "no-such-model"), std::make_shared<cfmd::HttplibTransport>(), kFastRetry);
    try {
        c.fetch_logprobs("a");
        FAIL();
    } catch (const BridgeError& e) {
        EXPECT_EQ(e.kind(), BridgeError::Kind::unknown_model);
        EXPECT_NE(std::string(e.what()).find("unknown_model"), std::string::npos);
    }
    EXPECT_EQ(server.requests, 1);
}

TEST(MockServer, ModelLoadingIsRetried) {
    MockBridge server;
    server.fail_with_503 = 2;
    BridgeClient c(spec_for(server.url()), std::make_shared<cfmd::HttplibTransport>(), kFastRetry);
    EXPECT_NO_THROW(c.fetch_logprobs("a b"));
    EXPECT_EQ(server.requests, 3);
}

TEST(MockServer, UnreachableEndpointIsTransportError) {
    int port;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    auto spec = spec_for("http://127.0.0.1:" + std::to_string(port));
    spec.timeout = std::chrono::milliseconds(300);
    BridgeClient c(spec, std::make_shared<cfmd::HttplibTransport>(), kFastRetry);
    try {
        c.fetch_logprobs("a");
        FAIL();
    } catch (const BridgeError& e) {
        EXPECT_EQ(e.kind(), BridgeError::Kind::transport);
    }
}

TEST(MockServer, PerturbShapeDeterminismAndDegeneracy) {
    MockBridge server;
    BridgeClient c(spec_for(server.url()));
    const std::string text = "Il sindaco di Roma ha detto che la nuova legge non basta , e il governo tace .";
    cfmd::PerturbConfig cfg;
    cfg.n_perturbations = 5;
    cfg.seed = 7;
    const auto a = c.fetch_perturbations(text, cfg);
    const auto b = c.fetch_perturbations(text, cfg);
    EXPECT_EQ(a.variants.size(), 5u);
    EXPECT_EQ(a.variants, b.variants);
    EXPECT_EQ(a.fill_provider_id, "remote");
    server.echo_perturbations = true;
    EXPECT_EQ(c.fetch_perturbations(text, cfg).degenerate_count(), 5u);
}

TEST(MockServer, PerturbVariantsUsuallyDiffer) {
    MockBridge server;
    BridgeClient c(spec_for(server.url()));
    int differing = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        cfmd::PerturbConfig cfg;
        cfg.n_perturbations = 2;
        cfg.seed = seed;
        const auto set = c.fetch_perturbations("Secondo il sindaco , la giunta ha approvato il piano nuovo per la città .", cfg);
        differing += set.degenerate_count() < set.variants.size();
    }
    EXPECT_GE(differing, 90);
}

TEST(MockServer, GenerateBoundaryAndErrors) {
    MockBridge server;
    BridgeClient c(spec_for(server.url()));
    const auto one = c.fetch_generation("Il sindaco", {1.0, 0.9, 1, 3});
    EXPECT_LE(cfmd::tokenize(one).size(), 1u);
    EXPECT_EQ(c.fetch_generation("Il sindaco", {1.0, 0.9, 20, 3}), c.fetch_generation("Il sindaco", {1.0, 0.9, 20, 3}));
    try {
        c.fetch_generation("Il", {1.0, 0.0, 5, 1});
        FAIL();
    } catch (const BridgeError& e) {
        EXPECT_EQ(e.kind(), BridgeError::Kind::protocol);
        EXPECT_NE(std::string(e.what()).find("HTTP 400"), std::string::npos);
    }
}

TEST(MockServer, ProviderScoresLikeLocalModel) {
    MockBridge server;
    const cfmd::BridgeProvider remote(std::make_shared<BridgeClient>(spec_for(server.url())));
    const std::string text = "La giunta ha approvato il piano per la città .";
    EXPECT_NEAR(cfmd::loglik_score(remote, text).value, cfmd::loglik_score(server.provider(), text).value, 1e-12);
}

TEST(MockServer, ConcurrentClientsStayBounded) {
    MockBridge server;
    auto spec = spec_for(server.url());
    spec.max_in_flight = 2;
    auto client = std::make_shared<BridgeClient>(spec);
    std::vector<double> out(16);
    {
        std::vector<std::jthread> threads;
        for (int i = 0; i < 16; ++i) {
            threads.emplace_back([&, i] { out[i] = client->fetch_logprobs("testo numero " + std::to_string(i)).sum(); });
        }
    }
    for (int i = 0; i < 16; ++i) EXPECT_NEAR(out[i], server.provider().score("testo numero " + std::to_string(i)).sum(), 1e-12);
}

}  // namespace
