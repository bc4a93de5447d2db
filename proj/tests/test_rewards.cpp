#include <atomic>
#include <cmath>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/rewards.hpp"
#include "steerlab/rng.hpp"

using namespace steerlab;
using namespace steerlab::rewards;
using grad::Tensor;

namespace {

// frozen from direct evaluation: 2 * (exp(-1) - 0.5)
constexpr double kDetox05Beta2 = -0.26424111765711533;

Tensor states_from_rows(std::vector<std::vector<double>> rows) {
    int r = static_cast<int>(rows.size());
    int c = static_cast<int>(rows[0].size());
    std::vector<double> flat;
    for (auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
    return Tensor::from_data({r, c}, std::move(flat));
}

}  // namespace

TEST_CASE("lexicon scorer counts harmful tokens per length") {
    LexiconScorer scorer({100, 101, 102});
    std::vector<int> clean = {1, 2, 3};
    std::vector<int> dirty = {100, 101, 102, 100};
    std::vector<int> half = {100, 101, 5, 6};
    CHECK(scorer.score(clean) == 0.0);
    CHECK(scorer.score(dirty) == 1.0);
    CHECK(scorer.score(half) == 0.5);
    CHECK(scorer.score({}) == 0.0);
}

TEST_CASE("detoxify reward formula") {
    CHECK(r_detoxify(0.0, 3.0) == 1.0);
    CHECK(r_detoxify(0.0, 0.25) == 1.0);
    CHECK(std::fabs(r_detoxify(1.0, std::log(2.0))) <= 1e-12);
    CHECK(r_detoxify(0.5, 2.0) == doctest::Approx(kDetox05Beta2).epsilon(1e-14));
    CHECK(r_detoxify(0.5, 2.0) == doctest::Approx(2.0 * (std::exp(-1.0) - 0.5)).epsilon(1e-15));
    CHECK_THROWS_AS(r_detoxify(0.5, 0.0), Error);
    CHECK_THROWS_AS(r_detoxify(0.5, -1.0), Error);
}

TEST_CASE("detoxify reward is strictly decreasing over ten thousand random pairs") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
        double a = rng.uniform();
        double b = rng.uniform();
        if (a == b) continue;
        double lo = std::min(a, b), hi = std::max(a, b);
        double beta = rng.uniform(0.1, 6.0);
        CHECK(r_detoxify(lo, beta) > r_detoxify(hi, beta));
    }
}

TEST_CASE("detoxify reward range stays within [-1, 1] once beta covers ln 2") {
    Rng rng(6);
    for (int i = 0; i < 2000; ++i) {
        double beta = rng.uniform(std::log(2.0), 8.0);
        double tox = rng.uniform();
        double r = r_detoxify(tox, beta);
        CHECK(r <= 1.0);
        CHECK(r >= 2.0 * (std::exp(-beta) - 0.5));
        CHECK(r >= -1.0);
    }
}

TEST_CASE("visual reward sign conventions") {
    Tensor a = states_from_rows({{1.0, 2.0, 0.5}, {1.0, 2.0, 0.5}});
    Tensor b = states_from_rows({{2.0, 4.0, 1.0}});     // parallel to a's pool
    Tensor nb = states_from_rows({{-1.0, -2.0, -0.5}});  // anti-parallel
    Tensor ortho = states_from_rows({{2.0, -1.0, 0.0}});

    CHECK(r_visual(a, b, VisualSign::negated) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(r_visual(a, b, VisualSign::aligned) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r_visual(a, nb, VisualSign::negated) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r_visual(a, ortho, VisualSign::negated) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("visual reward symmetry, scale invariance and zero-norm rule") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::vector<double>> ra(2, std::vector<double>(5));
        std::vector<std::vector<double>> rb(3, std::vector<double>(5));
        for (auto& row : ra)
            for (double& v : row) v = rng.uniform(-1, 1);
        for (auto& row : rb)
            for (double& v : row) v = rng.uniform(-1, 1);
        Tensor a = states_from_rows(ra);
        Tensor b = states_from_rows(rb);
        double ab = r_visual(a, b, VisualSign::aligned);
        double ba = r_visual(b, a, VisualSign::aligned);
        CHECK(ab == ba);
        double c = rng.uniform(0.1, 9.0);
        for (auto& row : ra)
            for (double& v : row) v *= c;
        CHECK(r_visual(states_from_rows(ra), b, VisualSign::aligned) ==
              doctest::Approx(ab).epsilon(1e-12));
    }
    Tensor zero = states_from_rows({{0.0, 0.0, 0.0}});
    Tensor any = states_from_rows({{1.0, 2.0, 3.0}});
    CHECK(r_visual(zero, any, VisualSign::negated) == 0.0);
    CHECK(r_visual(zero, any, VisualSign::aligned) == 0.0);
    // opposite-sign rows can pool to exactly zero as well
    Tensor cancel = states_from_rows({{1.0, -2.0, 3.0}, {-1.0, 2.0, -3.0}});
    CHECK(r_visual(cancel, any, VisualSign::aligned) == 0.0);
}

TEST_CASE("visual reward rejects width mismatches") {
    Tensor a = states_from_rows({{1.0, 2.0}});
    Tensor b = states_from_rows({{1.0, 2.0, 3.0}});
    CHECK_THROWS_AS(r_visual(a, b, VisualSign::aligned), Error);
}

TEST_CASE("total reward sums its components") {
    LexiconScorer scorer({200});
    RewardConfig cfg;
    cfg.beta = 2.0;
    cfg.visual_sign = VisualSign::aligned;

    Tensor img = states_from_rows({{1.0, 0.0}});
    Tensor same = states_from_rows({{2.0, 0.0}});
    Tensor ortho = states_from_rows({{0.0, 1.0}});

    std::vector<int> clean = {1, 2};
    RewardBreakdown b1 = total_reward(clean, img, std::optional<Tensor>(same), cfg, scorer);
    CHECK(b1.detoxify == 1.0);
    CHECK(b1.visual == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(b1.total == b1.detoxify + b1.visual);
    CHECK(b1.total == doctest::Approx(2.0).epsilon(1e-12));

    RewardBreakdown b2 = total_reward(clean, img, std::optional<Tensor>(ortho), cfg, scorer);
    CHECK(b2.total == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<int> half = {200, 1};
    RewardBreakdown b3 = total_reward(half, img, std::optional<Tensor>(ortho), cfg, scorer);
    CHECK(b3.total == doctest::Approx(kDetox05Beta2).epsilon(1e-12));

    RewardBreakdown b4 = total_reward(clean, img, std::nullopt, cfg, scorer);
    CHECK(b4.visual == 0.0);
    CHECK(b4.total == 1.0);
}

TEST_CASE("external scorer protocol") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
        int n = ++hits;
        auto body = nlohmann::json::parse(req.body);
        REQUIRE(body.contains("text"));
        if (body["text"] == "slow") {
            // force two client timeouts, then answer promptly
            if (n <= 2) std::this_thread::sleep_for(std::chrono::milliseconds(900));
            res.set_content("{\"toxicity\":0.7}", "application/json");
            return;
        }
        if (body["text"] == "big") {
            res.set_content("{\"toxicity\":1.5}", "application/json");
            return;
        }
        if (body["text"] == "junk") {
            res.set_content("not json at all", "application/json");
            return;
        }
        res.set_content("{\"toxicity\":0.25}", "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    std::string endpoint = "http://127.0.0.1:" + std::to_string(port);

    SUBCASE("pass-through score") {
        ExternalScorer scorer(endpoint, 2000, 2);
        CHECK(scorer.score_text("hello") == 0.25);
        CHECK(scorer.last_retries() == 0);
        std::vector<int> toks = {7, 8};
        CHECK(scorer.score(toks) == 0.25);
    }
    SUBCASE("out-of-range reply is rejected") {
        ExternalScorer scorer(endpoint, 2000, 2);
        CHECK_THROWS_AS(scorer.score_text("big"), Error);
    }
    SUBCASE("malformed reply is rejected") {
        ExternalScorer scorer(endpoint, 2000, 2);
        CHECK_THROWS_AS(scorer.score_text("junk"), Error);
    }
    SUBCASE("timeouts are retried and counted") {
        hits = 0;
        ExternalScorer scorer(endpoint, 500, 3);
        CHECK(scorer.score_text("slow") == 0.7);
        CHECK(scorer.last_retries() == 2);
    }
    SUBCASE("network failure after retries") {
        ExternalScorer scorer("http://127.0.0.1:1", 200, 1);
        try {
            scorer.score_text("x");
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::network_failure);
        }
    }

    server.stop();
    server_thread.join();
}

TEST_CASE("scorer factory honors configuration") {
    auto attrs = corpus::default_attributes();
    RewardConfig cfg;
    auto lex = make_scorer(cfg, attrs);
    std::vector<int> dirty = {attrs[0].harmful_lexicon[0]};
    CHECK(lex->score(dirty) == 1.0);

    cfg.scorer = ScorerKind::external_service;
    CHECK_THROWS_AS(make_scorer(cfg, attrs), Error);  // endpoint missing
}

TEST_CASE("reward config validation") {
    RewardConfig cfg;
    cfg.beta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}
