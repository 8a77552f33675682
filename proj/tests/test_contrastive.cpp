#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "lco/contrastive.hpp"
#include "lco/error.hpp"
#include "lco/geometry.hpp"

using namespace lco;

namespace {

WorldSpec cl_world(double sigma = 0.2) {
    WorldSpec s;
    s.latent_classes = 32;
    s.latent_dim = 6;
    s.vocab_size = 32;
    s.text_len = 6;
    s.token_pages = 4;
    s.template_len = 1;
    s.modalities = {{"image", 12, sigma}};
    s.seed = 5;
    return s;
}

// Direct softmax over the candidate list, no shifting tricks.
double infonce_oracle(const Matrix& a, const Matrix& p, double tau, const Matrix* neg) {
    const std::size_t n = a.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(cosine(a.row(i), p.row(j)) / tau);
        if (neg)
            for (std::size_t j = 0; j < n; ++j) denom += std::exp(cosine(a.row(i), neg->row(j)) / tau);
        total += -std::log(std::exp(cosine(a.row(i), p.row(i)) / tau) / denom);
    }
    return total / n;
}

}  // namespace

TEST_CASE("infonce examples") {
    const Matrix ones(16, 4, 1.0);
    CHECK(infonce(ones, ones, 0.05) == std::log(16.0));
    CHECK(infonce(Matrix{{1, 2}}, Matrix{{-3, 1}}, 0.1) == 0.0);
    const Matrix eye = Matrix::identity(2);
    CHECK(infonce(eye, eye, 1.0) == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-15));
    CHECK(infonce(eye, eye, 1.0) == doctest::Approx(0.31326).epsilon(1e-5));
}

TEST_CASE("uniform similarities give ln N exactly") {
    for (std::size_t n : {2, 16, 128}) {
        const Matrix u(n, 3, 0.7);
        CHECK(infonce(u, u, 0.2) == std::log(static_cast<double>(n)));
        CHECK(infonce(u, u, 0.2, &u) == std::log(static_cast<double>(2 * n)));
    }
}

TEST_CASE("infonce errors") {
    CHECK_THROWS_AS(infonce(Matrix{{0, 0}}, Matrix{{1, 0}}, 0.1), ValidationError);
    CHECK_THROWS_AS(infonce(Matrix(2, 3, 1.0), Matrix(3, 3, 1.0), 0.1), ValidationError);
    CHECK_THROWS_AS(infonce(Matrix(2, 3, 1.0), Matrix(2, 3, 1.0), 0.0), ValidationError);
    const Matrix bad(1, 3, 1.0);
    CHECK_THROWS_AS(infonce(Matrix(2, 3, 1.0), Matrix(2, 3, 1.0), 0.1, &bad), ValidationError);
}

TEST_CASE("infonce properties") {
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 1 + rng.uniform_int(12);
        const Matrix a = Matrix::gaussian(n, 5, 1.0, rng);
        const Matrix p = Matrix::gaussian(n, 5, 1.0, rng);
        const Matrix h = Matrix::gaussian(n, 5, 1.0, rng);
        const double tau = rng.uniform(0.05, 1.0);
        const double l = infonce(a, p, tau);
        const double lh = infonce(a, p, tau, &h);
        CHECK(l >= 0.0);
        CHECK(lh >= l);
        CHECK(std::abs(l - infonce_oracle(a, p, tau, nullptr)) < 1e-9);
        CHECK(std::abs(lh - infonce_oracle(a, p, tau, &h)) < 1e-9);
        const double s = std::exp(rng.normal(0.0, 2.0));
        CHECK(std::abs(infonce(a * s, p * s, tau, &h) - lh) < 1e-9);
    }
    // positive is the argmax candidate: loss at most ln(candidates)
    for (int t = 0; t < 20; ++t) {
        const Matrix a = Matrix::gaussian(8, 5, 1.0, rng);
        Matrix p = Matrix::gaussian(8, 5, 1.0, rng);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t c = 0; c < 5; ++c) p(i, c) = a(i, c) + 0.01 * p(i, c);
        CHECK(infonce(a, p, 0.3) <= std::log(8.0));
    }
}

TEST_CASE("infonce gradient") {
    Rng rng(2);
    for (int t = 0; t < 40; ++t) {
        const std::size_t n = 2 + rng.uniform_int(6), d = 3 + rng.uniform_int(5);
        const bool hard = t % 2 == 1;
        const Matrix a = Matrix::gaussian(n, d, 1.0, rng);
        const Matrix p = Matrix::gaussian(n, d, 1.0, rng);
        const Matrix h = Matrix::gaussian(n, d, 1.0, rng);
        const double tau = rng.uniform(0.05, 1.0);
        const auto g = infonce_grad(a, p, tau, hard ? &h : nullptr);
        CHECK(g.loss == doctest::Approx(infonce(a, p, tau, hard ? &h : nullptr)).epsilon(1e-14));

        std::vector<double> theta = a.values(), analytic = g.d_anchor.values();
        theta.insert(theta.end(), p.values().begin(), p.values().end());
        analytic.insert(analytic.end(), g.d_positive.values().begin(), g.d_positive.values().end());
        if (hard) {
            theta.insert(theta.end(), h.values().begin(), h.values().end());
            analytic.insert(analytic.end(), g.d_negative.values().begin(), g.d_negative.values().end());
        }
        auto f = [&](std::span<const double> x) {
            const std::size_t m = n * d;
            const Matrix aa(n, d, std::vector<double>(x.begin(), x.begin() + m));
            const Matrix pp(n, d, std::vector<double>(x.begin() + m, x.begin() + 2 * m));
            if (!hard) return infonce(aa, pp, tau);
            const Matrix hh(n, d, std::vector<double>(x.begin() + 2 * m, x.begin() + 3 * m));
            return infonce(aa, pp, tau, &hh);
        };
        CHECK(grad_check(f, theta, analytic) < 1e-4);
    }
}

TEST_CASE("toy triplets") {
    const World w = build_world(cl_world());
    Rng rng(3);
    const auto pool = make_toy_triplets(w, 300, rng);
    CHECK(pool.triplets.size() == 300);
    for (std::size_t i = 0; i < 300; ++i) {
        const auto& t = pool.triplets;
        const std::size_t c = w.decode_class(t.anchors[i]);
        CHECK(c == pool.classes[i]);
        CHECK(c == w.decode_class(t.positives[i]));
        CHECK(t.anchors[i] != t.positives[i]);
        const std::size_t nc = w.decode_class(t.hard_negatives[i]);
        CHECK(nc != c);
        CHECK(nc == w.nearest_other_class(c));
    }
    CHECK_THROWS(make_toy_triplets(w, 1, rng));

    WorldSpec one = cl_world();
    one.token_pages = 1;
    const World w1 = build_world(one);
    CHECK_THROWS_AS(make_toy_triplets(w1, 10, rng), ValidationError);
}

TEST_CASE("nearest other class matches a latent scan") {
    const World w = build_world(cl_world());
    for (std::size_t c = 0; c < 32; ++c) {
        std::size_t best = c == 0 ? 1 : 0;
        double best_d = 1e300;
        for (std::size_t o = 0; o < 32; ++o) {
            if (o == c) continue;
            double d = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                const double diff = w.class_latents(c, j) - w.class_latents(o, j);
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = o;
            }
        }
        CHECK(w.nearest_other_class(c) == best);
    }
}

TEST_CASE("world triplet batches use distinct classes") {
    const World w = build_world(cl_world());
    WorldTripletSource src(w, true);
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        const auto b = src.next(16, rng);
        CHECK(b.size() == 16);
        CHECK(b.has_negatives());
        std::set<std::size_t> seen;
        for (const auto& a : b.anchors) seen.insert(w.decode_class(a));
        CHECK(seen.size() == 16);
    }
    WorldTripletSource easy(w, false);
    CHECK_FALSE(easy.next(8, rng).has_negatives());
}

TEST_CASE("read triplets") {
    std::istringstream in(
        "{\"anchor\": [1, 2], \"pos\": [2, 3], \"neg\": [4, 5]}\n"
        "\n"
        "{\"anchor\": [0], \"pos\": [7], \"neg\": [1]}\n");
    const auto b = read_triplets(in, 8);
    CHECK(b.size() == 2);
    CHECK(b.anchors[0] == TokenSeq{1, 2});
    CHECK(b.hard_negatives[1] == TokenSeq{1});

    std::istringstream bad_tok("{\"anchor\": [9], \"pos\": [1]}\n");
    CHECK_THROWS_AS(read_triplets(bad_tok, 8), ValidationError);
    std::istringstream missing("{\"anchor\": [1]}\n");
    CHECK_THROWS_AS(read_triplets(missing, 8), ValidationError);
    std::istringstream junk("not json\n");
    CHECK_THROWS(read_triplets(junk, 8));
}

TEST_CASE("strategy names") {
    for (auto s : {ClStrategy::lora, ClStrategy::full_finetune, ClStrategy::linear_projection})
        CHECK(parse_strategy(to_string(s)) == s);
    CHECK_THROWS_AS(parse_strategy("prefix_tuning"), ValidationError);
    ClConfig c;
    c.tau = 0.0;
    CHECK_THROWS(c.validate());
}

namespace {

ToyModel pretrained(const World& w, std::size_t steps) {
    const ToyModel m = init_model(model_spec_for(w.spec, 32, {32, 16}, 11));
    PretrainConfig cfg;
    cfg.steps = steps;
    cfg.batch = 64;
    cfg.source_modalities = {"image", "text"};
    Rng rng(12);
    return pretrain(m, w, cfg, rng).model;
}

}  // namespace

TEST_CASE("cl_train freeze contracts") {
    const World w = build_world(cl_world());
    const ToyModel base = pretrained(w, 200);
    Rng rng(5);
    const auto batch = sample_batch(w, 20, rng);
    const auto img = InputBatch::from_samples(batch, "image");
    const auto txt = InputBatch::from_samples(batch, "text");

    for (auto strat : {ClStrategy::lora, ClStrategy::full_finetune, ClStrategy::linear_projection}) {
        ClConfig cfg;
        cfg.strategy = strat;
        cfg.steps = 0;
        WorldTripletSource src(w);
        const auto r0 = cl_train(base, src, cfg);
        CHECK(r0.trace.empty());
        const ToyModel m0 = r0.merged();
        CHECK(encode(m0, img).embeddings == encode(base, img).embeddings);
        CHECK(encode(m0, txt).embeddings == encode(base, txt).embeddings);

        cfg.steps = 20;
        cfg.batch = 8;
        const auto r = cl_train(base, src, cfg);
        CHECK(r.trace.size() == 20);
        for (const auto& n : base.input_param_names()) CHECK(r.model.params.at(n) == base.params.at(n));
        CHECK(r.model.params.at("head.w") == base.params.at("head.w"));
        bool trunk_same = true;
        for (const auto& n : base.trunk_param_names()) trunk_same = trunk_same && r.model.params.at(n) == base.params.at(n);
        if (strat == ClStrategy::lora) {
            CHECK(r.adapter.has_value());
            CHECK(trunk_same);
            CHECK(r.model.params == base.params);
        } else if (strat == ClStrategy::full_finetune) {
            CHECK_FALSE(trunk_same);
            CHECK_FALSE(r.adapter.has_value());
        } else {
            CHECK(trunk_same);
            CHECK(r.model.has_projection());
            CHECK_FALSE(r.model.params.at("proj.w") == Matrix::identity(16));
        }
    }
}

TEST_CASE("cl_train reduces the loss") {
    const World w = build_world(cl_world());
    const ToyModel base = pretrained(w, 300);
    ClConfig cfg;
    cfg.steps = 500;
    cfg.tau = 0.05;
    cfg.lr = 1e-3;
    cfg.batch = 16;
    cfg.seed = 9;
    WorldTripletSource src(w);
    const auto r = cl_train(base, src, cfg);
    auto window = [&](std::size_t from) {
        double s = 0.0;
        for (std::size_t i = from; i < from + 50; ++i) s += r.trace[i];
        return s / 50.0;
    };
    CHECK(window(450) < window(0));
}

TEST_CASE("mean_infonce is deterministic and ln N for a constant model") {
    const World w = build_world(cl_world());
    ToyModel m = init_model(model_spec_for(w.spec, 8, {8, 4}, 1));
    for (auto& [name, t] : m.params.entries()) t.fill(0.0);
    m.params.at("trunk.1.b").fill(1.0);
    WorldTripletSource src(w, true);
    Rng rng(1);
    CHECK(mean_infonce(m, nullptr, src, 3, 8, 0.2, rng) == std::log(16.0));
    Rng r1(2), r2(2);
    const ToyModel base = init_model(model_spec_for(w.spec, 8, {8, 4}, 1));
    CHECK(mean_infonce(base, nullptr, src, 3, 8, 0.2, r1) == mean_infonce(base, nullptr, src, 3, 8, 0.2, r2));
}

TEST_CASE("pool source") {
    const World w = build_world(cl_world());
    Rng rng(6);
    const auto pool = make_toy_triplets(w, 200, rng);
    PoolTripletSource src(pool.triplets, pool.classes);
    for (int t = 0; t < 10; ++t) {
        const auto b = src.next(16, rng);
        std::set<std::size_t> seen;
        for (const auto& a : b.anchors) seen.insert(w.decode_class(a));
        CHECK(seen.size() == 16);
    }
}
