#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "lco/datagen.hpp"
#include "lco/error.hpp"
#include "lco/toymodel.hpp"

using namespace lco;

namespace {

WorldSpec world_spec(double sigma = 0.1) {
    WorldSpec s;
    s.latent_classes = 8;
    s.latent_dim = 4;
    s.vocab_size = 16;
    s.text_len = 3;
    s.modalities = {{"image", 12, sigma}, {"audio", 5, sigma}};
    s.seed = 1;
    return s;
}

ModelSpec small_model(std::uint64_t seed = 7) { return model_spec_for(world_spec(), 10, {9, 6}, seed); }

void randomize(ParamStore& p, Rng& rng, double sd = 0.5) {
    for (auto& [name, m] : p.entries())
        for (double& v : m.values()) v = rng.normal(0.0, sd);
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "lco_test_toymodel";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("model spec validation") {
    ModelSpec s = small_model();
    s.trunk_dims = {9};
    CHECK_THROWS_AS(s.validate(), ValidationError);
    CHECK_THROWS_AS(init_model(s), ValidationError);
    s = small_model();
    s.enc_hidden = 0;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = small_model();
    std::map<std::string, std::string> kv;
    std::istringstream in(s.canonical());
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    CHECK(ModelSpec::parse(kv) == s);
}

TEST_CASE("init is deterministic and the head starts at zero") {
    const ToyModel a = init_model(small_model());
    const ToyModel b = init_model(small_model());
    CHECK(a.params == b.params);
    CHECK_FALSE(a.params == init_model(small_model(8)).params);
    for (double v : a.params.at("head.w").values()) CHECK(v == 0.0);
}

TEST_CASE("zero head gives ln V for every modality") {
    const World w = build_world(world_spec());
    const ToyModel m = init_model(small_model());
    Rng rng(3);
    const auto batch = sample_batch(w, 40, rng);
    for (const char* mod : {"image", "audio", "text"}) {
        const double loss = generative_loss(m, InputBatch::from_samples(batch, mod), targets(batch));
        CHECK(loss == std::log(16.0));
    }
}

TEST_CASE("encode determinism and errors") {
    const ToyModel m = init_model(small_model());
    Rng rng(4);
    const Matrix x = Matrix::gaussian(5, 12, 1.0, rng);
    const auto e1 = encode(m, InputBatch::observations("image", x)).embeddings;
    const auto e2 = encode(m, InputBatch::observations("image", x)).embeddings;
    CHECK(e1 == e2);
    CHECK(e1.rows() == 5);
    CHECK(e1.cols() == 6);
    CHECK_THROWS(encode(m, InputBatch::observations("smell", x)));
    CHECK_THROWS(encode(m, InputBatch::observations("audio", x)));
    CHECK_THROWS(encode(m, InputBatch::text({{1, 2, 99}})));
}

TEST_CASE("hand-sized forward pass") {
    ModelSpec s;
    s.modalities = {{"m", 2}};
    s.enc_hidden = 2;
    s.trunk_dims = {2, 2};
    s.embed_dim = 2;
    s.vocab_size = 3;
    s.text_len = 2;
    ToyModel model = init_model(s);
    auto& p = model.params;
    p.at("enc.m.w1") = Matrix{{0.5, -0.25}, {0.1, 0.2}};
    p.at("enc.m.b1") = Matrix{{0.05, -0.1}};
    p.at("enc.m.w2") = Matrix{{1.0, 0.3}, {-0.4, 0.7}};
    p.at("enc.m.b2") = Matrix{{0.0, 0.2}};
    p.at("trunk.0.w") = Matrix{{0.6, -0.2}, {0.3, 0.9}};
    p.at("trunk.0.b") = Matrix{{0.1, 0.0}};
    p.at("trunk.1.w") = Matrix{{-0.5, 1.1}, {0.8, 0.4}};
    p.at("trunk.1.b") = Matrix{{0.0, -0.3}};

    const double x0 = 1.5, x1 = -0.5;
    const double h0 = std::tanh(0.5 * x0 - 0.25 * x1 + 0.05);
    const double h1 = std::tanh(0.1 * x0 + 0.2 * x1 - 0.1);
    const double e0 = 1.0 * h0 + 0.3 * h1 + 0.0;
    const double e1 = -0.4 * h0 + 0.7 * h1 + 0.2;
    const double t0 = std::tanh(0.6 * e0 - 0.2 * e1 + 0.1);
    const double t1 = std::tanh(0.3 * e0 + 0.9 * e1 + 0.0);
    const double y0 = -0.5 * t0 + 1.1 * t1 + 0.0;
    const double y1 = 0.8 * t0 + 0.4 * t1 - 0.3;

    const std::vector<double> obs{x0, x1};
    const auto emb = encode_one(model, "m", obs);
    CHECK(std::abs(emb[0] - y0) < 1e-12);
    CHECK(std::abs(emb[1] - y1) < 1e-12);

    // text path: mean of token embeddings enters the trunk directly
    p.at("tok.emb") = Matrix{{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}};
    const auto te = encode_text(model, {0, 2});
    const double a0 = 0.75, a1 = 0.25;
    const double u0 = std::tanh(0.6 * a0 - 0.2 * a1 + 0.1);
    const double u1 = std::tanh(0.3 * a0 + 0.9 * a1);
    CHECK(std::abs(te[0] - (-0.5 * u0 + 1.1 * u1)) < 1e-12);
    CHECK(std::abs(te[1] - (0.8 * u0 + 0.4 * u1 - 0.3)) < 1e-12);
}

TEST_CASE("cross entropy by hand") {
    // 1 sample, L = 2, V = 3
    const Matrix logits{{1.0, 2.0, 0.5, -1.0, 0.0, 3.0}};
    const std::vector<TokenSeq> gold{{1, 0}};
    const double p0 = -std::log(std::exp(2.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(0.5)));
    const double p1 = -std::log(std::exp(-1.0) / (std::exp(-1.0) + std::exp(0.0) + std::exp(3.0)));
    const auto ce = position_cross_entropy(logits, gold, 3);
    CHECK(ce.loss == doctest::Approx((p0 + p1) / 2).epsilon(1e-14));

    const Matrix sure{{0.0, 800.0, 0.0, 800.0, 0.0, 0.0}};
    CHECK(position_cross_entropy(sure, gold, 3).loss == doctest::Approx(0.0).epsilon(1e-300));
    CHECK(position_cross_entropy(Matrix(1, 6), gold, 3).loss == doctest::Approx(std::log(3.0)));
    CHECK_THROWS_AS(position_cross_entropy(logits, {{3, 0}}, 3), ValidationError);
}

TEST_CASE("generative loss gradient") {
    const World w = build_world(world_spec());
    Rng rng(21);
    for (int inst = 0; inst < 21; ++inst) {
        ToyModel m = init_model(small_model(100 + inst));
        if (inst % 3 == 2) m = with_projection(m);
        randomize(m.params, rng);
        const char* mod = inst % 3 == 0 ? "image" : (inst % 3 == 1 ? "text" : "audio");
        const auto batch = sample_batch(w, 4, rng);
        const auto input = InputBatch::from_samples(batch, mod);
        const auto tgt = targets(batch);

        ParamStore grads = m.params.zeros_like();
        generative_loss_grad(m, input, tgt, grads);
        std::vector<std::string> names{"head.w"};
        for (const auto& n : m.trunk_param_names()) names.push_back(n);
        if (m.has_projection()) {
            names.push_back("proj.w");
            names.push_back("proj.b");
        }
        if (std::string(mod) == "text")
            names.push_back("tok.emb");
        else
            for (const char* leaf : {"w1", "b1", "w2", "b2"}) names.push_back(std::string("enc.") + mod + "." + leaf);

        const auto theta = m.params.flatten(names);
        const auto analytic = grads.flatten(names);
        ToyModel probe = m;
        auto f = [&](std::span<const double> t) {
            probe.params.unflatten(std::vector<double>(t.begin(), t.end()), names);
            return generative_loss(probe, input, tgt);
        };
        CHECK(grad_check(f, theta, analytic) < 1e-4);
    }
}

TEST_CASE("adapter backward gradient") {
    const World w = build_world(world_spec());
    Rng rng(31);
    for (int inst = 0; inst < 20; ++inst) {
        ToyModel m = init_model(small_model(200 + inst));
        randomize(m.params, rng);
        LoraAdapter ad = init_lora(m.spec, 2, 3.0, rng);
        randomize(ad.params, rng, 0.3);
        const auto batch = sample_batch(w, 3, rng);
        const auto input = InputBatch::from_samples(batch, inst % 2 ? "text" : "image");
        const Matrix r = Matrix::gaussian(3, m.spec.embed_dim, 1.0, rng);

        auto objective = [&](const ToyModel& mm, const LoraAdapter& aa) {
            const auto e = encode(mm, input, &aa).embeddings;
            double s = 0.0;
            for (std::size_t i = 0; i < e.size(); ++i) s += e.values()[i] * r.values()[i];
            return s;
        };
        ParamStore g_ad = ad.params.zeros_like();
        ParamStore g_m = m.params.zeros_like();
        GradSinks sinks;
        sinks.model = &g_m;
        sinks.adapter = &g_ad;
        sinks.trunk = true;
        sinks.inputs = true;
        backward(m, &ad, forward(m, input, &ad), r, sinks);

        LoraAdapter pa = ad;
        auto fa = [&](std::span<const double> t) {
            pa.params.unflatten(std::vector<double>(t.begin(), t.end()));
            return objective(m, pa);
        };
        CHECK(grad_check(fa, ad.params.flatten(), g_ad.flatten()) < 1e-4);

        auto names = m.trunk_param_names();
        for (const auto& n : m.input_param_names())
            if (n == "tok.emb" ? input.modality == "text" : n.rfind("enc.image.", 0) == 0 && input.modality == "image")
                names.push_back(n);
        ToyModel pm = m;
        auto fm = [&](std::span<const double> t) {
            pm.params.unflatten(std::vector<double>(t.begin(), t.end()), names);
            return objective(pm, ad);
        };
        CHECK(grad_check(fm, m.params.flatten(names), g_m.flatten(names)) < 1e-4);
    }
}

TEST_CASE("pretrain basics") {
    const World w = build_world(world_spec());
    const ToyModel m = init_model(small_model());
    PretrainConfig cfg;
    cfg.source_modalities = {"image", "text"};
    cfg.steps = 0;
    Rng rng(1);
    const auto r0 = pretrain(m, w, cfg, rng);
    CHECK(r0.model.params == m.params);
    CHECK(r0.trace.empty());

    cfg.steps = 5;
    cfg.snapshot_steps = {2, 5};
    const auto r5 = pretrain(m, w, cfg, rng);
    CHECK(r5.trace.size() == 5);
    CHECK(r5.trace[0] == std::log(16.0));
    CHECK(r5.snapshots.size() == 2);
    CHECK(r5.snapshots[1].params == r5.model.params);

    cfg.source_modalities.clear();
    CHECK_THROWS(pretrain(m, w, cfg, rng));
    cfg.source_modalities = {"image"};
    cfg.snapshot_steps = {6};
    CHECK_THROWS(pretrain(m, w, cfg, rng));
}

TEST_CASE("noiseless pretraining converges") {
    const World w = build_world(world_spec(0.0));
    const ToyModel m = init_model(model_spec_for(w.spec, 32, {32, 16}, 5));
    PretrainConfig cfg;
    cfg.steps = 2000;
    cfg.lr = 3e-3;
    cfg.batch = 32;
    cfg.source_modalities = {"image", "audio", "text"};
    Rng rng(2);
    const auto r = pretrain(m, w, cfg, rng);
    CHECK(r.trace.back() < 0.1 * std::log(16.0));
}

TEST_CASE("lora merge") {
    Rng rng(5);
    ToyModel m = init_model(small_model());
    randomize(m.params, rng);
    LoraAdapter zero = init_lora(m.spec, 4, 8.0, rng);
    CHECK(merge_lora(m, zero).params == m.params);
    const Matrix x = Matrix::gaussian(100, 12, 1.0, rng);
    const auto input = InputBatch::observations("image", x);
    CHECK(encode(m, input, &zero).embeddings == encode(m, input).embeddings);

    LoraAdapter ad = init_lora(m.spec, 4, 8.0, rng);
    randomize(ad.params, rng);
    const ToyModel merged = merge_lora(m, ad);
    CHECK(max_abs_diff(encode(merged, input).embeddings, encode(m, input, &ad).embeddings) < 1e-6);
    for (const auto& n : m.input_param_names()) CHECK(merged.params.at(n) == m.params.at(n));

    ModelSpec bad = small_model();
    bad.trunk_dims = {9, 7};
    bad.embed_dim = 7;
    CHECK_THROWS(merge_lora(init_model(bad), ad));
}

TEST_CASE("rank one merge by hand") {
    ModelSpec s;
    s.modalities = {{"m", 2}};
    s.enc_hidden = 2;
    s.trunk_dims = {2, 2};
    s.embed_dim = 2;
    s.vocab_size = 2;
    s.text_len = 1;
    ToyModel model = init_model(s);
    model.params.at("trunk.0.w") = Matrix{{1.0, 2.0}, {3.0, 4.0}};
    Rng rng(1);
    LoraAdapter ad = init_lora(s, 1, 2.0, rng);
    ad.params.at("lora.0.b") = Matrix{{1.0}, {-2.0}};
    ad.params.at("lora.0.a") = Matrix{{0.5, 3.0}};
    ad.params.at("lora.1.a") = Matrix{{0.0, 0.0}};
    const ToyModel merged = merge_lora(model, ad);
    // W + 2 * [1; -2] [0.5 3]
    CHECK(merged.params.at("trunk.0.w") == Matrix{{2.0, 8.0}, {1.0, -8.0}});
    CHECK(merged.params.at("trunk.1.w") == model.params.at("trunk.1.w"));
}

TEST_CASE("lora init") {
    Rng rng(9);
    const ModelSpec s = small_model();
    const LoraAdapter ad = init_lora(s, 3, 6.0, rng);
    CHECK(ad.num_layers() == 2);
    CHECK(ad.scale() == 2.0);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(ad.a(l).rows() == 3);
        CHECK(ad.a(l).cols() == s.layer_in(l));
        CHECK(ad.b(l).rows() == s.trunk_dims[l]);
        for (double v : ad.b(l).values()) CHECK(v == 0.0);
    }
    // A entries ~ N(0, 1/r)
    const LoraAdapter big = init_lora(model_spec_for(world_spec(), 4, {200, 200}, 0), 4, 8.0, rng);
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t l = 0; l < 2; ++l)
        for (double v : big.a(l).values()) {
            sq += v * v;
            ++n;
        }
    CHECK(sq / n == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("shared trunk couples every modality") {
    const World w = build_world(world_spec());
    Rng rng(6);
    const ToyModel m = init_model(small_model());
    ToyModel p = m;
    for (const auto& n : m.trunk_param_names())
        for (double& v : p.params.at(n).values()) v += rng.normal(0.0, 0.05);
    const auto batch = sample_batch(w, 10, rng);
    for (const char* mod : {"image", "audio", "text"}) {
        const auto in = InputBatch::from_samples(batch, mod);
        CHECK(max_abs_diff(encode(m, in).embeddings, encode(p, in).embeddings) > 0.0);
    }
}

TEST_CASE("soup") {
    Rng rng(12);
    ToyModel base = init_model(small_model());
    const Checkpoint c = to_checkpoint(base, {{"id", "c"}});
    const Checkpoint cc = soup({c, c});
    CHECK(cc.tensors == c.tensors);

    ToyModel a = base, b = base;
    a.params.at("head.w").fill(0.2);
    b.params.at("head.w").fill(0.4);
    const Checkpoint ab = soup({to_checkpoint(a), to_checkpoint(b)});
    for (double v : ab.tensors.at("head.w").values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));

    std::vector<Checkpoint> three;
    for (int i = 0; i < 3; ++i) {
        ToyModel t = base;
        randomize(t.params, rng);
        three.push_back(to_checkpoint(t, {{"id", "m" + std::to_string(i)}}));
    }
    const Checkpoint mean = soup(three);
    for (const auto& [name, m] : mean.tensors.entries()) {
        const Matrix& x = three[0].tensors.at(name);
        const Matrix& y = three[1].tensors.at(name);
        const Matrix& z = three[2].tensors.at(name);
        for (std::size_t i = 0; i < m.size(); ++i)
            CHECK(std::abs(m.values()[i] - (x.values()[i] + y.values()[i] + z.values()[i]) / 3.0) < 1e-15);
    }
    CHECK(mean.meta.at("parents") == "m0,m1,m2");

    std::vector<Checkpoint> order{three[2], three[0], three[1]};
    CHECK(soup(order).tensors == mean.tensors);
    std::reverse(order.begin(), order.end());
    CHECK(soup(order).tensors == mean.tensors);

    CHECK_THROWS(soup({}));
    CHECK_THROWS(soup({c}));
    CHECK_THROWS(soup({c, to_checkpoint(init_model(model_spec_for(world_spec(), 10, {9, 5}, 7)))}));
}

TEST_CASE("checkpoint round trip") {
    Rng rng(2);
    ToyModel m = with_projection(init_model(small_model()));
    randomize(m.params, rng);
    m.params.at("head.w")(0, 0) = -0.0;
    m.params.at("head.w")(0, 1) = 1e-310;
    const Checkpoint ck = to_checkpoint(m, {{"stage", "pretrain"}, {"seed", "4"}, {"steps", "10"}});
    const auto path = temp_path("m.lcoc").string();
    save_checkpoint(ck, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.spec == ck.spec);
    CHECK(back.meta == ck.meta);
    CHECK(back.tensors == ck.tensors);
    CHECK(std::signbit(back.tensors.at("head.w")(0, 0)));
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));
    CHECK(model_from_checkpoint(back).params == m.params);

    LoraAdapter ad = init_lora(m.spec, 2, 5.0, rng);
    randomize(ad.params, rng);
    const LoraAdapter ad2 = adapter_from_checkpoint(deserialize_checkpoint(serialize_checkpoint(adapter_checkpoint(m.spec, ad))));
    CHECK(ad2.rank == 2);
    CHECK(ad2.alpha == 5.0);
    CHECK(ad2.params == ad.params);
}

TEST_CASE("checkpoint format errors") {
    const std::string bytes = serialize_checkpoint(to_checkpoint(init_model(small_model())));
    CHECK(bytes.substr(0, 4) == "LCOC");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);

    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);

    std::string ver = bytes;
    ver[4] = 2;
    CHECK_THROWS_AS(deserialize_checkpoint(ver), FormatError);

    const std::string cut = bytes.substr(0, bytes.size() - 13);
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(cut), doctest::Contains("truncated"), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(temp_path("missing.lcoc").string()), IoError);
}
