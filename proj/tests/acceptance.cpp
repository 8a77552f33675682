// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>

#include "lco/binio.hpp"
#include "lco/config.hpp"
#include "lco/contrastive.hpp"
#include "lco/evalsuite.hpp"
#include "lco/geometry.hpp"
#include "lco/parallel.hpp"
#include "lco/pipelines.hpp"
#include "lco/theory.hpp"
#include "lco/toymodel.hpp"

using namespace lco;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
    std::printf("criterion %2d: %s  %s (%s)\n", id, pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

RunConfig shipped_config() {
    return RunConfig::from_file(std::string(LCO_SOURCE_DIR) + "/configs/default.cfg");
}

// ---------------------------------------------------------------------------
// 1. gradients

double worst_generative_grad(int instances) {
    WorldSpec ws;
    ws.latent_classes = 8;
    ws.latent_dim = 4;
    ws.vocab_size = 16;
    ws.text_len = 3;
    ws.modalities = {{"image", 10, 0.1}};
    ws.seed = 1;
    const World w = build_world(ws);
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        ToyModel m = init_model(model_spec_for(ws, 8, {8, 6}, 10 + i));
        for (auto& [name, t] : m.params.entries())
            for (double& v : t.values()) v = rng.normal(0.0, 0.5);
        const auto batch = sample_batch(w, 4, rng);
        const std::string mod = i % 2 ? "text" : "image";
        const auto input = InputBatch::from_samples(batch, mod);
        const auto tgt = targets(batch);
        ParamStore g = m.params.zeros_like();
        generative_loss_grad(m, input, tgt, g);
        std::vector<std::string> names{"head.w"};
        for (const auto& n : m.trunk_param_names()) names.push_back(n);
        if (mod == "text")
            names.push_back("tok.emb");
        else
            for (const char* leaf : {"w1", "b1", "w2", "b2"}) names.push_back("enc.image." + std::string(leaf));
        ToyModel probe = m;
        auto f = [&](std::span<const double> t) {
            probe.params.unflatten(std::vector<double>(t.begin(), t.end()), names);
            return generative_loss(probe, input, tgt);
        };
        worst = std::max(worst, grad_check(f, m.params.flatten(names), g.flatten(names)));
    }
    return worst;
}

double worst_infonce_grad(int instances, bool hard) {
    Rng rng(hard ? 202 : 203);
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        const std::size_t n = 2 + rng.uniform_int(7), d = 3 + rng.uniform_int(6);
        const Matrix a = Matrix::gaussian(n, d, 1.0, rng);
        const Matrix p = Matrix::gaussian(n, d, 1.0, rng);
        const Matrix h = Matrix::gaussian(n, d, 1.0, rng);
        const double tau = rng.uniform(0.05, 1.0);
        const auto g = infonce_grad(a, p, tau, hard ? &h : nullptr);
        std::vector<double> theta = a.values(), an = g.d_anchor.values();
        theta.insert(theta.end(), p.values().begin(), p.values().end());
        an.insert(an.end(), g.d_positive.values().begin(), g.d_positive.values().end());
        if (hard) {
            theta.insert(theta.end(), h.values().begin(), h.values().end());
            an.insert(an.end(), g.d_negative.values().begin(), g.d_negative.values().end());
        }
        auto f = [&](std::span<const double> x) {
            const std::size_t m = n * d;
            const Matrix aa(n, d, std::vector<double>(x.begin(), x.begin() + m));
            const Matrix pp(n, d, std::vector<double>(x.begin() + m, x.begin() + 2 * m));
            if (!hard) return infonce(aa, pp, tau);
            const Matrix hh(n, d, std::vector<double>(x.begin() + 2 * m, x.begin() + 3 * m));
            return infonce(aa, pp, tau, &hh);
        };
        worst = std::max(worst, grad_check(f, theta, an));
    }
    return worst;
}

double worst_probe_grad(int instances) {
    Rng rng(204);
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        const std::size_t n = 5 + rng.uniform_int(10), d = 2 + rng.uniform_int(5), c = 2 + rng.uniform_int(4);
        const Matrix x = Matrix::gaussian(n, d, 1.0, rng);
        std::vector<std::size_t> y(n);
        for (auto& v : y) v = rng.uniform_int(c);
        const Matrix w = Matrix::gaussian(c, d, 0.5, rng);
        const Matrix b = Matrix::gaussian(1, c, 0.5, rng);
        const auto g = probe_loss(w, b, x, y, 1e-4);
        std::vector<double> theta = w.values(), an = g.d_w.values();
        theta.insert(theta.end(), b.values().begin(), b.values().end());
        an.insert(an.end(), g.d_b.values().begin(), g.d_b.values().end());
        auto f = [&](std::span<const double> p) {
            const Matrix ww(c, d, std::vector<double>(p.begin(), p.begin() + c * d));
            const Matrix bb(1, c, std::vector<double>(p.begin() + c * d, p.end()));
            return probe_loss(ww, bb, x, y, 1e-4).loss;
        };
        worst = std::max(worst, grad_check(f, theta, an));
    }
    return worst;
}

void criterion_1() {
    const auto t0 = Clock::now();
    const int n = 20;
    const double gen = worst_generative_grad(n);
    const double nce = worst_infonce_grad(n, false);
    const double nce_h = worst_infonce_grad(n, true);
    const double probe = worst_probe_grad(n);
    const double secs = seconds_since(t0);
    const double worst = std::max({gen, nce, nce_h, probe});
    report(1, worst < 1e-4 && secs < 30.0, "gradient checks, 20 instances per loss",
           "max rel err gen " + fmt("%.1e", gen) + ", infonce " + fmt("%.1e", nce) + ", infonce+hard " +
               fmt("%.1e", nce_h) + ", probe " + fmt("%.1e", probe) + "; " + fmt("%.2f", secs) + " s");
}

// ---------------------------------------------------------------------------
// 2. metric oracles

double dcg_oracle(const std::vector<std::string>& ranked, const std::set<std::string>& rel, std::size_t k) {
    double dcg = 0.0, ideal = 0.0;
    for (std::size_t r = 1; r <= k; ++r) {
        if (r <= ranked.size() && rel.count(ranked[r - 1])) dcg += std::log(2.0) / std::log(r + 1.0);
        if (r <= rel.size()) ideal += std::log(2.0) / std::log(r + 1.0);
    }
    return dcg / ideal;
}

double spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    auto rank = [](const std::vector<double>& v, std::size_t i) {
        double less = 0, eq = 0;
        for (double u : v) {
            less += u < v[i];
            eq += u == v[i];
        }
        return less + (eq + 1) / 2;
    };
    std::vector<double> rx(n), ry(n);
    for (std::size_t i = 0; i < n; ++i) {
        rx[i] = rank(x, i);
        ry[i] = rank(y, i);
    }
    const double m = (n + 1) / 2.0;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - m) * (ry[i] - m);
        sxx += (rx[i] - m) * (rx[i] - m);
        syy += (ry[i] - m) * (ry[i] - m);
    }
    return sxy / std::sqrt(sxx * syy);
}

double nmi_oracle(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    const std::size_t ka = *std::max_element(a.begin(), a.end()) + 1;
    const std::size_t kb = *std::max_element(b.begin(), b.end()) + 1;
    std::vector<std::vector<double>> t(ka, std::vector<double>(kb, 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) t[a[i]][b[i]] += 1.0;
    const double n = static_cast<double>(a.size());
    auto h = [n](double c) { return c > 0 ? -c / n * std::log(c / n) : 0.0; };
    double ha = 0, hb = 0, hab = 0;
    int ua = 0, ub = 0;
    for (std::size_t i = 0; i < ka; ++i) {
        double r = 0;
        for (std::size_t j = 0; j < kb; ++j) {
            r += t[i][j];
            hab += h(t[i][j]);
        }
        ha += h(r);
        ua += r > 0;
    }
    for (std::size_t j = 0; j < kb; ++j) {
        double c = 0;
        for (std::size_t i = 0; i < ka; ++i) c += t[i][j];
        hb += h(c);
        ub += c > 0;
    }
    if (ua < 2 || ub < 2) return 0.0;
    return std::clamp((ha + hb - hab) / std::sqrt(ha * hb), 0.0, 1.0);
}

void criterion_2() {
    Rng rng(2024);
    int ndcg_bad = 0, recall_bad = 0, spear_bad = 0, nmi_bad = 0, zs_bad = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t nq = 1 + rng.uniform_int(30), nd = 2 + rng.uniform_int(15), k = 1 + rng.uniform_int(nd);
        Rankings rk;
        Qrels qr;
        for (std::size_t q = 0; q < nq; ++q) {
            const std::string id = "q" + std::to_string(q);
            for (auto d : rng.permutation(nd)) rk[id].push_back("d" + std::to_string(d));
            const std::size_t nrel = 1 + rng.uniform_int(3);
            for (std::size_t r = 0; r < nrel; ++r) qr[id].insert("d" + std::to_string(rng.uniform_int(nd)));
        }
        double nds = 0, hits = 0;
        for (const auto& [id, rel] : qr) {
            nds += dcg_oracle(rk[id], rel, k);
            bool hit = false;
            for (std::size_t r = 0; r < k; ++r) hit = hit || rel.count(rk[id][r]);
            hits += hit;
        }
        ndcg_bad += std::abs(ndcg_at_k(rk, qr, k) - nds / nq) > 1e-12;
        recall_bad += recall_at_k(rk, qr, k) != hits / nq;

        std::vector<double> x, y;
        do {
            const std::size_t n = 3 + rng.uniform_int(25);
            x.assign(n, 0);
            y.assign(n, 0);
            for (std::size_t i = 0; i < n; ++i) {
                x[i] = static_cast<double>(rng.uniform_int(5));
                y[i] = rng.uniform() < 0.5 ? static_cast<double>(rng.uniform_int(5)) : rng.normal();
            }
        } while (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
                 std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; }));
        spear_bad += std::abs(spearman(x, y) - spearman_oracle(x, y)) > 1e-9;

        const std::size_t n = 2 + rng.uniform_int(40);
        std::vector<std::size_t> a(n), b(n);
        const std::size_t ka = 1 + rng.uniform_int(5), kb = 1 + rng.uniform_int(5);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.uniform_int(ka);
            b[i] = rng.uniform_int(kb);
        }
        nmi_bad += std::abs(nmi(a, b) - nmi_oracle(a, b)) > 1e-9;

        const std::size_t ni = 1 + rng.uniform_int(20);
        const Matrix items = Matrix::gaussian(ni, 4, 1.0, rng);
        const Matrix prompts = Matrix::gaussian(5, 4, 1.0, rng);
        std::vector<std::size_t> gold(ni);
        for (auto& g : gold) g = rng.uniform_int(5);
        std::size_t zh = 0;
        for (std::size_t i = 0; i < ni; ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < 5; ++c)
                if (cosine(items.row(i), prompts.row(c)) > cosine(items.row(i), prompts.row(best))) best = c;
            zh += best == gold[i];
        }
        zs_bad += zeroshot_classify(items, prompts, gold) != static_cast<double>(zh) / ni;
    }

    const double r = 1.0 / std::sqrt(2.0);
    const BoundInputs b{128, 2.0, 0.1, 10, 1000, 0.05};
    const std::vector<double> mu{0.1, -0.2};
    const Matrix eye = Matrix::identity(2);
    const std::vector<std::pair<double, double>> pinned{
        {ndcg_at_k({{"q", {"x", "g"}}}, {{"q", {"g"}}}, 10), 0.63093},
        {spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 0.94868},
        {anisotropy(Matrix{{1, 0}, {0, 1}, {r, r}}), 0.47140},
        {infonce(eye, eye, 1.0), 0.31326},
        {pac_bayes_bound(b), 3.03264},
        {kl_gaussian(mu, 0.01, 0.1), 6.11517},
    };
    int pinned_bad = 0;
    for (const auto& [got, want] : pinned) pinned_bad += std::abs(got - want) > 5e-6;
    const int bad = ndcg_bad + recall_bad + spear_bad + nmi_bad + zs_bad + pinned_bad;
    report(2, bad == 0, "metric oracles on 100 instances and pinned values",
           "mismatches ndcg " + std::to_string(ndcg_bad) + ", recall " + std::to_string(recall_bad) + ", spearman " +
               std::to_string(spear_bad) + ", nmi " + std::to_string(nmi_bad) + ", zero-shot " +
               std::to_string(zs_bad) + ", pinned " + std::to_string(pinned_bad) + "/6");
}

// ---------------------------------------------------------------------------
// 3, 4. loss laws and adapter contracts

void criterion_3() {
    const RunConfig cfg = shipped_config();
    const WorldSpec ws = world_spec_from(cfg, 0);
    const World w = build_world(ws);
    const ToyModel m = init_model(model_spec_from(cfg, ws, 0));
    Rng rng(3);
    const auto batch = sample_batch(w, 64, rng);
    bool gen_ok = true;
    std::string mods;
    for (const auto& mod : {std::string("text"), ws.modalities[0].name, ws.modalities[1].name}) {
        gen_ok = gen_ok && generative_loss(m, InputBatch::from_samples(batch, mod), targets(batch)) ==
                               std::log(static_cast<double>(ws.vocab_size));
        mods += (mods.empty() ? "" : ",") + mod;
    }
    bool nce_ok = true;
    for (std::size_t n : {2, 16, 128}) {
        const Matrix u(n, 8, 0.3);
        nce_ok = nce_ok && infonce(u, u, 0.2) == std::log(static_cast<double>(n));
    }
    report(3, gen_ok && nce_ok, "baseline losses exact",
           std::string("zero head ln V on ") + mods + ": " + (gen_ok ? "exact" : "off") +
               "; uniform InfoNCE ln N for n=2,16,128: " + (nce_ok ? "exact" : "off"));
}

void criterion_4() {
    const RunConfig cfg = shipped_config();
    const WorldSpec ws = world_spec_from(cfg, 0);
    const World w = build_world(ws);
    ToyModel m = init_model(model_spec_from(cfg, ws, 0));
    Rng rng(4);
    for (const auto& n : m.trunk_param_names())
        for (double& v : m.params.at(n).values()) v += rng.normal(0.0, 0.05);
    LoraAdapter ad = init_lora(m.spec, cfg.count("lora.r"), cfg.real("lora.alpha"), rng);
    for (auto& [name, t] : ad.params.entries())
        for (double& v : t.values()) v = rng.normal(0.0, 0.1);
    const ToyModel merged = merge_lora(m, ad);
    const auto samples = sample_batch(w, 100, rng);
    double diff = 0.0;
    for (const auto& mod : {std::string("text"), ws.modalities[0].name, ws.modalities[1].name}) {
        const auto in = InputBatch::from_samples(samples, mod);
        diff = std::max(diff, max_abs_diff(encode(merged, in).embeddings, encode(m, in, &ad).embeddings));
    }

    ClConfig cl = cl_config_from(cfg, 0);
    cl.steps = 50;
    WorldTripletSource src(w, true);
    const auto res = cl_train(m, src, cl);
    bool frozen = res.model.params == m.params;
    const Checkpoint c = to_checkpoint(res.merged(), {{"id", "c"}});
    const bool soup_ok = soup({c, c}).tensors == c.tensors;
    report(4, diff < 1e-6 && frozen && soup_ok, "LoRA contracts",
           "merge vs attached max diff " + fmt("%.1e", diff) + " on 100 inputs x 3 modalities; frozen tensors " +
               (frozen ? "bitwise unchanged" : "CHANGED") + "; soup(c,c)=c " + (soup_ok ? "bitwise" : "differs"));
}

// ---------------------------------------------------------------------------
// 5, 6. toy replication of the anisotropy and alignment phenomena

void criteria_5_6() {
    const RunConfig cfg = shipped_config();
    const auto seeds = replicate_seeds(cfg, 0);
    const auto t0 = Clock::now();
    const auto results = parallel_map<AlignmentSeedResult>(seeds.size(), [&](std::size_t i) {
        return alignment_study(cfg, seeds[i]);
    });
    const double secs = seconds_since(t0);

    std::size_t aniso_ok = 0, align_ok = 0;
    double worst_drop = 1.0;
    std::string worst_where, align_detail;
    for (const auto& r : results) {
        bool all = true;
        for (const auto& mod : r.modalities) {
            const double drop = (r.anisotropy_pre.at(mod) - r.anisotropy_post.at(mod)) / r.anisotropy_pre.at(mod);
            if (drop < worst_drop) {
                worst_drop = drop;
                worst_where = "seed " + std::to_string(r.seed) + " " + mod;
            }
            all = all && drop >= 0.20;
        }
        aniso_ok += all;
        bool up = true;
        for (const auto& [mod, pre] : r.curve_pre) {
            const double a = pre.scores.back(), b = r.curve_post.at(mod).scores.back();
            up = up && b > a;
            align_detail += (align_detail.empty() ? "" : " ") + std::to_string(r.seed) + "/" + mod + fmt(":%.3f", a) +
                            fmt("->%.3f", b);
        }
        align_ok += up;
    }
    report(5, aniso_ok == seeds.size(), "anisotropy falls >=20% for every modality after text-only CL",
           std::to_string(aniso_ok) + "/" + std::to_string(seeds.size()) + " seeds; smallest relative drop " +
               fmt("%.1f%%", 100 * worst_drop) + " (" + worst_where + "); " + fmt("%.0f s", secs) + " for " +
               std::to_string(seeds.size()) + " seeds on " + std::to_string(thread_limit()) + " thread(s)");
    report(6, align_ok == seeds.size(), "final-layer mutual kNN rises after text-only CL",
           std::to_string(align_ok) + "/" + std::to_string(seeds.size()) + " seeds (seed/modality:pre->post) " + align_detail);
}

// ---------------------------------------------------------------------------
// 7 - 10

void criterion_7() {
    const auto r = appx_study(shipped_config(), 0);
    const double err = std::abs(r.i_estimate - r.truth.mutual_info);
    report(7, err < 0.15, "H(Y) - Lg approximates the true information",
           "estimate " + fmt("%.4f", r.i_estimate) + ", true " + fmt("%.4f", r.truth.mutual_info) + " +/- " +
               fmt("%.4f", r.truth.std_error) + ", |error| " + fmt("%.4f", err) + " nats");
}

void criterion_8() {
    const auto t0 = Clock::now();
    const auto s = bound_study(shipped_config(), 0);
    const double secs = seconds_since(t0);
    double slack = 1e300, mean_pen = 0.0;
    for (const auto& r : s.runs) {
        slack = std::min(slack, r.bound - r.empirical);
        mean_pen += r.penalty / s.runs.size();
    }
    report(8, s.holds_fraction >= 0.95 && secs < 900.0, "PAC-Bayes bound holds on held-out InfoNCE",
           fmt("%.1f%%", 100 * s.holds_fraction) + " of " + std::to_string(s.runs.size()) +
               " runs; min slack " + fmt("%.3f", slack) + " nats, mean penalty " + fmt("%.3f", mean_pen) + "; " +
               fmt("%.0f s", secs));
}

void criterion_9() {
    const auto r = grsl_study(shipped_config(), 0);
    std::string rows;
    for (const auto& row : r.rows)
        rows += (rows.empty() ? "" : " ") + std::to_string(row.budget) + fmt(":%.3f", row.gen_loss) +
                fmt("/%.3f", row.recall_post);
    report(9, r.fit.spearman >= 0.8 && r.rows.size() >= 5, "generation quality predicts post-CL Recall@1",
           "spearman " + fmt("%.3f", r.fit.spearman) + " over " + std::to_string(r.rows.size()) +
               " budgets (steps:gen_loss/recall) " + rows);
}

void criterion_10() {
    const RunConfig cfg = shipped_config();
    const auto seeds = replicate_seeds(cfg, 0);
    const auto results =
        parallel_map<SeadocSeedResult>(seeds.size(), [&](std::size_t i) { return seadoc_study(cfg, seeds[i]); });
    std::size_t wins = 0;
    std::string detail;
    for (const auto& r : results) {
        wins += r.continued.ndcg >= r.baseline.ndcg;
        detail += (detail.empty() ? "" : " ") + fmt("%.3f", r.baseline.ndcg) + fmt("->%.3f", r.continued.ndcg);
    }
    report(10, wins >= 4, "continued generative pretraining on the noisy modality helps post-CL nDCG@10",
           std::to_string(wins) + "/" + std::to_string(seeds.size()) + " seeds (" +
               (results.empty() ? std::string() : results[0].modality) + ") " + detail);
}

// ---------------------------------------------------------------------------
// 11. determinism of every replicate pipeline

void criterion_11() {
    RunConfig cfg;
    cfg.merge_text(R"(
world.classes = 16
world.latent_dim = 4
world.vocab = 32
world.text_len = 4
world.pages = 3
world.template_len = 1
model.enc_hidden = 16
model.trunk = 16,8
pretrain.steps = 60
pretrain.batch = 32
cl.steps = 20
cl.batch = 8
eval.heldout = 96
eval.align_batch = 64
eval.align_k = 5
eval.ndcg_k = 5
eval.probe_shots = 4
eval.probe_test = 4
eval.sts_pairs = 64
replicate.seeds = 0,1
grsl.budgets = 10,20,40
bound.runs = 3
bound.pool = 64
bound.cl_steps = 10
bound.heldout_batches = 3
seadoc.extra_steps = 20
appx.steps = 50
appx.n_mc = 2000
)",
                   "acceptance");
    const fs::path root = fs::temp_directory_path() / "lco_acceptance_determinism";
    fs::remove_all(root);
    std::size_t files = 0, differing = 0;
    std::string bad;
    for (const auto& name : replicate_names()) {
        // second run with a different worker count
        ::setenv("LCO_THREADS", "1", 1);
        replicate(name, cfg, 7, RunOutput((root / name / "a").string()));
        ::setenv("LCO_THREADS", "3", 1);
        replicate(name, cfg, 7, RunOutput((root / name / "b").string()));
        ::unsetenv("LCO_THREADS");
        for (const auto& e : fs::directory_iterator(root / name / "a")) {
            ++files;
            const auto other = root / name / "b" / e.path().filename();
            if (!fs::exists(other) || binio::read_file(e.path().string()) != binio::read_file(other.string())) {
                ++differing;
                bad += " " + name + "/" + e.path().filename().string();
            }
        }
    }
    report(11, differing == 0 && files > 0, "replicate outputs are byte-identical across reruns",
           std::to_string(replicate_names().size()) + " pipelines, " + std::to_string(files) +
               " files compared with 1 vs 3 worker threads; " + std::to_string(differing) + " differ" + bad);
}

}  // namespace

int main() {
    try {
        criterion_1();
        criterion_2();
        criterion_3();
        criterion_4();
        criteria_5_6();
        criterion_7();
        criterion_8();
        criterion_9();
        criterion_10();
        criterion_11();
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
