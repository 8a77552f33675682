#include "lco/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <istream>

#include <json.hpp>

#include "lco/error.hpp"
#include "lco/params.hpp"

namespace lco {

void TripletBatch::validate() const {
    require(positives.size() == anchors.size(), "triplets: anchors and positives differ in count");
    require(hard_negatives.empty() || hard_negatives.size() == anchors.size(),
            "triplets: hard negatives differ in count from anchors");
}

namespace {

struct Normalized {
    Matrix unit;
    std::vector<double> norms;
};

Normalized normalize(const Matrix& m, const char* role) {
    Normalized out{m, std::vector<double>(m.rows())};
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double n = norm(m.row(i));
        if (!(n > 0.0) || !std::isfinite(n))
            throw ValidationError(std::string("infonce: zero-norm or non-finite ") + role + " row " + std::to_string(i));
        out.norms[i] = n;
        for (auto& v : out.unit.row(i)) v /= n;
    }
    return out;
}

// Gradient through x -> x / |x| given d loss / d unit.
Matrix unnormalize_grad(const Normalized& nz, const Matrix& d_unit) {
    Matrix out(d_unit.rows(), d_unit.cols());
    for (std::size_t i = 0; i < d_unit.rows(); ++i) {
        const auto u = nz.unit.row(i);
        const auto du = d_unit.row(i);
        const double proj = dot(u, du);
        auto o = out.row(i);
        for (std::size_t c = 0; c < o.size(); ++c) o[c] = (du[c] - u[c] * proj) / nz.norms[i];
    }
    return out;
}

InfoNceResult infonce_impl(const Matrix& anchors, const Matrix& positives, double tau, const Matrix* negs,
                           bool want_grad) {
    const std::size_t n = anchors.rows();
    require(n >= 1, "infonce: empty batch");
    require(std::isfinite(tau) && tau > 0.0, "infonce: temperature must be positive");
    require(positives.rows() == n && positives.cols() == anchors.cols(), "infonce: positives shape mismatch");
    if (negs) require(negs->rows() == n && negs->cols() == anchors.cols(), "infonce: hard negatives shape mismatch");

    const auto a = normalize(anchors, "anchor");
    const auto p = normalize(positives, "positive");
    std::optional<Normalized> h;
    if (negs) h = normalize(*negs, "hard negative");

    const Matrix sp = matmul_nt(a.unit, p.unit) * (1.0 / tau);
    Matrix sh;
    if (h) sh = matmul_nt(a.unit, h->unit) * (1.0 / tau);

    InfoNceResult res;
    Matrix gp(n, n), gh(h ? n : 0, h ? n : 0);
    const double inv_n = 1.0 / static_cast<double>(n);
    double mean = 0.0;
    std::vector<double> d;
    for (std::size_t i = 0; i < n; ++i) {
        const double gold = sp(i, i);
        d.clear();
        for (std::size_t j = 0; j < n; ++j) d.push_back(sp(i, j) - gold);
        if (h)
            for (std::size_t j = 0; j < n; ++j) d.push_back(sh(i, j) - gold);
        const double mx = *std::max_element(d.begin(), d.end());
        double sum = 0.0;
        for (double v : d) sum += std::exp(v - mx);
        const double nll = mx + std::log(sum);
        mean += (nll - mean) / static_cast<double>(i + 1);
        if (!want_grad) continue;
        for (std::size_t j = 0; j < n; ++j) gp(i, j) = std::exp(d[j] - mx) / sum * inv_n;
        gp(i, i) -= inv_n;
        if (h)
            for (std::size_t j = 0; j < n; ++j) gh(i, j) = std::exp(d[n + j] - mx) / sum * inv_n;
    }
    res.loss = mean;
    if (!want_grad) return res;

    // s = a.p / tau: d a_unit = g p_unit / tau, d p_unit = g^T a_unit / tau.
    const double it = 1.0 / tau;
    Matrix da = matmul(gp, p.unit) * it;
    Matrix dp = matmul_tn(gp, a.unit) * it;
    res.d_positive = unnormalize_grad(p, dp);
    if (h) {
        da += matmul(gh, h->unit) * it;
        res.d_negative = unnormalize_grad(*h, matmul_tn(gh, a.unit) * it);
    }
    res.d_anchor = unnormalize_grad(a, da);
    return res;
}

}  // namespace

double infonce(const Matrix& anchors, const Matrix& positives, double tau, const Matrix* hard_negatives) {
    return infonce_impl(anchors, positives, tau, hard_negatives, false).loss;
}

InfoNceResult infonce_grad(const Matrix& anchors, const Matrix& positives, double tau, const Matrix* hard_negatives) {
    return infonce_impl(anchors, positives, tau, hard_negatives, true);
}

// ---------------------------------------------------------------------------
// Triplet sources

namespace {

std::size_t other_page(std::size_t pages, std::size_t page, Rng& rng) {
    const std::size_t r = rng.uniform_int(pages - 1);
    return r >= page ? r + 1 : r;
}

void append_triplet(const World& world, std::size_t cls, bool hard, Rng& rng, TripletBatch& out) {
    const auto& pages = world.token_pages[cls];
    const std::size_t pa = rng.uniform_int(pages.size());
    const std::size_t pp = other_page(pages.size(), pa, rng);
    out.anchors.push_back(pages[pa]);
    out.positives.push_back(pages[pp]);
    if (hard) {
        const auto& neg = world.token_pages[world.nearest_other_class(cls)];
        out.hard_negatives.push_back(neg[rng.uniform_int(neg.size())]);
    }
}

void require_pages(const World& world) {
    require(world.spec.token_pages >= 2, "toy triplets need a world with at least 2 token pages per class");
}

}  // namespace

WorldTripletSource::WorldTripletSource(const World& world, bool hard_negatives)
    : world_(world), hard_negatives_(hard_negatives) {
    require_pages(world);
}

TripletBatch WorldTripletSource::next(std::size_t batch, Rng& rng) {
    require(batch >= 1 && batch <= world_.spec.latent_classes,
            "triplet batch size must be in [1, K] so that classes are distinct");
    TripletBatch out;
    for (std::size_t cls : rng.sample_without_replacement(world_.spec.latent_classes, batch))
        append_triplet(world_, cls, hard_negatives_, rng, out);
    return out;
}

PoolTripletSource::PoolTripletSource(TripletBatch pool, std::vector<std::size_t> classes)
    : pool_(std::move(pool)), classes_(std::move(classes)) {
    pool_.validate();
    require(pool_.size() >= 1, "triplet pool is empty");
    require(classes_.empty() || classes_.size() == pool_.size(), "triplet pool: class list length mismatch");
}

TripletBatch PoolTripletSource::next(std::size_t batch, Rng& rng) {
    require(batch >= 1 && batch <= pool_.size(), "triplet batch larger than the pool");
    const auto order = rng.permutation(pool_.size());
    TripletBatch out;
    std::vector<std::size_t> used;
    for (std::size_t idx : order) {
        if (out.size() == batch) break;
        if (!classes_.empty()) {
            if (std::find(used.begin(), used.end(), classes_[idx]) != used.end()) continue;
            used.push_back(classes_[idx]);
        }
        out.anchors.push_back(pool_.anchors[idx]);
        out.positives.push_back(pool_.positives[idx]);
        if (pool_.has_negatives()) out.hard_negatives.push_back(pool_.hard_negatives[idx]);
    }
    require(out.size() == batch, "triplet pool has fewer than " + std::to_string(batch) + " distinct classes");
    return out;
}

TripletPool make_toy_triplets(const World& world, std::size_t n, Rng& rng, bool hard_negatives) {
    require(n >= 2, "make_toy_triplets: n must be >= 2");
    require_pages(world);
    TripletPool pool;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = rng.uniform_int(world.spec.latent_classes);
        append_triplet(world, cls, hard_negatives, rng, pool.triplets);
        pool.classes.push_back(cls);
    }
    return pool;
}

TripletBatch read_triplets(std::istream& in, std::size_t vocab_size) {
    TripletBatch out;
    std::string line;
    std::size_t lineno = 0;
    auto tokens = [&](const nlohmann::json& j, const char* key) {
        if (!j.contains(key) || !j[key].is_array())
            throw ValidationError("triplets line " + std::to_string(lineno) + ": missing array field '" + key + "'");
        TokenSeq seq;
        for (const auto& t : j[key]) {
            if (!t.is_number_integer() || t.get<long long>() < 0 || t.get<unsigned long long>() >= vocab_size)
                throw ValidationError("triplets line " + std::to_string(lineno) + ": bad token in '" + key + "'");
            seq.push_back(t.get<int>());
        }
        require(!seq.empty(), "triplets line " + std::to_string(lineno) + ": empty '" + key + "'");
        return seq;
    };
    bool any_neg = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("triplets line " + std::to_string(lineno) + ": " + e.what());
        }
        out.anchors.push_back(tokens(j, "anchor"));
        out.positives.push_back(tokens(j, "pos"));
        const bool has_neg = j.contains("neg");
        if (out.anchors.size() == 1) any_neg = has_neg;
        require(has_neg == any_neg, "triplets line " + std::to_string(lineno) + ": 'neg' must be on all lines or none");
        if (has_neg) out.hard_negatives.push_back(tokens(j, "neg"));
    }
    require(out.size() >= 1, "triplets file is empty");
    return out;
}

// ---------------------------------------------------------------------------
// Training

std::string to_string(ClStrategy s) {
    switch (s) {
        case ClStrategy::lora: return "lora";
        case ClStrategy::full_finetune: return "full_finetune";
        case ClStrategy::linear_projection: return "linear_projection";
    }
    return "?";
}

ClStrategy parse_strategy(const std::string& s) {
    if (s == "lora") return ClStrategy::lora;
    if (s == "full_finetune") return ClStrategy::full_finetune;
    if (s == "linear_projection") return ClStrategy::linear_projection;
    throw ValidationError("unknown CL strategy '" + s + "' (expected lora, full_finetune or linear_projection)");
}

void ClConfig::validate() const {
    require(std::isfinite(tau) && tau > 0.0, "cl: tau must be positive");
    require(std::isfinite(lr) && lr > 0.0, "cl: lr must be positive");
    require(batch >= 1, "cl: batch must be >= 1");
    if (strategy == ClStrategy::lora) {
        require(lora_rank >= 1, "lora: rank must be >= 1");
        require(std::isfinite(lora_alpha) && lora_alpha > 0.0, "lora: alpha must be positive");
    }
}

ToyModel ClResult::merged() const { return adapter ? merge_lora(model, *adapter) : model; }

namespace {

std::vector<TokenSeq> stacked_text(const TripletBatch& batch) {
    std::vector<TokenSeq> all = batch.anchors;
    all.insert(all.end(), batch.positives.begin(), batch.positives.end());
    all.insert(all.end(), batch.hard_negatives.begin(), batch.hard_negatives.end());
    return all;
}

// Rows [block*n, (block+1)*n) of e.
Matrix row_block(const Matrix& e, std::size_t n, std::size_t block) {
    const auto first = e.values().begin() + static_cast<std::ptrdiff_t>(block * n * e.cols());
    return Matrix(n, e.cols(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n * e.cols())));
}

}  // namespace

TripletEmbeddings embed_triplets(const ToyModel& model, const TripletBatch& batch, const LoraAdapter* adapter) {
    batch.validate();
    const Matrix e = encode(model, InputBatch::text(stacked_text(batch)), adapter).embeddings;
    const std::size_t n = batch.size();
    TripletEmbeddings out{row_block(e, n, 0), row_block(e, n, 1), {}};
    if (batch.has_negatives()) out.negatives = row_block(e, n, 2);
    return out;
}

ClResult cl_train(const ToyModel& model, TripletSource& source, const ClConfig& cfg) {
    cfg.validate();
    ClResult res{model, std::nullopt, {}};
    Rng rng(cfg.seed);
    std::vector<std::string> names;
    switch (cfg.strategy) {
        case ClStrategy::lora:
            res.adapter = init_lora(model.spec, cfg.lora_rank, cfg.lora_alpha, rng);
            names = res.adapter->params.names();
            break;
        case ClStrategy::full_finetune:
            names = model.trunk_param_names();
            break;
        case ClStrategy::linear_projection:
            res.model = with_projection(model);
            names = {"proj.w", "proj.b"};
            break;
    }
    Adam adam(AdamConfig{cfg.lr});
    res.trace.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const TripletBatch batch = source.next(cfg.batch, rng);
        batch.validate();
        const LoraAdapter* ad = res.adapter ? &*res.adapter : nullptr;
        const auto tape = forward(res.model, InputBatch::text(stacked_text(batch)), ad);

        const std::size_t n = batch.size(), d = tape.embedding.cols();
        const Matrix ea = row_block(tape.embedding, n, 0), ep = row_block(tape.embedding, n, 1);
        Matrix en;
        if (batch.has_negatives()) en = row_block(tape.embedding, n, 2);
        const auto g = infonce_grad(ea, ep, cfg.tau, batch.has_negatives() ? &en : nullptr);
        res.trace.push_back(g.loss);

        Matrix d_emb(tape.embedding.rows(), d);
        auto put = [&](const Matrix& part, std::size_t block) {
            std::copy(part.values().begin(), part.values().end(),
                      d_emb.values().begin() + static_cast<std::ptrdiff_t>(block * n * d));
        };
        put(g.d_anchor, 0);
        put(g.d_positive, 1);
        if (batch.has_negatives()) put(g.d_negative, 2);

        if (res.adapter) {
            ParamStore grads = res.adapter->params.zeros_like();
            GradSinks sinks;
            sinks.adapter = &grads;
            backward(res.model, ad, tape, d_emb, sinks);
            adam.step(res.adapter->params, grads, names);
        } else {
            ParamStore grads = res.model.params.zeros_like();
            GradSinks sinks;
            sinks.model = &grads;
            sinks.trunk = cfg.strategy == ClStrategy::full_finetune;
            sinks.projection = cfg.strategy == ClStrategy::linear_projection;
            backward(res.model, nullptr, tape, d_emb, sinks);
            adam.step(res.model.params, grads, names);
        }
    }
    return res;
}

double mean_infonce(const ToyModel& model, const LoraAdapter* adapter, TripletSource& source, std::size_t n_batches,
                    std::size_t batch, double tau, Rng& rng) {
    require(n_batches >= 1, "mean_infonce: need at least one batch");
    double mean = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
        const auto tb = source.next(batch, rng);
        const auto e = embed_triplets(model, tb, adapter);
        const double loss = infonce(e.anchors, e.positives, tau, tb.has_negatives() ? &e.negatives : nullptr);
        mean += (loss - mean) / static_cast<double>(b + 1);
    }
    return mean;
}

}  // namespace lco
