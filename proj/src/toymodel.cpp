#include "lco/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lco/binio.hpp"
#include "lco/error.hpp"
#include "lco/hash.hpp"

namespace lco {

namespace {

std::string layer_name(std::size_t l, const char* leaf) { return "trunk." + std::to_string(l) + "." + leaf; }
std::string lora_name(std::size_t l, const char* leaf) { return "lora." + std::to_string(l) + "." + leaf; }
std::string enc_name(const std::string& m, const char* leaf) { return "enc." + m + "." + leaf; }

void tanh_inplace(Matrix& m) {
    for (auto& v : m.values()) v = std::tanh(v);
}

// d *= (1 - y^2) for y = tanh(z).
void tanh_backward(Matrix& d, const Matrix& y) {
    auto& dv = d.values();
    const auto& yv = y.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= 1.0 - yv[i] * yv[i];
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
        throw ValidationError("invalid integer for " + key + ": '" + v + "'");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelSpec

void ModelSpec::validate() const {
    require(enc_hidden >= 1, "model: enc_hidden must be >= 1");
    require(embed_dim >= 1, "model: embed_dim must be >= 1");
    require(vocab_size >= 1 && text_len >= 1, "model: vocab_size and text_len must be >= 1");
    require(trunk_dims.size() >= 2, "model: trunk needs at least 2 layers");
    for (auto d : trunk_dims) require(d >= 1, "model: trunk widths must be >= 1");
    require(trunk_dims.back() == embed_dim, "model: last trunk width must equal embed_dim");
    for (std::size_t i = 0; i < modalities.size(); ++i) {
        const auto& [name, dim] = modalities[i];
        require(!name.empty() && name != kTextModality, "model: invalid modality name '" + name + "'");
        require(dim >= 1, "model: modality " + name + " needs obs_dim >= 1");
        for (std::size_t j = 0; j < i; ++j) require(modalities[j].first != name, "model: duplicate modality " + name);
    }
}

bool ModelSpec::has_modality(const std::string& name) const {
    if (name == kTextModality) return true;
    return std::any_of(modalities.begin(), modalities.end(), [&](const auto& m) { return m.first == name; });
}

std::size_t ModelSpec::obs_dim(const std::string& name) const {
    for (const auto& [n, d] : modalities)
        if (n == name) return d;
    throw ValidationError("unknown modality '" + name + "'");
}

std::string ModelSpec::canonical() const {
    std::map<std::string, std::string> kv;
    kv["model.embed_dim"] = std::to_string(embed_dim);
    kv["model.enc_hidden"] = std::to_string(enc_hidden);
    kv["model.init_seed"] = std::to_string(init_seed);
    std::string mods;
    for (std::size_t i = 0; i < modalities.size(); ++i)
        mods += (i ? "," : "") + modalities[i].first + ":" + std::to_string(modalities[i].second);
    kv["model.modalities"] = mods;
    kv["model.text_len"] = std::to_string(text_len);
    kv["model.trunk_dims"] = join_sizes(trunk_dims);
    kv["model.vocab_size"] = std::to_string(vocab_size);
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

ModelSpec ModelSpec::parse(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("spec block missing key " + key);
        return it->second;
    };
    ModelSpec s;
    s.embed_dim = parse_size("model.embed_dim", get("model.embed_dim"));
    s.enc_hidden = parse_size("model.enc_hidden", get("model.enc_hidden"));
    s.init_seed = parse_size("model.init_seed", get("model.init_seed"));
    s.text_len = parse_size("model.text_len", get("model.text_len"));
    s.vocab_size = parse_size("model.vocab_size", get("model.vocab_size"));
    s.trunk_dims.clear();
    for (const auto& d : split(get("model.trunk_dims"), ',')) s.trunk_dims.push_back(parse_size("model.trunk_dims", d));
    const auto& mods = get("model.modalities");
    if (!mods.empty()) {
        for (const auto& item : split(mods, ',')) {
            const auto colon = item.rfind(':');
            if (colon == std::string::npos) throw FormatError("bad modality entry '" + item + "'");
            s.modalities.emplace_back(item.substr(0, colon), parse_size("model.modalities", item.substr(colon + 1)));
        }
    }
    s.validate();
    return s;
}

ModelSpec model_spec_for(const WorldSpec& world, std::size_t enc_hidden, std::vector<std::size_t> trunk_dims,
                         std::uint64_t init_seed) {
    ModelSpec s;
    for (const auto& m : world.modalities) s.modalities.emplace_back(m.name, m.obs_dim);
    s.enc_hidden = enc_hidden;
    s.trunk_dims = std::move(trunk_dims);
    s.embed_dim = s.trunk_dims.empty() ? 0 : s.trunk_dims.back();
    s.vocab_size = world.vocab_size;
    s.text_len = world.text_len;
    s.init_seed = init_seed;
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Model construction

std::vector<std::string> ToyModel::input_param_names() const {
    std::vector<std::string> out;
    for (const auto& [m, _] : spec.modalities)
        for (const char* leaf : {"w1", "b1", "w2", "b2"}) out.push_back(enc_name(m, leaf));
    out.push_back("tok.emb");
    return out;
}

std::vector<std::string> ToyModel::trunk_param_names() const {
    std::vector<std::string> out;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        out.push_back(layer_name(l, "w"));
        out.push_back(layer_name(l, "b"));
    }
    return out;
}

ToyModel init_model(const ModelSpec& spec) {
    spec.validate();
    ToyModel model{spec, {}};
    Rng rng(spec.init_seed);
    auto& p = model.params;
    for (const auto& [m, dim] : spec.modalities) {
        p.add(enc_name(m, "w1"), Matrix::xavier_uniform(spec.enc_hidden, dim, rng));
        p.add(enc_name(m, "b1"), Matrix(1, spec.enc_hidden));
        p.add(enc_name(m, "w2"), Matrix::xavier_uniform(spec.embed_dim, spec.enc_hidden, rng));
        p.add(enc_name(m, "b2"), Matrix(1, spec.embed_dim));
    }
    p.add("tok.emb", Matrix::gaussian(spec.vocab_size, spec.embed_dim, 1.0, rng));
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        p.add(layer_name(l, "w"), Matrix::xavier_uniform(spec.trunk_dims[l], spec.layer_in(l), rng));
        p.add(layer_name(l, "b"), Matrix(1, spec.trunk_dims[l]));
    }
    p.add("head.w", Matrix(spec.text_len * spec.vocab_size, spec.embed_dim));
    return model;
}

ToyModel with_projection(ToyModel model) {
    require(!model.has_projection(), "model already has a projection layer");
    model.params.add("proj.w", Matrix::identity(model.spec.embed_dim));
    model.params.add("proj.b", Matrix(1, model.spec.embed_dim));
    return model;
}

const Matrix& LoraAdapter::a(std::size_t l) const { return params.at(lora_name(l, "a")); }
const Matrix& LoraAdapter::b(std::size_t l) const { return params.at(lora_name(l, "b")); }

Matrix LoraAdapter::delta(std::size_t l) const { return matmul(b(l), a(l)) * scale(); }

LoraAdapter init_lora(const ModelSpec& spec, std::size_t rank, double alpha, Rng& rng) {
    require(rank >= 1, "lora: rank must be >= 1");
    require(std::isfinite(alpha) && alpha > 0.0, "lora: alpha must be positive");
    LoraAdapter ad;
    ad.rank = rank;
    ad.alpha = alpha;
    const double sd = 1.0 / std::sqrt(static_cast<double>(rank));
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        ad.params.add(lora_name(l, "a"), Matrix::gaussian(rank, spec.layer_in(l), sd, rng));
        ad.params.add(lora_name(l, "b"), Matrix(spec.trunk_dims[l], rank));
    }
    return ad;
}

namespace {

void check_adapter(const ModelSpec& spec, const LoraAdapter& ad) {
    if (ad.num_layers() != spec.num_layers() || ad.params.size() != 2 * spec.num_layers())
        throw ValidationError("lora: adapter has " + std::to_string(ad.num_layers()) + " layers, trunk has " +
                              std::to_string(spec.num_layers()));
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto& a = ad.a(l);
        const auto& b = ad.b(l);
        if (a.rows() != ad.rank || a.cols() != spec.layer_in(l) || b.rows() != spec.trunk_dims[l] ||
            b.cols() != ad.rank)
            throw ValidationError("lora: shape mismatch at trunk layer " + std::to_string(l));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward / backward

InputBatch InputBatch::observations(std::string modality, Matrix obs) {
    InputBatch b;
    b.modality = std::move(modality);
    b.obs = std::move(obs);
    return b;
}

InputBatch InputBatch::text(std::vector<TokenSeq> tokens) {
    InputBatch b;
    b.modality = kTextModality;
    b.tokens = std::move(tokens);
    return b;
}

InputBatch InputBatch::from_samples(const std::vector<Sample>& batch, const std::string& modality) {
    if (modality == kTextModality) return text(text_inputs(batch));
    return observations(modality, stack_observations(batch, modality));
}

ForwardTape forward(const ToyModel& model, const InputBatch& input, const LoraAdapter* adapter) {
    const auto& spec = model.spec;
    const auto& p = model.params;
    if (!spec.has_modality(input.modality)) throw ValidationError("unknown modality '" + input.modality + "'");
    if (adapter) check_adapter(spec, *adapter);
    const std::size_t n = input.size();
    require(n >= 1, "forward: empty input batch");

    ForwardTape tape;
    tape.input = input;
    Matrix u;
    if (input.modality == kTextModality) {
        const Matrix& table = p.at("tok.emb");
        u = Matrix(n, spec.embed_dim);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& seq = input.tokens[i];
            require(!seq.empty(), "forward: empty token sequence");
            auto row = u.row(i);
            for (int t : seq) {
                if (t < 0 || static_cast<std::size_t>(t) >= spec.vocab_size)
                    throw ValidationError("token id " + std::to_string(t) + " out of range for vocab " +
                                          std::to_string(spec.vocab_size));
                const auto e = table.row(static_cast<std::size_t>(t));
                for (std::size_t c = 0; c < spec.embed_dim; ++c) row[c] += e[c];
            }
            const double inv = 1.0 / static_cast<double>(seq.size());
            for (auto& v : row) v *= inv;
        }
    } else {
        const std::size_t dim = spec.obs_dim(input.modality);
        if (input.obs.cols() != dim)
            throw ValidationError("modality " + input.modality + " expects obs_dim " + std::to_string(dim) +
                                  ", got " + std::to_string(input.obs.cols()));
        Matrix h = matmul_nt(input.obs, p.at(enc_name(input.modality, "w1")));
        add_row_bias(h, p.at(enc_name(input.modality, "b1")));
        tanh_inplace(h);
        u = matmul_nt(h, p.at(enc_name(input.modality, "w2")));
        add_row_bias(u, p.at(enc_name(input.modality, "b2")));
        tape.enc_hidden = std::move(h);
    }

    tape.acts.reserve(spec.num_layers() + 1);
    tape.acts.push_back(std::move(u));
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const Matrix& a = tape.acts.back();
        Matrix z = matmul_nt(a, p.at(layer_name(l, "w")));
        add_row_bias(z, p.at(layer_name(l, "b")));
        if (adapter) {
            Matrix mid = matmul_nt(a, adapter->a(l));
            z += matmul_nt(mid, adapter->b(l)) * adapter->scale();
            tape.lora_mid.push_back(std::move(mid));
        }
        if (l + 1 < spec.num_layers()) tanh_inplace(z);
        tape.acts.push_back(std::move(z));
    }

    if (model.has_projection()) {
        tape.embedding = matmul_nt(tape.acts.back(), p.at("proj.w"));
        add_row_bias(tape.embedding, p.at("proj.b"));
    } else {
        tape.embedding = tape.acts.back();
    }
    return tape;
}

void backward(const ToyModel& model, const LoraAdapter* adapter, const ForwardTape& tape, const Matrix& d_embedding,
              const GradSinks& sinks) {
    const auto& spec = model.spec;
    const auto& p = model.params;
    require(d_embedding.rows() == tape.embedding.rows() && d_embedding.cols() == tape.embedding.cols(),
            "backward: gradient shape mismatch");
    require(!adapter || sinks.adapter, "backward: adapter gradients need a sink");
    require(!(sinks.projection || sinks.trunk || sinks.inputs) || sinks.model, "backward: model gradients need a sink");

    Matrix d = d_embedding;
    if (model.has_projection()) {
        if (sinks.projection) {
            sinks.model->at("proj.w") += matmul_tn(d, tape.acts.back());
            sinks.model->at("proj.b") += column_sums(d);
        }
        if (!sinks.trunk && !sinks.inputs && !adapter) return;
        d = matmul(d, p.at("proj.w"));
    } else if (!sinks.trunk && !sinks.inputs && !adapter) {
        return;
    }

    for (std::size_t li = spec.num_layers(); li-- > 0;) {
        const Matrix& a_in = tape.acts[li];
        if (li + 1 < spec.num_layers()) tanh_backward(d, tape.acts[li + 1]);
        const Matrix& dz = d;
        if (sinks.trunk) {
            sinks.model->at(layer_name(li, "w")) += matmul_tn(dz, a_in);
            sinks.model->at(layer_name(li, "b")) += column_sums(dz);
        }
        Matrix dz_b;
        if (adapter) {
            const double s = adapter->scale();
            sinks.adapter->at(lora_name(li, "b")) += matmul_tn(dz, tape.lora_mid[li]) * s;
            dz_b = matmul(dz, adapter->b(li)) * s;  // n x r
            sinks.adapter->at(lora_name(li, "a")) += matmul_tn(dz_b, a_in);
        }
        const bool need_input_grad = li > 0 || sinks.inputs;
        if (!need_input_grad) break;
        Matrix da = matmul(dz, p.at(layer_name(li, "w")));
        if (adapter) da += matmul(dz_b, adapter->a(li));
        d = std::move(da);
    }
    if (!sinks.inputs) return;

    // d is now d loss / d trunk input.
    const auto& input = tape.input;
    if (input.modality == kTextModality) {
        Matrix& dt = sinks.model->at("tok.emb");
        for (std::size_t i = 0; i < input.tokens.size(); ++i) {
            const auto& seq = input.tokens[i];
            const double inv = 1.0 / static_cast<double>(seq.size());
            const auto di = d.row(i);
            for (int t : seq) {
                auto row = dt.row(static_cast<std::size_t>(t));
                for (std::size_t c = 0; c < row.size(); ++c) row[c] += di[c] * inv;
            }
        }
    } else {
        const auto& m = input.modality;
        sinks.model->at(enc_name(m, "w2")) += matmul_tn(d, tape.enc_hidden);
        sinks.model->at(enc_name(m, "b2")) += column_sums(d);
        Matrix dh = matmul(d, p.at(enc_name(m, "w2")));
        tanh_backward(dh, tape.enc_hidden);
        sinks.model->at(enc_name(m, "w1")) += matmul_tn(dh, input.obs);
        sinks.model->at(enc_name(m, "b1")) += column_sums(dh);
    }
}

Encoding encode(const ToyModel& model, const InputBatch& input, const LoraAdapter* adapter, bool capture_layers) {
    auto tape = forward(model, input, adapter);
    Encoding enc;
    enc.embeddings = std::move(tape.embedding);
    if (capture_layers) enc.layers = std::move(tape.acts);
    return enc;
}

std::vector<double> encode_one(const ToyModel& model, const std::string& modality, std::span<const double> obs,
                               const LoraAdapter* adapter) {
    Matrix m(1, obs.size(), std::vector<double>(obs.begin(), obs.end()));
    return encode(model, InputBatch::observations(modality, std::move(m)), adapter).embeddings.values();
}

std::vector<double> encode_text(const ToyModel& model, const TokenSeq& tokens, const LoraAdapter* adapter) {
    return encode(model, InputBatch::text({tokens}), adapter).embeddings.values();
}

// ---------------------------------------------------------------------------
// Generative loss

LossAndGrad position_cross_entropy(const Matrix& logits, const std::vector<TokenSeq>& targets,
                                   std::size_t vocab_size) {
    const std::size_t n = logits.rows();
    require(n >= 1 && targets.size() == n, "cross entropy: batch size mismatch");
    require(vocab_size >= 1 && logits.cols() % vocab_size == 0, "cross entropy: logits width not a multiple of V");
    const std::size_t len = logits.cols() / vocab_size;
    LossAndGrad out;
    out.d_logits = Matrix(n, logits.cols());
    const double inv_count = 1.0 / static_cast<double>(n * len);
    double mean = 0.0;
    std::size_t count = 0;
    std::vector<double> shifted(vocab_size);
    for (std::size_t i = 0; i < n; ++i) {
        require(targets[i].size() == len, "cross entropy: target length mismatch");
        for (std::size_t pos = 0; pos < len; ++pos) {
            const int gold_tok = targets[i][pos];
            if (gold_tok < 0 || static_cast<std::size_t>(gold_tok) >= vocab_size)
                throw ValidationError("token id " + std::to_string(gold_tok) + " >= vocab size " +
                                      std::to_string(vocab_size));
            const std::size_t gold = static_cast<std::size_t>(gold_tok);
            const double* z = logits.data() + i * logits.cols() + pos * vocab_size;
            // -log softmax[gold] = log sum_v exp(z_v - z_gold), evaluated with max shift.
            double mx = 0.0;
            for (std::size_t v = 0; v < vocab_size; ++v) {
                shifted[v] = z[v] - z[gold];
                mx = std::max(mx, shifted[v]);
            }
            double sum = 0.0;
            for (std::size_t v = 0; v < vocab_size; ++v) sum += std::exp(shifted[v] - mx);
            const double nll = mx + std::log(sum);
            ++count;
            mean += (nll - mean) / static_cast<double>(count);
            double* g = out.d_logits.data() + i * logits.cols() + pos * vocab_size;
            for (std::size_t v = 0; v < vocab_size; ++v) g[v] = std::exp(shifted[v] - mx) / sum * inv_count;
            g[gold] -= inv_count;
        }
    }
    out.loss = mean;
    return out;
}

double generative_loss(const ToyModel& model, const InputBatch& input, const std::vector<TokenSeq>& targets,
                       const LoraAdapter* adapter) {
    const auto tape = forward(model, input, adapter);
    const Matrix logits = matmul_nt(tape.embedding, model.params.at("head.w"));
    return position_cross_entropy(logits, targets, model.spec.vocab_size).loss;
}

double generative_loss_grad(const ToyModel& model, const InputBatch& input, const std::vector<TokenSeq>& targets,
                            ParamStore& grads, double scale) {
    const auto tape = forward(model, input);
    const Matrix& head = model.params.at("head.w");
    const Matrix logits = matmul_nt(tape.embedding, head);
    auto ce = position_cross_entropy(logits, targets, model.spec.vocab_size);
    ce.d_logits *= scale;
    grads.at("head.w") += matmul_tn(ce.d_logits, tape.embedding);
    const Matrix d_emb = matmul(ce.d_logits, head);
    GradSinks sinks;
    sinks.model = &grads;
    sinks.projection = model.has_projection();
    sinks.trunk = true;
    sinks.inputs = true;
    backward(model, nullptr, tape, d_emb, sinks);
    return ce.loss;
}

PretrainResult pretrain(const ToyModel& model, const World& world, const PretrainConfig& cfg, Rng& rng) {
    require(!cfg.source_modalities.empty(), "pretrain: empty source modality list");
    require(cfg.batch >= 1, "pretrain: batch must be >= 1");
    for (const auto& m : cfg.source_modalities) {
        require(model.spec.has_modality(m), "pretrain: model has no modality '" + m + "'");
        if (m != kTextModality) world.spec.modality(m);
    }
    require(model.spec.vocab_size == world.spec.vocab_size && model.spec.text_len == world.spec.text_len,
            "pretrain: model vocabulary/text length does not match the world");

    for (std::size_t s : cfg.snapshot_steps)
        require(s >= 1 && s <= cfg.steps, "pretrain: snapshot step " + std::to_string(s) + " outside [1, steps]");

    PretrainResult res{model, {}, {}};
    if (cfg.steps == 0) return res;

    std::vector<std::string> trainable{"head.w"};
    for (const auto& n : res.model.trunk_param_names()) trainable.push_back(n);
    if (res.model.has_projection()) {
        trainable.push_back("proj.w");
        trainable.push_back("proj.b");
    }
    for (const auto& m : cfg.source_modalities) {
        if (m == kTextModality) {
            trainable.push_back("tok.emb");
        } else {
            for (const char* leaf : {"w1", "b1", "w2", "b2"}) trainable.push_back(enc_name(m, leaf));
        }
    }
    std::sort(trainable.begin(), trainable.end());
    trainable.erase(std::unique(trainable.begin(), trainable.end()), trainable.end());

    Adam adam(AdamConfig{cfg.lr});
    const double w = 1.0 / static_cast<double>(cfg.source_modalities.size());
    res.trace.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto batch = sample_batch(world, cfg.batch, rng);
        const auto tgt = targets(batch);
        ParamStore grads = res.model.params.zeros_like();
        double mean = 0.0;
        for (std::size_t k = 0; k < cfg.source_modalities.size(); ++k) {
            const auto input = InputBatch::from_samples(batch, cfg.source_modalities[k]);
            const double loss = generative_loss_grad(res.model, input, tgt, grads, w);
            mean += (loss - mean) / static_cast<double>(k + 1);
        }
        res.trace.push_back(mean);
        adam.step(res.model.params, grads, trainable);
        for (std::size_t s : cfg.snapshot_steps)
            if (s == step + 1) res.snapshots.push_back(res.model);
    }
    return res;
}

ToyModel merge_lora(const ToyModel& model, const LoraAdapter& adapter) {
    check_adapter(model.spec, adapter);
    ToyModel merged = model;
    for (std::size_t l = 0; l < model.spec.num_layers(); ++l) merged.params.at(layer_name(l, "w")) += adapter.delta(l);
    return merged;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'L', 'C', 'O', 'C'};
constexpr std::uint16_t kCheckpointVersion = 1;

void check_layout(const ModelSpec& spec, const ParamStore& tensors) {
    const ToyModel reference = init_model(spec);
    const auto& ref = reference.params;
    for (const auto& [name, m] : ref.entries()) {
        if (!tensors.contains(name)) throw FormatError("checkpoint missing tensor '" + name + "'");
        const auto& t = tensors.at(name);
        if (t.rows() != m.rows() || t.cols() != m.cols()) throw FormatError("checkpoint tensor '" + name + "' has wrong shape");
    }
}

}  // namespace

Checkpoint to_checkpoint(const ToyModel& model, std::map<std::string, std::string> meta) {
    meta.try_emplace("kind", "model");
    return Checkpoint{model.spec, model.params, std::move(meta)};
}

ToyModel model_from_checkpoint(const Checkpoint& ckpt) {
    const auto kind = ckpt.meta.find("kind");
    if (kind != ckpt.meta.end() && kind->second != "model")
        throw ValidationError("checkpoint holds a " + kind->second + ", not a model");
    check_layout(ckpt.spec, ckpt.tensors);
    ToyModel model{ckpt.spec, ckpt.tensors};
    for (const auto& [name, m] : model.params.entries()) {
        if (!m.all_finite()) throw ValidationError("checkpoint tensor '" + name + "' has non-finite values");
    }
    return model;
}

Checkpoint adapter_checkpoint(const ModelSpec& spec, const LoraAdapter& adapter, std::map<std::string, std::string> meta) {
    check_adapter(spec, adapter);
    meta["kind"] = "lora";
    meta["lora.rank"] = std::to_string(adapter.rank);
    std::ostringstream alpha;
    alpha.precision(17);
    alpha << adapter.alpha;
    meta["lora.alpha"] = alpha.str();
    return Checkpoint{spec, adapter.params, std::move(meta)};
}

LoraAdapter adapter_from_checkpoint(const Checkpoint& ckpt) {
    const auto kind = ckpt.meta.find("kind");
    if (kind == ckpt.meta.end() || kind->second != "lora") throw ValidationError("checkpoint is not a LoRA adapter");
    LoraAdapter ad;
    try {
        ad.rank = parse_size("lora.rank", ckpt.meta.at("lora.rank"));
        ad.alpha = std::stod(ckpt.meta.at("lora.alpha"));
    } catch (const std::out_of_range&) {
        throw FormatError("adapter checkpoint missing rank/alpha");
    }
    ad.params = ckpt.tensors;
    check_adapter(ckpt.spec, ad);
    return ad;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string block = ckpt.spec.canonical();
    for (const auto& [k, v] : ckpt.meta) {
        require(k.find('=') == std::string::npos && k.find('\n') == std::string::npos && v.find('\n') == std::string::npos,
                "checkpoint metadata may not contain '=' in keys or newlines");
        block += "meta." + k + "=" + v + "\n";
    }
    std::string out(kCheckpointMagic, 4);
    binio::put_u16(out, kCheckpointVersion);
    binio::put_string(out, block);
    binio::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors.entries()) {
        binio::put_string(out, name);
        binio::put_u32(out, static_cast<std::uint32_t>(m.rows()));
        binio::put_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (double v : m.values()) binio::put_f64(out, v);
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    binio::Reader in(bytes);
    const auto magic = in.take(4, "magic");
    if (magic != std::string_view(kCheckpointMagic, 4)) throw FormatError("bad checkpoint magic (expected LCOC)");
    const auto version = in.u16("version");
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::string block = in.string("spec block");

    std::map<std::string, std::string> spec_kv, meta;
    std::istringstream lines(block);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed spec line '" + line + "'");
        auto key = line.substr(0, eq);
        auto value = line.substr(eq + 1);
        if (key.rfind("meta.", 0) == 0)
            meta.emplace(key.substr(5), std::move(value));
        else
            spec_kv.emplace(std::move(key), std::move(value));
    }
    Checkpoint ckpt;
    try {
        ckpt.spec = ModelSpec::parse(spec_kv);
    } catch (const ValidationError& e) {
        throw FormatError(std::string("invalid spec block: ") + e.what());
    }
    ckpt.meta = std::move(meta);

    const std::uint32_t count = in.u32("tensor count");
    for (std::uint32_t t = 0; t < count; ++t) {
        std::string name = in.string("tensor name");
        const std::uint32_t rows = in.u32("tensor rows");
        const std::uint32_t cols = in.u32("tensor cols");
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        if (in.remaining() < n * 8)
            throw FormatError("truncated file: tensor '" + name + "' needs " + std::to_string(n * 8) + " bytes, found " +
                              std::to_string(in.remaining()));
        std::vector<double> values(n);
        for (auto& v : values) v = in.f64("tensor data");
        if (ckpt.tensors.contains(name)) throw FormatError("duplicate tensor '" + name + "'");
        ckpt.tensors.add(name, Matrix(rows, cols, std::move(values)));
    }
    if (in.remaining() != 0) throw FormatError("trailing bytes after last tensor");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    binio::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(binio::read_file(path)); }

std::string checkpoint_id(const Checkpoint& ckpt) {
    const auto it = ckpt.meta.find("id");
    if (it != ckpt.meta.end()) return it->second;
    return content_hash(serialize_checkpoint(ckpt));
}

Checkpoint soup(const std::vector<Checkpoint>& checkpoints) {
    require(checkpoints.size() >= 2, "soup: need at least 2 checkpoints");
    const auto& first = checkpoints.front();
    for (const auto& c : checkpoints) {
        if (!(c.spec == first.spec)) throw ValidationError("soup: checkpoints have different model specs");
        if (!c.tensors.same_layout(first.tensors)) throw ValidationError("soup: checkpoints have different tensors");
    }
    Checkpoint out;
    out.spec = first.spec;
    const double inv = 1.0 / static_cast<double>(checkpoints.size());
    std::vector<double> vals(checkpoints.size());
    for (std::size_t t = 0; t < first.tensors.size(); ++t) {
        const auto& [name, ref] = first.tensors.entries()[t];
        Matrix avg(ref.rows(), ref.cols());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            for (std::size_t c = 0; c < checkpoints.size(); ++c) vals[c] = checkpoints[c].tensors.entries()[t].second.values()[i];
            std::sort(vals.begin(), vals.end());
            double sum = 0.0;
            for (double v : vals) sum += v;
            avg.values()[i] = sum * inv;
        }
        out.tensors.add(name, std::move(avg));
    }
    std::vector<std::string> parents;
    for (const auto& c : checkpoints) parents.push_back(checkpoint_id(c));
    std::sort(parents.begin(), parents.end());
    std::string joined;
    for (std::size_t i = 0; i < parents.size(); ++i) joined += (i ? "," : "") + parents[i];
    out.meta["kind"] = first.meta.count("kind") ? first.meta.at("kind") : "model";
    out.meta["stage"] = "soup";
    out.meta["parents"] = joined;
    for (const char* k : {"lora.rank", "lora.alpha"})
        if (first.meta.count(k)) out.meta[k] = first.meta.at(k);
    return out;
}

}  // namespace lco
