#include "lco/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "lco/error.hpp"

namespace lco {

void WorldSpec::validate() const {
    require(latent_classes >= 2, "world: latent_classes must be >= 2");
    require(latent_dim >= 1, "world: latent_dim must be >= 1");
    require(vocab_size >= 2, "world: vocab_size must be >= 2");
    require(text_len >= 1, "world: text_len must be >= 1");
    require(token_pages >= 1, "world: token_pages must be >= 1");
    require(template_len < text_len, "world: template_len must be < text_len");
    require(page_share >= 0.0 && page_share <= 1.0, "world: page_share must be in [0,1]");
    require(std::isfinite(render_gain) && std::isfinite(render_bias), "world: render scales must be finite");
    for (std::size_t i = 0; i < modalities.size(); ++i) {
        const auto& m = modalities[i];
        require(!m.name.empty() && m.name != kTextModality, "world: invalid modality name '" + m.name + "'");
        require(m.obs_dim >= 1, "world: modality " + m.name + " needs obs_dim >= 1");
        require(std::isfinite(m.noise_sigma) && m.noise_sigma >= 0.0,
                "world: modality " + m.name + " needs finite noise_sigma >= 0");
        for (std::size_t j = 0; j < i; ++j)
            require(modalities[j].name != m.name, "world: duplicate modality " + m.name);
    }
}

const ModalitySpec& WorldSpec::modality(const std::string& name) const {
    for (const auto& m : modalities)
        if (m.name == name) return m;
    throw ValidationError("unknown modality '" + name + "'");
}

std::vector<double> World::clean_observation(const std::string& modality, std::size_t cls) const {
    const auto it = renderings.find(modality);
    if (it == renderings.end()) throw ValidationError("unknown modality '" + modality + "'");
    const Rendering& r = it->second;
    std::vector<double> obs(r.weight.rows());
    const auto z = class_latents.row(cls);
    for (std::size_t i = 0; i < obs.size(); ++i) obs[i] = std::tanh(dot(r.weight.row(i), z) + r.bias(0, i));
    return obs;
}

std::size_t World::decode_class(const TokenSeq& tokens) const {
    const auto it = decoder.find(tokens);
    if (it == decoder.end()) throw ValidationError("token sequence does not belong to any class");
    return it->second;
}

std::size_t World::nearest_other_class(std::size_t cls) const {
    std::size_t best = cls;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < class_latents.rows(); ++j) {
        if (j == cls) continue;
        const double s = dot(class_latents.row(cls), class_latents.row(j));
        if (s > best_sim) {
            best_sim = s;
            best = j;
        }
    }
    return best;
}

World build_world(const WorldSpec& spec) {
    spec.validate();
    const std::size_t rows_needed = spec.latent_classes * spec.token_pages;
    const std::size_t free_positions = spec.text_len - spec.template_len;
    // Pigeonhole: V^free distinct rows must cover every (class, page).
    double capacity = std::pow(static_cast<double>(spec.vocab_size), static_cast<double>(free_positions));
    if (capacity < static_cast<double>(rows_needed))
        throw ValidationError("world: vocab_size^(text_len - template_len) < latent_classes * token_pages; "
                              "cannot build distinct token rows");

    World w;
    w.spec = spec;
    Rng rng(spec.seed);

    w.class_latents = Matrix(spec.latent_classes, spec.latent_dim);
    for (std::size_t c = 0; c < spec.latent_classes; ++c) {
        auto row = w.class_latents.row(c);
        double n = 0.0;
        while (n < 1e-12) {
            for (auto& v : row) v = rng.normal();
            n = norm(row);
        }
        for (auto& v : row) v /= n;
    }

    for (const auto& m : spec.modalities) {
        Rendering r;
        r.weight = Matrix::gaussian(m.obs_dim, spec.latent_dim, spec.render_gain, rng);
        r.bias = Matrix::gaussian(1, m.obs_dim, spec.render_bias, rng);
        w.renderings.emplace(m.name, std::move(r));
    }

    TokenSeq templ(spec.template_len);
    for (auto& t : templ) t = static_cast<int>(rng.uniform_int(spec.vocab_size));

    constexpr int kMaxRetries = 10000;
    w.token_pages.assign(spec.latent_classes, {});
    for (std::size_t c = 0; c < spec.latent_classes; ++c) {
        for (std::size_t p = 0; p < spec.token_pages; ++p) {
            bool placed = false;
            for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
                TokenSeq row = templ;
                row.resize(spec.text_len);
                for (std::size_t i = spec.template_len; i < spec.text_len; ++i) {
                    const bool keep = p > 0 && rng.uniform() < spec.page_share;
                    row[i] = keep ? w.token_pages[c][0][i] : static_cast<int>(rng.uniform_int(spec.vocab_size));
                }
                if (w.decoder.emplace(row, c).second) {
                    w.token_pages[c].push_back(std::move(row));
                    placed = true;
                }
            }
            if (!placed)
                throw ValidationError("world: could not draw distinct token rows within the retry budget");
        }
    }
    return w;
}

namespace {

Sample render_sample(const World& world, std::size_t cls, Rng& rng) {
    const auto& spec = world.spec;
    Sample s;
    s.class_id = cls;
    s.page = rng.uniform_int(spec.token_pages);
    for (const auto& m : spec.modalities) {
        auto obs = world.clean_observation(m.name, cls);
        for (auto& v : obs) v += m.noise_sigma * rng.normal();
        s.observations.emplace(m.name, std::move(obs));
    }
    s.text = world.token_pages[cls][s.page];
    s.tokens = world.token_table(cls);
    return s;
}

}  // namespace

std::vector<Sample> sample_batch(const World& world, std::size_t n, Rng& rng) {
    require(n >= 1, "sample_batch: n must be >= 1");
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(render_sample(world, rng.uniform_int(world.spec.latent_classes), rng));
    return out;
}

std::vector<Sample> sample_classes(const World& world, const std::vector<std::size_t>& classes, Rng& rng) {
    require(!classes.empty(), "sample_classes: empty class list");
    std::vector<Sample> out;
    out.reserve(classes.size());
    for (std::size_t c : classes) {
        require(c < world.spec.latent_classes, "sample_classes: class " + std::to_string(c) + " out of range");
        out.push_back(render_sample(world, c, rng));
    }
    return out;
}

Matrix stack_observations(const std::vector<Sample>& batch, const std::string& modality) {
    require(!batch.empty(), "stack_observations: empty batch");
    const auto it0 = batch.front().observations.find(modality);
    if (it0 == batch.front().observations.end()) throw ValidationError("unknown modality '" + modality + "'");
    Matrix m(batch.size(), it0->second.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& obs = batch[i].observations.at(modality);
        std::copy(obs.begin(), obs.end(), m.row(i).begin());
    }
    return m;
}

std::vector<TokenSeq> text_inputs(const std::vector<Sample>& batch) {
    std::vector<TokenSeq> out;
    out.reserve(batch.size());
    for (const auto& s : batch) out.push_back(s.text);
    return out;
}

std::vector<TokenSeq> targets(const std::vector<Sample>& batch) {
    std::vector<TokenSeq> out;
    out.reserve(batch.size());
    for (const auto& s : batch) out.push_back(s.tokens);
    return out;
}

std::vector<std::size_t> class_ids(const std::vector<Sample>& batch) {
    std::vector<std::size_t> out;
    out.reserve(batch.size());
    for (const auto& s : batch) out.push_back(s.class_id);
    return out;
}

InfoEstimate true_info(const World& world, const std::string& modality, std::size_t n_mc, Rng& rng) {
    require(n_mc >= 1, "true_info: n_mc must be >= 1");
    const std::size_t k = world.spec.latent_classes;
    InfoEstimate est;
    est.h_y = std::log(static_cast<double>(k));
    if (modality == kTextModality) {
        est.mutual_info = est.h_y;
        return est;
    }
    const double sigma = world.spec.modality(modality).noise_sigma;
    if (sigma == 0.0) {
        est.mutual_info = est.h_y;
        return est;
    }
    std::vector<std::vector<double>> means(k);
    for (std::size_t c = 0; c < k; ++c) means[c] = world.clean_observation(modality, c);
    const std::size_t dim = means[0].size();
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    std::vector<double> loglik(k), x(dim);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t t = 0; t < n_mc; ++t) {
        const std::size_t c = rng.uniform_int(k);
        for (std::size_t i = 0; i < dim; ++i) x[i] = means[c][i] + sigma * rng.normal();
        for (std::size_t j = 0; j < k; ++j) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double d = x[i] - means[j][i];
                d2 += d * d;
            }
            loglik[j] = -d2 * inv2s2;
        }
        const double nll = log_sum_exp(loglik) - loglik[c];
        sum += nll;
        sum_sq += nll * nll;
    }
    const double n = static_cast<double>(n_mc);
    est.h_y_given_x = sum / n;
    const double var = std::max(0.0, sum_sq / n - est.h_y_given_x * est.h_y_given_x);
    est.std_error = std::sqrt(var / n);
    est.mutual_info = std::clamp(est.h_y - est.h_y_given_x, 0.0, est.h_y);
    return est;
}

void export_dataset(const World& world, const std::vector<Sample>& batch, std::ostream& out) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        for (const auto& m : world.spec.modalities) {
            nlohmann::ordered_json rec;
            rec["id"] = i;
            rec["cls"] = s.class_id;
            rec["mod"] = m.name;
            rec["obs"] = s.observations.at(m.name);
            rec["tok"] = s.tokens;
            out << rec.dump() << '\n';
        }
        nlohmann::ordered_json rec;
        rec["id"] = i;
        rec["cls"] = s.class_id;
        rec["mod"] = kTextModality;
        rec["obs"] = s.text;
        rec["tok"] = s.tokens;
        out << rec.dump() << '\n';
    }
}

}  // namespace lco
