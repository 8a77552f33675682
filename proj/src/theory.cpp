#include "lco/theory.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>

#include "lco/contrastive.hpp"
#include "lco/error.hpp"
#include "lco/evalsuite.hpp"

namespace lco {

void BoundInputs::validate() const {
    require(std::isfinite(batch_size_n) && batch_size_n >= 1.0, "bound: N must be >= 1");
    require(std::isfinite(i_p), "bound: I_P must be finite");
    require(std::isfinite(eps_p) && eps_p >= 0.0, "bound: eps_P must be finite and >= 0");
    require(std::isfinite(kl) && kl >= 0.0, "bound: KL must be finite and >= 0");
    require(std::isfinite(n_samples) && n_samples >= 1.0, "bound: n must be >= 1");
    require(std::isfinite(delta) && delta > 0.0 && delta < 1.0, "bound: delta must lie in (0, 1)");
}

double pac_bayes_penalty(const BoundInputs& b) {
    b.validate();
    return std::sqrt((b.kl + std::log(1.0 / b.delta)) / (2.0 * b.n_samples));
}

double pac_bayes_bound(const BoundInputs& b) {
    return std::log(b.batch_size_n) - b.i_p + b.eps_p + pac_bayes_penalty(b);
}

double mi_from_generative(double h_y, double lg) {
    require(std::isfinite(h_y) && h_y >= 0.0, "mi_from_generative: H_Y must be >= 0");
    require(std::isfinite(lg) && lg >= 0.0, "mi_from_generative: Lg must be >= 0");
    return std::max(0.0, h_y - lg);
}

double kl_gaussian(std::span<const double> mu, double sigma_q, double sigma_p) {
    require(std::isfinite(sigma_q) && sigma_q > 0.0 && std::isfinite(sigma_p) && sigma_p > 0.0,
            "kl: sigmas must be positive");
    const double sq2 = sigma_q * sigma_q, sp2 = sigma_p * sigma_p;
    const double log_ratio = std::log(sigma_p / sigma_q);
    double kl = 0.0;
    for (double m : mu) kl += (sq2 + m * m) / (2.0 * sp2) - 0.5 + log_ratio;
    return std::max(0.0, kl);
}

double kl_lora_gaussian(const LoraAdapter& adapter, double sigma_q, double sigma_p) {
    double kl = 0.0;
    for (std::size_t l = 0; l < adapter.num_layers(); ++l) kl += kl_gaussian(adapter.delta(l).values(), sigma_q, sigma_p);
    return kl;
}

GrslFit grsl_fit(const std::vector<ScalingPoint>& points) {
    require(points.size() >= 3, "grsl_fit: need at least 3 points");
    std::vector<double> x, y;
    for (const auto& p : points) {
        require(std::isfinite(p.gen_score) && std::isfinite(p.rep_score), "grsl_fit: non-finite score for " + p.model_id);
        x.push_back(p.direction == GenDirection::lower_is_better ? -p.gen_score : p.gen_score);
        y.push_back(p.rep_score);
    }
    GrslFit fit;
    fit.n = points.size();
    fit.pearson = pearson(x, y);
    fit.spearman = spearman(x, y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}

std::vector<ScalingPoint> read_scaling_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("scaling csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line == "model_id,gen_score,gen_direction,rep_score",
            "scaling csv: header must be model_id,gen_score,gen_direction,rep_score");
    std::vector<ScalingPoint> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        const std::string where = "scaling csv line " + std::to_string(lineno);
        require(f.size() == 4, where + ": expected 4 fields");
        ScalingPoint p;
        p.model_id = f[0];
        auto num = [&](const std::string& s, const char* field) {
            try {
                std::size_t pos = 0;
                const double v = std::stod(s, &pos);
                if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
                return v;
            } catch (const std::exception&) {
                throw ValidationError(where + ": bad " + field + " '" + s + "'");
            }
        };
        p.gen_score = num(f[1], "gen_score");
        if (f[2] == "lower")
            p.direction = GenDirection::lower_is_better;
        else if (f[2] == "higher")
            p.direction = GenDirection::higher_is_better;
        else
            throw ValidationError(where + ": gen_direction must be lower or higher");
        p.rep_score = num(f[3], "rep_score");
        out.push_back(p);
    }
    return out;
}

BoundReport bound_check(const ToyModel& pre_cl, const LoraAdapter& adapter, const World& world, double train_loss,
                        const BoundCheckConfig& cfg, Rng& rng) {
    require(std::isfinite(train_loss) && train_loss >= 0.0, "bound_check: train loss must be finite and >= 0");
    require(cfg.lg_samples >= 1 && cfg.heldout_batches >= 1, "bound_check: sample counts must be >= 1");
    BoundReport r;
    r.h_y = std::log(static_cast<double>(world.spec.latent_classes));
    const auto samples = sample_batch(world, cfg.lg_samples, rng);
    r.lg = static_cast<double>(world.spec.text_len) *
           generative_loss(pre_cl, InputBatch::from_samples(samples, kTextModality), targets(samples));
    r.train_loss = train_loss;

    BoundInputs& in = r.inputs;
    in.batch_size_n = static_cast<double>(cfg.batch * (cfg.hard_negatives ? 2 : 1));
    in.i_p = mi_from_generative(r.h_y, r.lg);
    in.eps_p = std::max(0.0, train_loss - (std::log(in.batch_size_n) - in.i_p));
    in.kl = kl_lora_gaussian(adapter, cfg.sigma_q, cfg.sigma_p);
    in.n_samples = static_cast<double>(cfg.n_samples);
    in.delta = cfg.delta;
    r.penalty = pac_bayes_penalty(in);
    r.bound = pac_bayes_bound(in);

    WorldTripletSource heldout(world, cfg.hard_negatives);
    r.empirical = mean_infonce(pre_cl, &adapter, heldout, cfg.heldout_batches, cfg.batch, cfg.tau, rng);
    r.holds = r.empirical <= r.bound;
    return r;
}

}  // namespace lco
