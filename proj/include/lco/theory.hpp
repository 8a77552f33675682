#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lco/datagen.hpp"
#include "lco/rng.hpp"
#include "lco/toymodel.hpp"

namespace lco {

struct BoundInputs {
    double batch_size_n = 2;  // N, number of InfoNCE candidates
    double i_p = 0.0;         // nats
    double eps_p = 0.0;       // nats
    double kl = 0.0;          // nats
    double n_samples = 1;
    double delta = 0.05;

    void validate() const;
};

/// ln N - I_P + eps_P + sqrt((KL + ln(1/delta)) / (2 n)).
double pac_bayes_bound(const BoundInputs& b);
/// The square-root complexity term alone.
double pac_bayes_penalty(const BoundInputs& b);

/// max(0, H_Y - Lg) with Lg the per-sequence generative loss.
double mi_from_generative(double h_y, double lg);

/// KL(N(mu, sq^2 I) || N(0, sp^2 I)).
double kl_gaussian(std::span<const double> mu, double sigma_q, double sigma_p);
/// KL over the flattened effective deltas (alpha / r) B A of every layer.
double kl_lora_gaussian(const LoraAdapter& adapter, double sigma_q = 0.01, double sigma_p = 0.1);

enum class GenDirection { lower_is_better, higher_is_better };

struct ScalingPoint {
    std::string model_id;
    double gen_score = 0.0;
    GenDirection direction = GenDirection::lower_is_better;
    double rep_score = 0.0;
};

struct GrslFit {
    double pearson = 0.0;
    double spearman = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
    std::size_t n = 0;
};

/// OLS of rep_score on generation quality (gen_score negated when lower is
/// better) plus both correlations.
GrslFit grsl_fit(const std::vector<ScalingPoint>& points);

/// Header `model_id,gen_score,gen_direction,rep_score`; direction is
/// `lower` or `higher`.
std::vector<ScalingPoint> read_scaling_csv(std::istream& in);

struct BoundCheckConfig {
    std::size_t batch = 32;
    bool hard_negatives = true;
    double tau = 0.2;
    std::size_t heldout_batches = 50;
    std::size_t lg_samples = 2048;
    double delta = 0.05;
    double sigma_q = 0.01;
    double sigma_p = 0.1;
    std::size_t n_samples = 1000;
};

struct BoundReport {
    BoundInputs inputs;
    double h_y = 0.0;
    double lg = 0.0;          // per sequence, pre-CL model, text input
    double train_loss = 0.0;
    double empirical = 0.0;   // held-out InfoNCE
    double penalty = 0.0;
    double bound = 0.0;
    bool holds = false;
};

/// Assembles the bound for a trained adapter and compares it with held-out
/// InfoNCE on fresh triplets. `train_loss` is the achieved training InfoNCE.
BoundReport bound_check(const ToyModel& pre_cl, const LoraAdapter& adapter, const World& world, double train_loss,
                        const BoundCheckConfig& cfg, Rng& rng);

}  // namespace lco
