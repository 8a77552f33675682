#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lco/numerics.hpp"
#include "lco/rng.hpp"

namespace lco {

using TokenSeq = std::vector<int>;

/// Name reserved for the token-sequence modality.
inline constexpr const char* kTextModality = "text";

struct ModalitySpec {
    std::string name;
    std::size_t obs_dim = 0;
    double noise_sigma = 0.0;
};

/// Parameters of the synthetic multimodal world.
///
/// Every class owns `token_pages` distinct token rows. Page 0 is the canonical
/// caption that generative training targets; later pages are paraphrases that
/// keep each canonical token with probability `page_share`. The first
/// `template_len` positions hold tokens shared by every class and page.
struct WorldSpec {
    std::size_t latent_classes = 8;
    std::size_t latent_dim = 4;
    std::vector<ModalitySpec> modalities;
    std::size_t vocab_size = 16;
    std::size_t text_len = 3;
    std::size_t token_pages = 1;
    std::size_t template_len = 0;
    double page_share = 0.5;
    double render_gain = 1.5;
    double render_bias = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    const ModalitySpec& modality(const std::string& name) const;
};

struct Rendering {
    Matrix weight;  // obs_dim x latent_dim
    Matrix bias;    // 1 x obs_dim
};

/// Frozen world state. Immutable after build_world.
struct World {
    WorldSpec spec;
    Matrix class_latents;                        // K x d_z, unit-norm rows
    std::map<std::string, Rendering> renderings;  // per non-text modality
    std::vector<std::vector<TokenSeq>> token_pages;  // [class][page]

    const TokenSeq& token_table(std::size_t cls) const { return token_pages.at(cls).at(0); }
    /// Noise-free rendering tanh(W z_c + b) of class `cls`.
    std::vector<double> clean_observation(const std::string& modality, std::size_t cls) const;
    /// Exact inverse of the token tables; throws if `tokens` is not a known row.
    std::size_t decode_class(const TokenSeq& tokens) const;
    /// Other class whose latent is closest (largest cosine, lowest id on ties).
    std::size_t nearest_other_class(std::size_t cls) const;

    std::map<TokenSeq, std::size_t> decoder;
};

struct Sample {
    std::size_t class_id = 0;
    std::size_t page = 0;
    std::map<std::string, std::vector<double>> observations;
    TokenSeq text;    // paraphrase page used as text-modality input
    TokenSeq tokens;  // generative target, token_table[class_id]
};

World build_world(const WorldSpec& spec);

std::vector<Sample> sample_batch(const World& world, std::size_t n, Rng& rng);
/// One sample per entry of `classes`, in order.
std::vector<Sample> sample_classes(const World& world, const std::vector<std::size_t>& classes, Rng& rng);

/// Column-stacked observations of one modality (n x obs_dim).
Matrix stack_observations(const std::vector<Sample>& batch, const std::string& modality);
std::vector<TokenSeq> text_inputs(const std::vector<Sample>& batch);
std::vector<TokenSeq> targets(const std::vector<Sample>& batch);
std::vector<std::size_t> class_ids(const std::vector<Sample>& batch);

struct InfoEstimate {
    double h_y = 0.0;
    double h_y_given_x = 0.0;
    double mutual_info = 0.0;
    double std_error = 0.0;  // Monte Carlo standard error of h_y_given_x
};

/// Ground-truth information between a modality's observation and the caption,
/// using the true Gaussian rendering likelihood.
InfoEstimate true_info(const World& world, const std::string& modality, std::size_t n_mc, Rng& rng);

/// One JSON record per (sample, modality) with fields id, cls, mod, obs, tok.
void export_dataset(const World& world, const std::vector<Sample>& batch, std::ostream& out);

}  // namespace lco
