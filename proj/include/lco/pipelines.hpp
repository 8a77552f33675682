#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lco/config.hpp"
#include "lco/contrastive.hpp"
#include "lco/datagen.hpp"
#include "lco/evalsuite.hpp"
#include "lco/geometry.hpp"
#include "lco/io.hpp"
#include "lco/theory.hpp"
#include "lco/toymodel.hpp"

namespace lco {

/// Stream ids mixed into a run seed with derive_seed.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t pretrain = 2;
inline constexpr std::uint64_t cl = 3;
inline constexpr std::uint64_t heldout = 4;
inline constexpr std::uint64_t eval = 5;
inline constexpr std::uint64_t extra = 6;
inline constexpr std::uint64_t bound = 7;
}  // namespace streams

WorldSpec world_spec_from(const RunConfig& cfg, std::uint64_t seed);
ModelSpec model_spec_from(const RunConfig& cfg, const WorldSpec& world, std::uint64_t seed);
PretrainConfig pretrain_config_from(const RunConfig& cfg, const WorldSpec& world);
ClConfig cl_config_from(const RunConfig& cfg, std::uint64_t seed);
BoundCheckConfig bound_config_from(const RunConfig& cfg);
/// --seed plus each entry of replicate.seeds.
std::vector<std::uint64_t> replicate_seeds(const RunConfig& cfg, std::uint64_t base);

/// init_model followed by pretrain with the configured settings.
PretrainResult pretrain_from_config(const RunConfig& cfg, const World& world, std::uint64_t seed);

/// Observations of `modality` as queries against the canonical caption of
/// every class; the gold class is the only relevant document.
struct RetrievalScores {
    double recall_at_1 = 0.0;
    double ndcg = 0.0;
};
RetrievalScores caption_retrieval(const ToyModel& model, const World& world, const std::vector<Sample>& queries,
                                  const std::string& modality, std::size_t ndcg_k);

/// Retrieval, anisotropy, probing, zero-shot, clustering and similarity
/// correlation on fresh samples. Dataset ids name the modality.
std::vector<MetricReport> evaluate_suite(const ToyModel& model, const World& world, const RunConfig& cfg,
                                         std::uint64_t seed);

/// Pretrain, text-only LoRA contrastive training and merge for one seed,
/// measured on a held-out sample.
struct AlignmentSeedResult {
    std::uint64_t seed = 0;
    std::vector<std::string> modalities;  // text first
    std::map<std::string, double> anisotropy_pre, anisotropy_post;
    std::map<std::string, AlignmentCurve> curve_pre, curve_post;  // non-text modalities
    std::vector<double> cl_trace;
};
AlignmentSeedResult alignment_study(const RunConfig& cfg, std::uint64_t seed);

struct GrslRow {
    std::size_t budget = 0;
    double gen_loss = 0.0;       // per-token generative loss on held-out data
    double recall_pre = 0.0;     // caption retrieval recall@1 before CL
    double recall_post = 0.0;    // after CL
};
struct GrslResult {
    std::uint64_t seed = 0;
    std::vector<GrslRow> rows;
    GrslFit fit;
};
GrslResult grsl_study(const RunConfig& cfg, std::uint64_t seed);

struct SeadocSeedResult {
    std::uint64_t seed = 0;
    std::string modality;
    RetrievalScores baseline, continued;
};
SeadocSeedResult seadoc_study(const RunConfig& cfg, std::uint64_t seed);

struct BoundStudy {
    std::uint64_t seed = 0;
    std::vector<BoundReport> runs;
    double holds_fraction = 0.0;
};
BoundStudy bound_study(const RunConfig& cfg, std::uint64_t seed);

struct AppxResult {
    std::uint64_t seed = 0;
    std::string modality;
    double h_y = 0.0;
    double lg = 0.0;  // per sequence
    double i_estimate = 0.0;
    InfoEstimate truth;
};
AppxResult appx_study(const RunConfig& cfg, std::uint64_t seed);

struct StrategyMetrics {
    std::string arm;
    std::vector<MetricReport> metrics;
};
/// One pretrained model refined by each contrastive strategy.
std::vector<StrategyMetrics> table4_study(const RunConfig& cfg, std::uint64_t seed);
/// Two LoRA runs with different seeds, each merged, and their soup.
std::vector<StrategyMetrics> table3_study(const RunConfig& cfg, std::uint64_t seed);

/// Names accepted by replicate().
const std::vector<std::string>& replicate_names();

/// Runs a named pipeline, writes its CSV tables, summary.json and
/// provenance.json into `out`, and returns the summary. `inputs` maps roles
/// to files whose hashes go into the provenance record.
nlohmann::ordered_json replicate(const std::string& name, const RunConfig& cfg, std::uint64_t base_seed,
                                 const RunOutput& out, const std::map<std::string, std::string>& inputs = {});

}  // namespace lco
