#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lco/datagen.hpp"
#include "lco/numerics.hpp"
#include "lco/rng.hpp"
#include "lco/toymodel.hpp"

namespace lco {

/// Text triplets. `hard_negatives` is either empty or as long as `anchors`.
struct TripletBatch {
    std::vector<TokenSeq> anchors;
    std::vector<TokenSeq> positives;
    std::vector<TokenSeq> hard_negatives;

    std::size_t size() const { return anchors.size(); }
    bool has_negatives() const { return !hard_negatives.empty(); }
    void validate() const;
};

struct InfoNceResult {
    double loss = 0.0;
    Matrix d_anchor;
    Matrix d_positive;
    Matrix d_negative;  // empty without hard negatives
};

/// Single-direction InfoNCE. Candidates for anchor i are every positive and,
/// if given, every hard negative; the target is positive i.
double infonce(const Matrix& anchors, const Matrix& positives, double tau, const Matrix* hard_negatives = nullptr);
InfoNceResult infonce_grad(const Matrix& anchors, const Matrix& positives, double tau,
                           const Matrix* hard_negatives = nullptr);

/// Produces training batches for cl_train.
class TripletSource {
public:
    virtual ~TripletSource() = default;
    virtual TripletBatch next(std::size_t batch, Rng& rng) = 0;
};

/// Fresh triplets from the world. Each batch draws distinct classes; anchor
/// and positive are two different pages of the class, the hard negative a
/// random page of the nearest other class.
class WorldTripletSource : public TripletSource {
public:
    WorldTripletSource(const World& world, bool hard_negatives = true);
    TripletBatch next(std::size_t batch, Rng& rng) override;

private:
    const World& world_;
    bool hard_negatives_;
};

/// A fixed list of triplets. Batches are drawn without replacement from the
/// pool; when classes are known, no class appears twice in a batch.
class PoolTripletSource : public TripletSource {
public:
    explicit PoolTripletSource(TripletBatch pool, std::vector<std::size_t> classes = {});
    TripletBatch next(std::size_t batch, Rng& rng) override;
    const TripletBatch& pool() const { return pool_; }

private:
    TripletBatch pool_;
    std::vector<std::size_t> classes_;
};

struct TripletPool {
    TripletBatch triplets;
    std::vector<std::size_t> classes;  // anchor class per triplet
};

/// n triplets with uniformly drawn classes.
TripletPool make_toy_triplets(const World& world, std::size_t n, Rng& rng, bool hard_negatives = true);

/// Triplets from a jsonl stream with fields `anchor`, `pos` and optional `neg`.
TripletBatch read_triplets(std::istream& in, std::size_t vocab_size);

enum class ClStrategy { lora, full_finetune, linear_projection };
std::string to_string(ClStrategy s);
ClStrategy parse_strategy(const std::string& s);

struct ClConfig {
    ClStrategy strategy = ClStrategy::lora;
    std::size_t lora_rank = 8;
    double lora_alpha = 16.0;
    double tau = 0.2;
    std::size_t steps = 1000;
    double lr = 3e-4;
    std::size_t batch = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClResult {
    ToyModel model;  // base model, or base plus projection layer
    std::optional<LoraAdapter> adapter;
    std::vector<double> trace;  // InfoNCE per step, before the update

    /// Model with the adapter merged in, if any.
    ToyModel merged() const;
};

/// Contrastive refinement on text triplets with Adam.
ClResult cl_train(const ToyModel& model, TripletSource& source, const ClConfig& cfg);

/// Text embeddings of anchors, positives and negatives in one forward pass.
struct TripletEmbeddings {
    Matrix anchors, positives, negatives;
};
TripletEmbeddings embed_triplets(const ToyModel& model, const TripletBatch& batch, const LoraAdapter* adapter = nullptr);

/// Mean InfoNCE over `n_batches` batches drawn from `source`.
double mean_infonce(const ToyModel& model, const LoraAdapter* adapter, TripletSource& source, std::size_t n_batches,
                    std::size_t batch, double tau, Rng& rng);

}  // namespace lco
