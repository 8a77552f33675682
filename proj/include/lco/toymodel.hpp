#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lco/datagen.hpp"
#include "lco/numerics.hpp"
#include "lco/params.hpp"
#include "lco/rng.hpp"

namespace lco {

/// Architecture of the toy multimodal network.
///
/// Non-text modalities pass through a one-hidden-layer tanh encoder that
/// projects into the trunk input space (width `embed_dim`). Text is the mean
/// of its token embeddings. The shared trunk applies `trunk_dims.size()`
/// layers: tanh on every hidden layer, affine on the last, whose output is
/// the embedding. The generative head maps the embedding to L*V logits and
/// has no bias.
struct ModelSpec {
    std::vector<std::pair<std::string, std::size_t>> modalities;  // non-text (name, obs_dim)
    std::size_t enc_hidden = 64;
    std::vector<std::size_t> trunk_dims{64, 32};
    std::size_t embed_dim = 32;
    std::size_t vocab_size = 16;
    std::size_t text_len = 3;
    std::uint64_t init_seed = 0;

    void validate() const;
    bool has_modality(const std::string& name) const;
    std::size_t obs_dim(const std::string& name) const;
    std::size_t num_layers() const { return trunk_dims.size(); }
    std::size_t layer_in(std::size_t l) const { return l == 0 ? embed_dim : trunk_dims[l - 1]; }

    /// Sorted `key=value` lines, used as the checkpoint spec block.
    std::string canonical() const;
    static ModelSpec parse(const std::map<std::string, std::string>& kv);

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// ModelSpec matching a world's modalities, vocabulary and text length.
ModelSpec model_spec_for(const WorldSpec& world, std::size_t enc_hidden, std::vector<std::size_t> trunk_dims,
                         std::uint64_t init_seed);

struct ToyModel {
    ModelSpec spec;
    ParamStore params;

    bool has_projection() const { return params.contains("proj.w"); }
    /// Tensor names of the frozen modality encoders and the token table.
    std::vector<std::string> input_param_names() const;
    std::vector<std::string> trunk_param_names() const;
};

/// Xavier-uniform encoders and trunk, N(0,1) token table, zero head.
ToyModel init_model(const ModelSpec& spec);

/// Appends an identity-initialised d_e x d_e output layer.
ToyModel with_projection(ToyModel model);

/// Low-rank delta on every trunk layer: W + (alpha / r) B A.
struct LoraAdapter {
    std::size_t rank = 0;
    double alpha = 0.0;
    ParamStore params;  // lora.<l>.a (r x in), lora.<l>.b (out x r)

    double scale() const { return alpha / static_cast<double>(rank); }
    std::size_t num_layers() const { return params.size() / 2; }
    const Matrix& a(std::size_t l) const;
    const Matrix& b(std::size_t l) const;
    /// Materialised (alpha / r) B A for layer l.
    Matrix delta(std::size_t l) const;
};

/// B zero, A ~ N(0, 1/r): attaching it is a no-op.
LoraAdapter init_lora(const ModelSpec& spec, std::size_t rank, double alpha, Rng& rng);

/// A batch of inputs for one modality.
struct InputBatch {
    std::string modality;
    Matrix obs;                    // non-text: n x obs_dim
    std::vector<TokenSeq> tokens;  // text

    std::size_t size() const { return modality == kTextModality ? tokens.size() : obs.rows(); }
    static InputBatch observations(std::string modality, Matrix obs);
    static InputBatch text(std::vector<TokenSeq> tokens);
    /// Inputs of `modality` taken from sampled world records.
    static InputBatch from_samples(const std::vector<Sample>& batch, const std::string& modality);
};

/// Intermediate values kept for backpropagation.
struct ForwardTape {
    InputBatch input;
    Matrix enc_hidden;              // tanh hidden of the modality encoder
    std::vector<Matrix> acts;       // acts[0] trunk input, acts[l+1] output of layer l
    std::vector<Matrix> lora_mid;   // a_l A_l^T per layer (empty without adapter)
    Matrix embedding;               // after the optional projection
};

ForwardTape forward(const ToyModel& model, const InputBatch& input, const LoraAdapter* adapter = nullptr);

/// Where backward() deposits gradients. Flags select which model tensors are
/// differentiated; unselected parts are skipped entirely.
struct GradSinks {
    ParamStore* model = nullptr;
    ParamStore* adapter = nullptr;
    bool projection = false;
    bool trunk = false;
    bool inputs = false;
};

/// Accumulates gradients of a scalar loss given d loss / d embedding.
void backward(const ToyModel& model, const LoraAdapter* adapter, const ForwardTape& tape,
              const Matrix& d_embedding, const GradSinks& sinks);

struct Encoding {
    Matrix embeddings;           // n x d_e
    std::vector<Matrix> layers;  // trunk input followed by every trunk layer output
};

Encoding encode(const ToyModel& model, const InputBatch& input, const LoraAdapter* adapter = nullptr,
                bool capture_layers = false);
/// Single-input convenience wrapper.
std::vector<double> encode_one(const ToyModel& model, const std::string& modality, std::span<const double> obs,
                               const LoraAdapter* adapter = nullptr);
std::vector<double> encode_text(const ToyModel& model, const TokenSeq& tokens, const LoraAdapter* adapter = nullptr);

struct LossAndGrad {
    double loss = 0.0;
    Matrix d_logits;
};

/// Mean over samples and positions of -log softmax(logits)[gold], with
/// logits laid out as n x (L*V), position-major.
LossAndGrad position_cross_entropy(const Matrix& logits, const std::vector<TokenSeq>& targets,
                                   std::size_t vocab_size);

/// Mean generative cross-entropy in nats per token.
double generative_loss(const ToyModel& model, const InputBatch& input, const std::vector<TokenSeq>& targets,
                       const LoraAdapter* adapter = nullptr);

/// Same loss; accumulates `scale` times its gradient into `grads` for the
/// head, trunk and the source modality's input path.
double generative_loss_grad(const ToyModel& model, const InputBatch& input, const std::vector<TokenSeq>& targets,
                            ParamStore& grads, double scale = 1.0);

struct PretrainConfig {
    std::size_t steps = 0;
    double lr = 3e-3;
    std::size_t batch = 64;
    std::vector<std::string> source_modalities;
    /// Step counts at which a copy of the model is kept (0 < s <= steps).
    std::vector<std::size_t> snapshot_steps;
};

struct PretrainResult {
    ToyModel model;
    std::vector<double> trace;  // mean generative loss per step, before the update
    std::vector<ToyModel> snapshots;  // in increasing step order
};

/// Adam on the generative loss averaged over the source modalities.
PretrainResult pretrain(const ToyModel& model, const World& world, const PretrainConfig& cfg, Rng& rng);

ToyModel merge_lora(const ToyModel& model, const LoraAdapter& adapter);

/// Model parameters plus provenance. Round-trips bit-exactly through
/// save_checkpoint / load_checkpoint.
struct Checkpoint {
    ModelSpec spec;
    ParamStore tensors;
    std::map<std::string, std::string> meta;  // stage, seed, steps, parents, ...
};

Checkpoint to_checkpoint(const ToyModel& model, std::map<std::string, std::string> meta = {});
ToyModel model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint adapter_checkpoint(const ModelSpec& spec, const LoraAdapter& adapter,
                              std::map<std::string, std::string> meta = {});
LoraAdapter adapter_from_checkpoint(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Identifier of a checkpoint: meta "id" if set, otherwise the content hash.
std::string checkpoint_id(const Checkpoint& ckpt);

/// Uniform parameter average. Each element is summed in sorted order, so the
/// result does not depend on argument order.
Checkpoint soup(const std::vector<Checkpoint>& checkpoints);

}  // namespace lco
