#include "lco/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lco/error.hpp"

namespace lco {

const std::vector<ConfigKey>& RunConfig::schema() {
    static const std::vector<ConfigKey> keys = {
        {"world.classes", KeyType::count, "64", "number of latent classes K"},
        {"world.latent_dim", KeyType::count, "8", "latent dimension d_z"},
        {"world.vocab", KeyType::count, "64", "vocabulary size V"},
        {"world.text_len", KeyType::count, "8", "caption length L"},
        {"world.pages", KeyType::count, "4", "token pages (paraphrases) per class"},
        {"world.template_len", KeyType::count, "2", "leading caption positions shared by all classes"},
        {"world.page_share", KeyType::real, "0.5", "probability a paraphrase keeps a canonical token"},
        {"world.render_gain", KeyType::real, "1.5", "std of rendering weights"},
        {"world.render_bias", KeyType::real, "0.5", "std of rendering biases"},
        {"world.modalities", KeyType::text_list, "image:16:0.3,audio:16:0.3",
         "non-text modalities as name:obs_dim:noise_sigma"},
        {"model.enc_hidden", KeyType::count, "64", "hidden width of each modality encoder"},
        {"model.trunk", KeyType::count_list, "64,32", "trunk layer widths; the last is the embedding size"},
        {"pretrain.steps", KeyType::count, "3000", "generative pretraining steps"},
        {"pretrain.lr", KeyType::real, "0.003", "Adam learning rate for pretraining"},
        {"pretrain.batch", KeyType::count, "64", "pretraining batch size"},
        {"pretrain.sources", KeyType::text_list, "all", "source modalities, or all"},
        {"cl.strategy", KeyType::text, "lora", "lora, full_finetune or linear_projection"},
        {"cl.tau", KeyType::real, "0.2", "InfoNCE temperature"},
        {"cl.steps", KeyType::count, "1000", "contrastive steps"},
        {"cl.lr", KeyType::real, "0.0003", "Adam learning rate for contrastive training"},
        {"cl.batch", KeyType::count, "32", "triplets per batch"},
        {"cl.hard_negatives", KeyType::flag, "true", "include hard negatives"},
        {"lora.r", KeyType::count, "8", "LoRA rank"},
        {"lora.alpha", KeyType::real, "16", "LoRA alpha"},
        {"eval.heldout", KeyType::count, "1024", "held-out samples for anisotropy and retrieval"},
        {"eval.align_k", KeyType::count, "10", "neighbours for mutual kNN"},
        {"eval.align_batch", KeyType::count, "512", "paired batch size for mutual kNN"},
        {"eval.ndcg_k", KeyType::count, "10", "cutoff for nDCG"},
        {"eval.probe_shots", KeyType::count, "16", "examples per class for linear probing"},
        {"eval.probe_test", KeyType::count, "8", "test examples per class for linear probing"},
        {"eval.sts_pairs", KeyType::count, "512", "text pairs for the similarity correlation"},
        {"eval.kmeans_restarts", KeyType::count, "10", "k-means restarts"},
        {"eval.nmi_norm", KeyType::text, "sqrt", "NMI normalisation: sqrt or arithmetic"},
        {"replicate.seeds", KeyType::count_list, "0,1,2,3,4", "seed offsets added to --seed"},
        {"grsl.budgets", KeyType::count_list, "250,500,1000,2000,4000", "pretraining step budgets"},
        {"seadoc.modality", KeyType::text, "image", "modality made hard"},
        {"seadoc.noise", KeyType::real, "1.0", "noise sigma of the hard modality"},
        {"seadoc.extra_steps", KeyType::count, "1000", "continued pretraining steps on the hard modality"},
        {"bound.runs", KeyType::count, "40", "seeded contrastive runs"},
        {"bound.pool", KeyType::count, "1000", "training triplets n"},
        {"bound.cl_steps", KeyType::count, "500", "contrastive steps per run"},
        {"bound.heldout_batches", KeyType::count, "50", "held-out batches for the empirical risk"},
        {"bound.delta", KeyType::real, "0.05", "confidence parameter"},
        {"bound.sigma_q", KeyType::real, "0.01", "posterior std over the LoRA delta"},
        {"bound.sigma_p", KeyType::real, "0.1", "prior std over the LoRA delta"},
        {"appx.classes", KeyType::count, "8", "classes of the information-check world"},
        {"appx.latent_dim", KeyType::count, "4", "latent dimension of the information-check world"},
        {"appx.vocab", KeyType::count, "16", "vocabulary of the information-check world"},
        {"appx.text_len", KeyType::count, "3", "caption length of the information-check world"},
        {"appx.obs_dim", KeyType::count, "16", "observation size of the information-check modality"},
        {"appx.noise", KeyType::real, "0.1", "noise sigma of the information-check modality"},
        {"appx.steps", KeyType::count, "3000", "pretraining steps for the information check"},
        {"appx.n_mc", KeyType::count, "100000", "Monte Carlo samples for the true information"},
    };
    return keys;
}

namespace {

const ConfigKey& find_key(const std::string& key) {
    for (const auto& k : RunConfig::schema())
        if (k.name == key) return k;
    throw ValidationError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

bool parse_count(const std::string& s, std::size_t& out) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return false;
    try {
        out = static_cast<std::size_t>(std::stoull(s));
    } catch (const std::exception&) {
        return false;
    }
    return true;
}

void check_value(const ConfigKey& k, const std::string& v) {
    const auto bad = [&](const char* what) {
        throw ValidationError("config key '" + k.name + "': '" + v + "' is not " + what);
    };
    std::size_t c = 0;
    switch (k.type) {
        case KeyType::count:
            if (!parse_count(v, c)) bad("a non-negative integer");
            break;
        case KeyType::real:
            try {
                std::size_t pos = 0;
                const double d = std::stod(v, &pos);
                if (pos != v.size() || !std::isfinite(d)) bad("a finite number");
            } catch (const std::logic_error&) {
                bad("a finite number");
            }
            break;
        case KeyType::flag:
            if (v != "true" && v != "false") bad("true or false");
            break;
        case KeyType::text:
            if (v.empty()) bad("a non-empty string");
            break;
        case KeyType::count_list:
            for (const auto& item : split_list(v))
                if (!parse_count(item, c)) bad("a comma-separated list of non-negative integers");
            if (v.empty()) bad("a non-empty list");
            break;
        case KeyType::text_list:
            for (const auto& item : split_list(v))
                if (item.empty()) bad("a comma-separated list without empty items");
            if (v.empty()) bad("a non-empty list");
            break;
    }
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& k : schema()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    cfg.merge_text(ss.str(), path);
    return cfg;
}

void RunConfig::merge_text(const std::string& text, const std::string& source) {
    std::stringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        try {
            set(key, trim(line.substr(eq + 1)));
        } catch (const ValidationError& e) {
            throw ValidationError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& k = find_key(key);
    check_value(k, value);
    values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    find_key(key);
    return values_.at(key);
}

std::size_t RunConfig::count(const std::string& key) const {
    std::size_t c = 0;
    parse_count(get(key), c);
    return c;
}

double RunConfig::real(const std::string& key) const { return std::stod(get(key)); }

bool RunConfig::flag(const std::string& key) const { return get(key) == "true"; }

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(get(key))) {
        std::size_t c = 0;
        parse_count(item, c);
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> RunConfig::texts(const std::string& key) const { return split_list(get(key)); }

std::string RunConfig::resolved() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

std::string config_reference() {
    std::string out;
    for (const auto& k : RunConfig::schema()) out += k.name + " = " + k.default_value + "\n    " + k.doc + "\n";
    return out;
}

}  // namespace lco
