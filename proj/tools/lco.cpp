// Command-line entry point. Exit codes: 0 success, 1 validation error, 2 I/O error.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lco/binio.hpp"
#include "lco/error.hpp"
#include "lco/hash.hpp"
#include "lco/pipelines.hpp"

using namespace lco;
using json = nlohmann::ordered_json;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string config;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "Base seed")->capture_default_str();
    cmd->add_option("--config", c.config, "RunConfig file (key = value lines)");
    cmd->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
    cmd->add_option("--set", c.overrides, "Override a config key: key=value (repeatable)");
}

RunConfig load_config(const Common& c, std::map<std::string, std::string>& inputs) {
    RunConfig cfg = c.config.empty() ? RunConfig() : RunConfig::from_file(c.config);
    if (!c.config.empty()) inputs["config"] = c.config;
    for (const auto& o : c.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + o + "'");
        cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    return cfg;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return in;
}

std::string fmt(double v) { return format_double(v); }

void finish(const RunOutput& out, const std::string& command, const RunConfig& cfg, std::vector<std::uint64_t> seeds,
            const std::map<std::string, std::string>& inputs, const json& summary) {
    out.write_json("summary.json", summary);
    out.write_json("provenance.json", provenance(command, cfg, seeds, inputs));
}

std::uint64_t world_seed_of(const Checkpoint& ckpt, std::uint64_t fallback) {
    const auto it = ckpt.meta.find("world_seed");
    if (it == ckpt.meta.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw FormatError("checkpoint has a malformed world_seed '" + it->second + "'");
    }
}

CsvTable metric_table(const std::vector<MetricReport>& reports) {
    CsvTable t({"metric", "dataset", "k", "n", "seed", "value"});
    for (const auto& r : reports)
        t.add({r.metric, r.dataset, std::to_string(r.k), std::to_string(r.n), std::to_string(r.seed), fmt(r.value)});
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toy-scale latent cross-modal alignment toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every command");
    app.footer("Config keys (use --config FILE or --set key=value):\n" + config_reference());

    Common common;

    // gen-world
    auto* gen = app.add_subcommand("gen-world", "Build a world, export a dataset sample and its true information.\n"
                                                "CSV true_info.csv: modality,h_y,h_y_given_x,mutual_info,std_error");
    add_common(gen, common);
    std::size_t n_mc = 10000;
    gen->add_option("--n-mc", n_mc, "Monte Carlo samples for true_info")->capture_default_str();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Generative pretraining. Writes model.lcoc.\n"
                                               "CSV pretrain_trace.csv: step,loss");
    add_common(pre, common);

    // cl-train
    auto* cl = app.add_subcommand("cl-train", "Text-only contrastive refinement of a checkpoint.\n"
                                              "Writes adapter.lcoc (lora) and merged.lcoc. CSV cl_trace.csv: step,loss");
    add_common(cl, common);
    std::string model_path, triplets_path;
    cl->add_option("--model", model_path, "Pretrained model checkpoint")->required();
    cl->add_option("--triplets", triplets_path, "jsonl triplets (anchor, pos, neg); default: drawn from the world");

    // soup
    auto* sp = app.add_subcommand("soup", "Uniform weight average of checkpoints. Writes soup.lcoc.");
    add_common(sp, common);
    std::vector<std::string> soup_inputs;
    sp->add_option("--inputs", soup_inputs, "Checkpoints to average")->required()->expected(2, 1 << 20);

    // analyze
    auto* an = app.add_subcommand("analyze", "Anisotropy and mutual kNN on dumps or a model.\n"
                                             "CSV analysis.csv: metric,dataset,k,n,value");
    add_common(an, common);
    std::string metric = "anisotropy";
    std::vector<std::string> emb_paths;
    std::string an_model;
    std::size_t an_k = 0;
    an->add_option("--metric", metric, "anisotropy | mutual_knn | layerwise")
        ->check(CLI::IsMember({"anisotropy", "mutual_knn", "layerwise"}))
        ->capture_default_str();
    an->add_option("--emb", emb_paths, "Embedding dump(s); mutual_knn takes two");
    an->add_option("--model", an_model, "Model checkpoint; encodes held-out samples of every modality");
    an->add_option("--k", an_k, "Neighbours (default eval.align_k)");

    // eval
    auto* ev = app.add_subcommand("eval", "Metric suite on a model, or retrieval on dumps.\n"
                                          "CSV metrics.csv: metric,dataset,k,n,seed,value");
    add_common(ev, common);
    std::string ev_model, ev_adapter, ev_queries, ev_corpus, ev_qrels;
    std::size_t ev_k = 10;
    ev->add_option("--model", ev_model, "Model checkpoint");
    ev->add_option("--adapter", ev_adapter, "LoRA adapter checkpoint applied to --model");
    ev->add_option("--queries", ev_queries, "Query embedding dump");
    ev->add_option("--corpus", ev_corpus, "Corpus embedding dump");
    ev->add_option("--qrels", ev_qrels, "query_id<TAB>doc_id file; ids are row indices");
    ev->add_option("--k", ev_k, "nDCG / recall cutoff")->capture_default_str();

    // grsl
    auto* gr = app.add_subcommand("grsl", "Fit generation-vs-representation points.\n"
                                          "CSV grsl.csv: n,pearson,spearman,slope,intercept");
    add_common(gr, common);
    std::string points_path;
    gr->add_option("--points", points_path, "CSV with model_id,gen_score,gen_direction,rep_score")->required();

    // bound
    auto* bd = app.add_subcommand("bound", "PAC-Bayes bound from explicit inputs or from checkpoints.\n"
                                           "CSV bound.csv: n_candidates,i_p,eps_p,kl,n_samples,delta,penalty,bound"
                                           "[,heldout_loss,holds]");
    add_common(bd, common);
    BoundInputs bi;
    std::string bd_model, bd_adapter;
    double train_loss = -1.0;
    bd->add_option("--N", bi.batch_size_n, "Number of InfoNCE candidates");
    bd->add_option("--I", bi.i_p, "I_P in nats");
    bd->add_option("--eps", bi.eps_p, "eps_P in nats");
    bd->add_option("--kl", bi.kl, "KL(Q||P) in nats");
    bd->add_option("--n", bi.n_samples, "Training sample count");
    bd->add_option("--delta", bi.delta, "Confidence parameter");
    bd->add_option("--model", bd_model, "Pre-CL model checkpoint");
    bd->add_option("--adapter", bd_adapter, "Trained LoRA adapter checkpoint");
    bd->add_option("--train-loss", train_loss, "Achieved training InfoNCE");

    // import-emb
    auto* im = app.add_subcommand("import-emb", "Validate an external embedding dump and copy it into the run.");
    add_common(im, common);
    std::string im_input;
    im->add_option("--input", im_input, "Embedding dump")->required();

    // replicate
    auto* rep = app.add_subcommand("replicate", "Run a named experiment pipeline.\n"
                                                "fig1: anisotropy.csv seed,modality,pre_cl,post_cl,relative_change\n"
                                                "fig2: alignment.csv seed,modality,layer,pre_cl,post_cl\n"
                                                "table3/table4: <name>.csv seed,arm,metric,dataset,k,n,value\n"
                                                "fig5|grsl: grsl.csv, scaling.csv\n"
                                                "seadoc-protocol: seadoc.csv\n"
                                                "bound: bound.csv\n"
                                                "appx-e: appx.csv");
    add_common(rep, common);
    std::string rep_name;
    rep->add_option("name", rep_name, "Pipeline name")->required()->check(CLI::IsMember(replicate_names()));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        std::map<std::string, std::string> inputs;
        const RunConfig cfg = load_config(common, inputs);
        const RunOutput out(common.out_dir);
        const std::uint64_t seed = common.seed;

        if (gen->parsed()) {
            const World world = build_world(world_spec_from(cfg, seed));
            Rng rng(derive_seed(seed, streams::heldout));
            const auto samples = sample_batch(world, cfg.count("eval.heldout"), rng);
            std::ostringstream ds;
            export_dataset(world, samples, ds);
            out.write_text("dataset.jsonl", ds.str());
            CsvTable t({"modality", "h_y", "h_y_given_x", "mutual_info", "std_error"});
            json info = json::object();
            for (const auto& m : world.spec.modalities) {
                Rng mc(derive_seed(seed, streams::eval));
                const auto e = true_info(world, m.name, n_mc, mc);
                t.add({m.name, fmt(e.h_y), fmt(e.h_y_given_x), fmt(e.mutual_info), fmt(e.std_error)});
                info[m.name] = e.mutual_info;
            }
            out.write_csv("true_info.csv", t);
            finish(out, "gen-world", cfg, {seed}, inputs,
                   {{"classes", world.spec.latent_classes}, {"samples", samples.size()}, {"mutual_info", info}});
        } else if (pre->parsed()) {
            const World world = build_world(world_spec_from(cfg, seed));
            const auto res = pretrain_from_config(cfg, world, seed);
            CsvTable t({"step", "loss"});
            for (std::size_t i = 0; i < res.trace.size(); ++i) t.add({std::to_string(i), fmt(res.trace[i])});
            out.write_csv("pretrain_trace.csv", t);
            auto ckpt = to_checkpoint(res.model, {{"stage", "pretrain"},
                                                  {"seed", std::to_string(seed)},
                                                  {"world_seed", std::to_string(seed)},
                                                  {"steps", std::to_string(res.trace.size())}});
            save_checkpoint(ckpt, out.path("model.lcoc"));
            finish(out, "pretrain", cfg, {seed}, inputs,
                   {{"steps", res.trace.size()},
                    {"first_loss", res.trace.empty() ? 0.0 : res.trace.front()},
                    {"final_loss", res.trace.empty() ? 0.0 : res.trace.back()},
                    {"checkpoint", checkpoint_id(ckpt)}});
        } else if (cl->parsed()) {
            inputs["model"] = model_path;
            const Checkpoint base_ckpt = load_checkpoint(model_path);
            const ToyModel base = model_from_checkpoint(base_ckpt);
            const std::uint64_t wseed = world_seed_of(base_ckpt, seed);
            const World world = build_world(world_spec_from(cfg, wseed));
            const ClConfig cc = cl_config_from(cfg, derive_seed(seed, streams::cl));
            ClResult res = [&] {
                if (!triplets_path.empty()) {
                    inputs["triplets"] = triplets_path;
                    auto in = open_in(triplets_path);
                    PoolTripletSource src(read_triplets(in, base.spec.vocab_size));
                    return cl_train(base, src, cc);
                }
                WorldTripletSource src(world, cfg.flag("cl.hard_negatives"));
                return cl_train(base, src, cc);
            }();
            CsvTable t({"step", "loss"});
            for (std::size_t i = 0; i < res.trace.size(); ++i) t.add({std::to_string(i), fmt(res.trace[i])});
            out.write_csv("cl_trace.csv", t);
            std::map<std::string, std::string> meta{{"seed", std::to_string(seed)},
                                                    {"world_seed", std::to_string(wseed)},
                                                    {"steps", std::to_string(res.trace.size())},
                                                    {"parents", checkpoint_id(base_ckpt)},
                                                    {"strategy", to_string(cc.strategy)}};
            if (res.adapter) {
                auto m = meta;
                m["stage"] = "cl-adapter";
                save_checkpoint(adapter_checkpoint(base.spec, *res.adapter, m), out.path("adapter.lcoc"));
            }
            meta["stage"] = "cl-merged";
            const auto merged = to_checkpoint(res.merged(), meta);
            save_checkpoint(merged, out.path("merged.lcoc"));
            finish(out, "cl-train", cfg, {seed}, inputs,
                   {{"strategy", to_string(cc.strategy)},
                    {"steps", res.trace.size()},
                    {"first_loss", res.trace.empty() ? 0.0 : res.trace.front()},
                    {"final_loss", res.trace.empty() ? 0.0 : res.trace.back()},
                    {"merged_checkpoint", checkpoint_id(merged)}});
        } else if (sp->parsed()) {
            std::vector<Checkpoint> cks;
            for (std::size_t i = 0; i < soup_inputs.size(); ++i) {
                inputs["input" + std::to_string(i)] = soup_inputs[i];
                cks.push_back(load_checkpoint(soup_inputs[i]));
            }
            const auto s = soup(cks);
            save_checkpoint(s, out.path("soup.lcoc"));
            finish(out, "soup", cfg, {seed}, inputs, {{"parents", s.meta.at("parents")}, {"checkpoint", checkpoint_id(s)}});
        } else if (an->parsed()) {
            const std::size_t k = an_k ? an_k : cfg.count("eval.align_k");
            CsvTable t({"metric", "dataset", "k", "n", "value"});
            std::vector<EmbeddingSet> sets;
            json summary = json::object();
            if (!an_model.empty()) {
                inputs["model"] = an_model;
                const auto ckpt = load_checkpoint(an_model);
                const ToyModel model = model_from_checkpoint(ckpt);
                const World world = build_world(world_spec_from(cfg, world_seed_of(ckpt, seed)));
                Rng rng(derive_seed(seed, streams::heldout));
                const std::size_t n = metric == "anisotropy" ? cfg.count("eval.heldout") : cfg.count("eval.align_batch");
                const auto held = sample_batch(world, n, rng);
                std::vector<std::string> mods{kTextModality};
                for (const auto& m : world.spec.modalities) mods.push_back(m.name);
                if (metric == "layerwise") {
                    for (std::size_t i = 1; i < mods.size(); ++i) {
                        const auto c = layerwise_alignment(model, InputBatch::from_samples(held, kTextModality),
                                                           InputBatch::from_samples(held, mods[i]), k);
                        for (std::size_t l = 0; l < c.layers.size(); ++l)
                            t.add({"mutual_knn_layer" + std::to_string(c.layers[l]), "text~" + mods[i],
                                   std::to_string(k), std::to_string(n), fmt(c.scores[l])});
                    }
                } else {
                    for (const auto& m : mods) {
                        sets.push_back(
                            EmbeddingSet::from_matrix(m, encode(model, InputBatch::from_samples(held, m)).embeddings));
                        write_emb(out.path(m + ".emb"), sets.back());
                    }
                }
            } else {
                for (std::size_t i = 0; i < emb_paths.size(); ++i) {
                    inputs["emb" + std::to_string(i)] = emb_paths[i];
                    sets.push_back(read_emb(emb_paths[i]));
                }
                require(!sets.empty(), "analyze needs --emb or --model");
                require(metric != "layerwise", "layerwise analysis needs --model");
            }
            if (metric == "anisotropy") {
                for (const auto& s : sets) {
                    const double a = anisotropy(s);
                    t.add({"anisotropy", s.modality, "0", std::to_string(s.size()), fmt(a)});
                    summary[s.modality] = a;
                }
            } else if (metric == "mutual_knn") {
                if (an_model.empty()) {
                    require(sets.size() == 2, "mutual_knn needs exactly two --emb dumps");
                    const double v = mutual_knn(sets[0], sets[1], k);
                    t.add({"mutual_knn", sets[0].modality + "~" + sets[1].modality, std::to_string(k),
                           std::to_string(sets[0].size()), fmt(v)});
                } else {
                    for (std::size_t i = 1; i < sets.size(); ++i) {
                        const double v = mutual_knn(sets[0], sets[i], k);
                        t.add({"mutual_knn", "text~" + sets[i].modality, std::to_string(k),
                               std::to_string(sets[0].size()), fmt(v)});
                    }
                }
            }
            out.write_csv("analysis.csv", t);
            summary["metric"] = metric;
            summary["rows"] = t.rows();
            finish(out, "analyze", cfg, {seed}, inputs, summary);
        } else if (ev->parsed()) {
            std::vector<MetricReport> reports;
            if (!ev_model.empty()) {
                inputs["model"] = ev_model;
                const auto ckpt = load_checkpoint(ev_model);
                ToyModel model = model_from_checkpoint(ckpt);
                if (!ev_adapter.empty()) {
                    inputs["adapter"] = ev_adapter;
                    model = merge_lora(model, adapter_from_checkpoint(load_checkpoint(ev_adapter)));
                }
                const World world = build_world(world_spec_from(cfg, world_seed_of(ckpt, seed)));
                reports = evaluate_suite(model, world, cfg, seed);
            } else {
                require(!ev_queries.empty() && !ev_corpus.empty() && !ev_qrels.empty(),
                        "eval needs --model, or all of --queries, --corpus and --qrels");
                require(ev_adapter.empty(), "--adapter needs --model");
                inputs["queries"] = ev_queries;
                inputs["corpus"] = ev_corpus;
                inputs["qrels"] = ev_qrels;
                const auto q = read_emb(ev_queries);
                const auto c = read_emb(ev_corpus);
                auto in = open_in(ev_qrels);
                const Qrels qrels = read_qrels(in);
                check_qrels(qrels, c.ids);
                const auto rankings = rank_by_cosine(q, c);
                const std::string ds = q.modality + "->" + c.modality;
                reports.push_back({"ndcg@" + std::to_string(ev_k), ndcg_at_k(rankings, qrels, ev_k), ev_k, q.size(), seed, ds});
                reports.push_back({"recall@1", recall_at_k(rankings, qrels, 1), 1, q.size(), seed, ds});
                reports.push_back({"recall@" + std::to_string(ev_k), recall_at_k(rankings, qrels, ev_k), ev_k, q.size(),
                                   seed, ds});
            }
            out.write_csv("metrics.csv", metric_table(reports));
            json summary = json::object();
            for (const auto& r : reports) summary[r.metric + "/" + r.dataset] = r.value;
            finish(out, "eval", cfg, {seed}, inputs, summary);
        } else if (gr->parsed()) {
            inputs["points"] = points_path;
            auto in = open_in(points_path);
            const auto fit = grsl_fit(read_scaling_csv(in));
            CsvTable t({"n", "pearson", "spearman", "slope", "intercept"});
            t.add({std::to_string(fit.n), fmt(fit.pearson), fmt(fit.spearman), fmt(fit.slope), fmt(fit.intercept)});
            out.write_csv("grsl.csv", t);
            finish(out, "grsl", cfg, {seed}, inputs,
                   {{"n", fit.n}, {"pearson", fit.pearson}, {"spearman", fit.spearman}, {"slope", fit.slope},
                    {"intercept", fit.intercept}});
        } else if (bd->parsed()) {
            std::vector<std::string> header{"n_candidates", "i_p", "eps_p", "kl", "n_samples", "delta", "penalty", "bound"};
            json summary;
            if (!bd_adapter.empty() || !bd_model.empty()) {
                if (bd_model.empty()) throw ValidationError("bound: --adapter needs the pre-CL checkpoint via --model");
                require(!bd_adapter.empty(), "bound: --model needs a trained adapter via --adapter");
                require(train_loss >= 0.0, "bound: checkpoint mode needs --train-loss");
                inputs["model"] = bd_model;
                inputs["adapter"] = bd_adapter;
                const auto ckpt = load_checkpoint(bd_model);
                const ToyModel model = model_from_checkpoint(ckpt);
                const LoraAdapter ad = adapter_from_checkpoint(load_checkpoint(bd_adapter));
                const World world = build_world(world_spec_from(cfg, world_seed_of(ckpt, seed)));
                Rng rng(derive_seed(seed, streams::bound));
                const auto r = bound_check(model, ad, world, train_loss, bound_config_from(cfg), rng);
                bi = r.inputs;
                header.push_back("heldout_loss");
                header.push_back("holds");
                CsvTable t(header);
                t.add({fmt(bi.batch_size_n), fmt(bi.i_p), fmt(bi.eps_p), fmt(bi.kl), fmt(bi.n_samples), fmt(bi.delta),
                       fmt(r.penalty), fmt(r.bound), fmt(r.empirical), r.holds ? "true" : "false"});
                out.write_csv("bound.csv", t);
                summary = {{"bound", r.bound}, {"heldout_loss", r.empirical}, {"holds", r.holds}, {"lg", r.lg}};
            } else {
                const double b = pac_bayes_bound(bi);
                CsvTable t(header);
                t.add({fmt(bi.batch_size_n), fmt(bi.i_p), fmt(bi.eps_p), fmt(bi.kl), fmt(bi.n_samples), fmt(bi.delta),
                       fmt(pac_bayes_penalty(bi)), fmt(b)});
                out.write_csv("bound.csv", t);
                summary = {{"bound", b}};
            }
            finish(out, "bound", cfg, {seed}, inputs, summary);
        } else if (im->parsed()) {
            inputs["input"] = im_input;
            const std::string bytes = binio::read_file(im_input);
            const EmbeddingSet set = deserialize_emb(bytes);
            set.validate();
            out.write_text("imported.emb", bytes);
            finish(out, "import-emb", cfg, {seed}, inputs,
                   {{"modality", set.modality}, {"count", set.size()}, {"dim", set.dim()}, {"sha1", content_hash(bytes)}});
        } else if (rep->parsed()) {
            replicate(rep_name, cfg, seed, out, inputs);
        }
        return 0;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
