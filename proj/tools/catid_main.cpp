#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "catid/config.hpp"
#include "catid/eval.hpp"

namespace {

constexpr const char* kToolVersion = "catid 0.1.0";

using catid::Config;
using nlohmann::json;

struct CommonArgs {
    std::string config_path;
    std::string manifest_in;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "key = value config file");
    cmd->add_option("--manifest-in", args.manifest_in,
                    "re-run from a previously written manifest (exact resolved config)");
    cmd->add_option("--set", args.overrides,
                    "override a config key, dotted-path syntax (train.alpha=0.2)");
}

Config resolve_config(const CommonArgs& args) {
    Config cfg;
    if (!args.manifest_in.empty()) {
        std::ifstream in(args.manifest_in);
        if (!in) throw catid::ConfigError("cannot open manifest '" + args.manifest_in + "'");
        json manifest = json::parse(in);
        for (const auto& [key, value] : manifest.at("config").items()) {
            cfg.set(key, value.get<std::string>());
        }
    } else if (!args.config_path.empty()) {
        cfg = Config::from_file(args.config_path);
    }
    for (const auto& kv : args.overrides) cfg.apply_override(kv);
    return cfg;
}

void write_manifest(const Config& cfg, const std::string& output_path,
                    const std::vector<std::string>& artifacts, const json& summary) {
    json manifest;
    json config_echo;
    for (const auto& [key, value] : cfg.values()) config_echo[key] = value;
    manifest["config"] = config_echo;
    manifest["artifacts"] = artifacts;
    manifest["tool_version"] = kToolVersion;
    manifest["summary"] = summary;
    const std::string path = output_path + ".manifest.json";
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        out << manifest.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

catid::SyntheticSpec data_spec(const Config& cfg) {
    catid::SyntheticSpec spec;
    spec.branching = cfg.get_int_list("data.branching", {4, 3});
    spec.docs_per_leaf = static_cast<int>(cfg.get_int("data.docs_per_leaf", 5));
    spec.D_emb = static_cast<int>(cfg.get_int("data.d_emb", 32));
    spec.level_scales = cfg.get_double_list("data.level_scales", {});
    spec.noise_scale = cfg.get_double("data.noise_scale", 0.1);
    spec.seed = static_cast<std::uint64_t>(cfg.get_int("data.seed", 0));
    return spec;
}

catid::TrainConfig train_config(const Config& cfg) {
    catid::TrainConfig tc;
    tc.L = static_cast<int>(cfg.get_int("train.L", 4));
    tc.K = static_cast<int>(cfg.get_int("train.K", 32));
    tc.D_z = static_cast<int>(cfg.get_int("train.d_z", 32));
    tc.epochs = static_cast<int>(cfg.get_int("train.epochs", 100));
    tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size", 256));
    tc.weights.alpha = cfg.get_double("train.alpha", 0.1);
    tc.weights.beta = cfg.get_double("train.beta", 0.0001);
    tc.weights.gamma = cfg.get_double("train.gamma", 1.0);
    tc.weights.eta = cfg.get_double("train.eta", 0.25);
    tc.weights.tau = cfg.get_double("train.tau", 0.07);
    tc.optim.lr = cfg.get_double("train.lr", 1e-3);
    tc.optim.weight_decay = cfg.get_double("train.weight_decay", 0.01);
    tc.optim.beta1 = cfg.get_double("train.beta1", 0.9);
    tc.optim.beta2 = cfg.get_double("train.beta2", 0.999);
    tc.optim.eps = cfg.get_double("train.eps_opt", 1e-8);
    tc.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
    tc.baseline_mode = cfg.get_bool("train.baseline_mode", false);
    tc.log_every = static_cast<int>(cfg.get_int("train.log_every", 10));
    tc.encoder_hidden = cfg.get_int_list("train.encoder_hidden", {});
    return tc;
}

catid::SinkhornOptions sinkhorn_options(const Config& cfg) {
    catid::SinkhornOptions opts;
    opts.epsilon = cfg.get_double("assign.epsilon", 0.05);
    opts.tol = cfg.get_double("assign.tol", 1e-9);
    opts.max_iters = static_cast<int>(cfg.get_int("assign.max_iters", 10000));
    return opts;
}

catid::RetrieverConfig retriever_config(const Config& cfg) {
    catid::RetrieverConfig rc;
    rc.hidden = static_cast<int>(cfg.get_int("retrieve.hidden", 64));
    rc.epochs = static_cast<int>(cfg.get_int("retrieve.epochs", 300));
    rc.batch_size = static_cast<int>(cfg.get_int("retrieve.batch_size", 64));
    rc.optim.lr = cfg.get_double("retrieve.lr", 3e-3);
    rc.optim.weight_decay = cfg.get_double("retrieve.weight_decay", 0.0);
    rc.log_every = static_cast<int>(cfg.get_int("retrieve.log_every", 50));
    return rc;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

int cmd_gen_data(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    if (!cfg.has("data.seed")) cfg.set("data.seed", "0");  // default recorded in manifest
    catid::SyntheticSpec spec = data_spec(cfg);
    const std::string out = cfg.get_string("data.out", "corpus.jsonl");
    catid::Corpus corpus = catid::generate_synthetic_corpus(spec);
    catid::save_corpus(corpus, out);
    json summary;
    summary["documents"] = corpus.size();
    summary["H"] = corpus.H;
    summary["D_emb"] = corpus.D_emb;
    write_manifest(cfg, out, {out}, summary);
    std::cout << "wrote " << corpus.size() << " documents (H=" << corpus.H << ") to " << out
              << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    catid::TrainConfig tc = train_config(cfg);
    const std::string corpus_path = cfg.get_string("train.corpus", "corpus.jsonl");
    const std::string checkpoint = cfg.get_string("train.checkpoint", "stack.bin");
    const std::string metrics = cfg.get_string("train.metrics", "metrics.csv");
    const std::string resume = cfg.get_string("train.resume", "");

    catid::Corpus corpus = catid::load_corpus(corpus_path);
    catid::TrainResult result;
    if (!resume.empty()) {
        catid::QuantizerStack stack = catid::load_stack(resume);
        if (tc.epochs == 0) {
            // idempotent resume: re-emit the checkpoint untouched
            catid::save_stack(stack, checkpoint);
            catid::MetricsLog empty;
            empty.save_csv(metrics);
            write_manifest(cfg, checkpoint, {checkpoint, metrics}, json::object());
            std::cout << "resumed 0 epochs; checkpoint copied\n";
            return 0;
        }
        tc.validate(corpus);
        result = catid::train_tokenizer(corpus, tc, std::move(stack));
    } else {
        result = catid::train_tokenizer(corpus, tc);
    }
    catid::save_stack(result.stack, checkpoint);
    result.log.save_csv(metrics);
    json summary;
    summary["steps"] = result.log.rows.empty() ? 0 : result.log.rows.back().step;
    summary["final_total_loss"] =
        result.log.rows.empty() ? 0.0 : result.log.rows.back().total;
    summary["alpha"] = fmt17(tc.weights.alpha);
    summary["beta"] = fmt17(tc.weights.beta);
    summary["gamma"] = fmt17(tc.weights.gamma);
    summary["L"] = tc.L;
    summary["K"] = tc.K;
    summary["batch_size"] = tc.batch_size;
    summary["epochs"] = tc.epochs;
    summary["optimizer"] = "AdamW";
    write_manifest(cfg, checkpoint, {checkpoint, metrics}, summary);
    std::cout << "trained " << tc.epochs << " epochs; checkpoint " << checkpoint << "\n";
    return 0;
}

int cmd_assign(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    const std::string corpus_path = cfg.get_string("train.corpus", "corpus.jsonl");
    const std::string checkpoint = cfg.get_string("train.checkpoint", "stack.bin");
    const std::string table_path = cfg.get_string("assign.table", "docids.tsv");

    catid::Corpus corpus = catid::load_corpus(corpus_path);
    catid::QuantizerStack stack = catid::load_stack(checkpoint);
    catid::DocIdTable raw = catid::assign_ids(stack, corpus);
    const long before = raw.collision_count();
    catid::DocIdTable table =
        catid::resolve_collisions(raw, stack, corpus, sinkhorn_options(cfg));
    if (!table.collision_free()) {
        throw catid::NumericError("assign: uniqueness check failed after resolution");
    }
    catid::save_table(table, table_path);
    long reassigned = 0;
    for (const auto& row : table.rows) reassigned += row.reassigned ? 1 : 0;
    json summary;
    summary["collisions_before"] = before;
    summary["reassigned"] = reassigned;
    write_manifest(cfg, table_path, {table_path}, summary);
    std::cout << "collisions before resolution: " << before << ", reassigned " << reassigned
              << " docs; table " << table_path << "\n";
    return 0;
}

int cmd_retrieve(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    const std::string corpus_path = cfg.get_string("train.corpus", "corpus.jsonl");
    const std::string table_path = cfg.get_string("assign.table", "docids.tsv");
    const std::string model_path = cfg.get_string("retrieve.model", "retriever.bin");
    const std::string output = cfg.get_string("retrieve.output", "results.csv");
    const int queries_per_doc = static_cast<int>(cfg.get_int("retrieve.queries_per_doc", 2));
    const double noise = cfg.get_double("retrieve.noise", 0.05);
    const int beam_width = static_cast<int>(cfg.get_int("retrieve.beam_width", 10));
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("retrieve.seed", 0));

    catid::Corpus corpus = catid::load_corpus(corpus_path);
    catid::DocIdTable table = catid::load_table(table_path);
    catid::IdTrie trie = catid::build_trie(table);
    std::vector<catid::QueryPair> pairs =
        catid::make_noisy_queries(corpus, table, queries_per_doc, noise, seed + 17);
    catid::RetrieverTrainResult trained = catid::train_retriever(
        pairs, corpus.D_emb, table.L, table.K, retriever_config(cfg), seed + 23);
    catid::save_retriever(trained.model, model_path);

    std::ofstream out(output);
    if (!out) throw catid::ParseError("retrieve: cannot open '" + output + "'");
    out << "query_id,relevant_doc,ranked\n";
    double recall1 = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto ranked = catid::beam_search(trained.model, pairs[i].query, beam_width, trie);
        out << "q" << i << "," << pairs[i].relevant_doc;
        for (const auto& sd : ranked) out << "," << sd.doc_id << "," << fmt17(sd.log_prob);
        out << "\n";
        if (!ranked.empty() && ranked.front().doc_id == pairs[i].relevant_doc) recall1 += 1.0;
    }
    recall1 /= static_cast<double>(pairs.size());
    json summary;
    summary["queries"] = pairs.size();
    summary["recall_at_1"] = recall1;
    write_manifest(cfg, output, {model_path, output}, summary);
    std::cout << "retrieved " << pairs.size() << " queries, train recall@1=" << recall1
              << "; results " << output << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    const std::string corpus_path = cfg.get_string("train.corpus", "corpus.jsonl");
    const std::string table_path = cfg.get_string("assign.table", "docids.tsv");
    const std::string results_path = cfg.get_string("retrieve.output", "results.csv");
    const std::string report_path = cfg.get_string("eval.report", "report.csv");
    std::vector<int> ks = cfg.get_int_list("eval.ks", {5, 10, 50});

    catid::Corpus corpus = catid::load_corpus(corpus_path);
    catid::DocIdTable table = catid::load_table(table_path);

    std::map<int, double> recall;
    for (int k : ks) recall[k] = 0.0;
    long n_queries = 0;
    {
        std::ifstream in(results_path);
        if (!in) throw catid::ParseError("eval: cannot open '" + results_path + "'");
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string field;
            std::getline(ss, field, ',');  // query id
            std::string relevant;
            std::getline(ss, relevant, ',');
            std::vector<std::string> ranked;
            while (std::getline(ss, field, ',')) {
                ranked.push_back(field);
                std::getline(ss, field, ',');  // skip log-prob
            }
            for (int k : ks) recall[k] += catid::recall_at_k(ranked, {relevant}, k);
            ++n_queries;
        }
    }
    if (n_queries == 0) throw catid::ValidationError("eval: no queries in results file");
    for (int k : ks) recall[k] /= static_cast<double>(n_queries);

    std::ofstream out(report_path);
    out << "metric,value\n";
    json summary;
    std::cout << "evaluation over " << n_queries << " queries\n";
    for (int k : ks) {
        out << "recall@" << k << "," << fmt17(recall[k]) << "\n";
        summary["recall@" + std::to_string(k)] = recall[k];
        std::cout << "  recall@" << k << " = " << recall[k] << "\n";
    }
    for (int l = 0; l < std::min(table.L, corpus.H); ++l) {
        const double purity = catid::category_purity(table, corpus, l);
        out << "purity_l" << l << "," << fmt17(purity) << "\n";
        std::cout << "  purity(level " << l << ") = " << purity << "\n";
    }
    for (int l = 0; l < table.L; ++l) {
        auto util = catid::codebook_utilization(table, l);
        out << "perplexity_l" << l << "," << fmt17(util.perplexity) << "\n";
        out << "used_codes_l" << l << "," << util.used_codes << "\n";
        std::cout << "  perplexity(layer " << l << ") = " << util.perplexity << " (used "
                  << util.used_codes << "/" << table.K << ")\n";
    }
    auto prefix = catid::prefix_agreement(table, corpus);
    out << "prefix_intra," << fmt17(prefix.intra_category) << "\n";
    out << "prefix_inter," << fmt17(prefix.inter_category) << "\n";
    std::cout << "  common prefix: intra-category " << prefix.intra_category
              << ", inter-category " << prefix.inter_category << "\n";
    write_manifest(cfg, report_path, {report_path}, summary);
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    const std::string corpus_path = cfg.get_string("train.corpus", "corpus.jsonl");
    const std::string report_path = cfg.get_string("ablate.report", "ablation.csv");
    std::vector<std::uint64_t> seeds;
    for (int s : cfg.get_int_list("ablate.seeds", {0, 1, 2})) {
        seeds.push_back(static_cast<std::uint64_t>(s));
    }
    catid::Corpus corpus = catid::load_corpus(corpus_path);

    catid::PipelineConfig pc;
    pc.train = train_config(cfg);
    pc.sinkhorn = sinkhorn_options(cfg);
    pc.retriever = retriever_config(cfg);
    pc.queries_per_doc = static_cast<int>(cfg.get_int("retrieve.queries_per_doc", 2));
    pc.query_noise = cfg.get_double("retrieve.noise", 0.05);
    pc.beam_width = static_cast<int>(cfg.get_int("retrieve.beam_width", 10));
    pc.recall_ks = cfg.get_int_list("eval.ks", {5, 10, 50});

    std::vector<catid::AblationVariant> variants;
    std::stringstream names(cfg.get_string("ablate.variants", "full,beta0,gamma0,alpha0"));
    std::string name;
    while (std::getline(names, name, ',')) {
        catid::AblationVariant v;
        v.name = name;
        v.weights = pc.train.weights;
        if (name == "full") {
        } else if (name == "beta0") {
            v.weights.beta = 0.0;
        } else if (name == "gamma0") {
            v.weights.gamma = 0.0;
        } else if (name == "alpha0") {
            v.weights.alpha = 0.0;
            v.weights.include_recon = true;  // TIGER-style reconstruction objective
        } else if (name == "baseline") {
            v.baseline_mode = true;
        } else {
            throw catid::ConfigError("ablate: unknown variant '" + name + "'");
        }
        variants.push_back(std::move(v));
    }

    auto reports = catid::ablation_run(corpus, pc, variants, seeds);
    catid::save_reports_csv(reports, report_path);
    json summary;
    for (const auto& r : reports) {
        std::cout << r.variant << " seed=" << r.seed;
        if (r.failed) {
            std::cout << " FAILED: " << r.error << "\n";
            continue;
        }
        std::cout << " purity=" << r.purity_l0 << " perplexity=" << r.mean_perplexity
                  << " collisions=" << r.collisions_before_resolution;
        for (const auto& [k, v] : r.recall) std::cout << " R@" << k << "=" << v;
        std::cout << "\n";
    }
    summary["variants"] = variants.size();
    summary["seeds"] = seeds.size();
    write_manifest(cfg, report_path, {report_path}, summary);
    return 0;
}

int cmd_grad_check(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    catid::TrainConfig tc = train_config(cfg);
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
    auto report = catid::grad_check(tc, seed);
    for (const auto& g : report.groups) {
        std::cout << g.name << " max rel err " << g.max_rel_err << "\n";
    }
    std::cout << "overall max rel err " << report.max_rel_err << "\n";
    if (report.max_rel_err > 1e-4) {
        throw catid::NumericError("grad-check: max relative error exceeds 1e-4");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"category-tree constrained document identifier learning and retrieval"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    CommonArgs gen_args, train_args, assign_args, retrieve_args, eval_args, ablate_args,
        grad_args;
    auto* gen = app.add_subcommand("gen-data", "generate a planted-structure synthetic corpus");
    add_common(gen, gen_args);
    auto* train = app.add_subcommand("train", "train the residual quantizer stack");
    add_common(train, train_args);
    auto* assign = app.add_subcommand("assign", "assign DocIDs and resolve collisions");
    add_common(assign, assign_args);
    auto* retrieve =
        app.add_subcommand("retrieve", "train the retriever and run constrained beam search");
    add_common(retrieve, retrieve_args);
    auto* eval = app.add_subcommand("eval", "compute retrieval and ID-quality metrics");
    add_common(eval, eval_args);
    auto* ablate = app.add_subcommand("ablate", "run the loss-toggle ablation grid");
    add_common(ablate, ablate_args);
    auto* grad = app.add_subcommand("grad-check", "finite-difference gradient verification");
    add_common(grad, grad_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (train->parsed()) return cmd_train(train_args);
        if (assign->parsed()) return cmd_assign(assign_args);
        if (retrieve->parsed()) return cmd_retrieve(retrieve_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (ablate->parsed()) return cmd_ablate(ablate_args);
        if (grad->parsed()) return cmd_grad_check(grad_args);
    } catch (const catid::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const catid::DepthError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const catid::ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const catid::ValidationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const catid::DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const catid::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
