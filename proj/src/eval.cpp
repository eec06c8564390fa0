#include "catid/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <unordered_map>

namespace catid {

double recall_at_k(const std::vector<std::string>& ranked,
                   const std::set<std::string>& relevant, int k) {
    if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
    if (relevant.empty()) throw ValidationError("recall_at_k: empty relevant set");
    long hits = 0;
    const int top = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int i = 0; i < top; ++i) {
        if (relevant.count(ranked[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

UtilizationReport codebook_utilization(const DocIdTable& table, int level) {
    if (table.rows.empty()) throw ValidationError("codebook_utilization: empty table");
    std::vector<long> counts(table.K, 0);
    for (const auto& row : table.rows) counts[row.codes[level]] += 1;
    UtilizationReport report;
    const double n = static_cast<double>(table.rows.size());
    for (long c : counts) {
        if (c > 0) {
            report.used_codes += 1;
            const double p = c / n;
            report.entropy -= p * std::log(p);
        }
    }
    report.perplexity = std::exp(report.entropy);
    return report;
}

double category_purity(const DocIdTable& table, const Corpus& corpus, int level) {
    if (level >= corpus.H) {
        throw ConfigError("category_purity: level " + std::to_string(level) +
                          " has no category labels (H=" + std::to_string(corpus.H) + ")");
    }
    if (table.rows.size() != corpus.size()) {
        throw ValidationError("category_purity: table/corpus size mismatch");
    }
    std::unordered_map<std::string, int> doc_index;
    for (std::size_t i = 0; i < corpus.size(); ++i) doc_index[corpus.documents[i].doc_id] = static_cast<int>(i);

    // code value -> category label -> doc count
    std::unordered_map<int, std::unordered_map<int, long>> hist;
    for (const auto& row : table.rows) {
        const auto& doc = corpus.documents[doc_index.at(row.doc_id)];
        hist[row.codes[level]][doc.category.labels[level]] += 1;
    }
    double weighted = 0.0;
    long total = 0;
    for (const auto& [code, cats] : hist) {
        long n = 0, majority = 0;
        for (const auto& [cat, c] : cats) {
            n += c;
            majority = std::max(majority, c);
        }
        weighted += static_cast<double>(majority);
        total += n;
    }
    return weighted / static_cast<double>(total);
}

PrefixAgreement prefix_agreement(const DocIdTable& table, const Corpus& corpus,
                                 std::uint64_t seed, int max_pairs) {
    const int n = static_cast<int>(table.rows.size());
    if (n < 2) throw ValidationError("prefix_agreement: need at least 2 documents");
    std::unordered_map<std::string, int> doc_index;
    for (std::size_t i = 0; i < corpus.size(); ++i) doc_index[corpus.documents[i].doc_id] = static_cast<int>(i);
    auto top_label = [&](int row) {
        return corpus.documents[doc_index.at(table.rows[row].doc_id)].category.labels[0];
    };
    auto common_prefix = [&](int a, int b) {
        int len = 0;
        while (len < table.L && table.rows[a].codes[len] == table.rows[b].codes[len]) ++len;
        return len;
    };

    const long all_pairs = static_cast<long>(n) * (n - 1) / 2;
    double intra_sum = 0.0, inter_sum = 0.0;
    long intra_n = 0, inter_n = 0;
    if (all_pairs <= 2L * max_pairs) {
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const int cp = common_prefix(i, j);
                if (top_label(i) == top_label(j)) {
                    intra_sum += cp;
                    ++intra_n;
                } else {
                    inter_sum += cp;
                    ++inter_n;
                }
            }
        }
    } else {
        Rng rng(seed);
        std::uniform_int_distribution<int> pick(0, n - 1);
        long attempts = 0;
        while ((intra_n < max_pairs || inter_n < max_pairs) && attempts < 100L * max_pairs) {
            ++attempts;
            const int i = pick(rng);
            const int j = pick(rng);
            if (i == j) continue;
            const int cp = common_prefix(i, j);
            if (top_label(i) == top_label(j)) {
                if (intra_n < max_pairs) {
                    intra_sum += cp;
                    ++intra_n;
                }
            } else if (inter_n < max_pairs) {
                inter_sum += cp;
                ++inter_n;
            }
        }
    }
    PrefixAgreement out;
    out.intra_category = intra_n ? intra_sum / intra_n : 0.0;
    out.inter_category = inter_n ? inter_sum / inter_n : 0.0;
    return out;
}

RunReport run_pipeline(const Corpus& corpus, const PipelineConfig& config,
                       const AblationVariant& variant, std::uint64_t seed) {
    RunReport report;
    report.variant = variant.name;
    report.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        TrainConfig tc = config.train;
        tc.weights = variant.weights;
        tc.baseline_mode = variant.baseline_mode;
        tc.seed = seed;
        TrainResult trained = train_tokenizer(corpus, tc);

        DocIdTable raw = assign_ids(trained.stack, corpus);
        report.collisions_before_resolution = raw.collision_count();
        DocIdTable table = resolve_collisions(raw, trained.stack, corpus, config.sinkhorn);
        IdTrie trie = build_trie(table);

        std::vector<QueryPair> pairs = make_noisy_queries(
            corpus, table, config.queries_per_doc, config.query_noise, seed + 17);
        RetrieverTrainResult retr =
            train_retriever(pairs, corpus.D_emb, tc.L, tc.K, config.retriever, seed + 23);

        for (int k : config.recall_ks) report.recall[k] = 0.0;
        for (const auto& pair : pairs) {
            auto ranked = beam_search(retr.model, pair.query,
                                      std::max(config.beam_width,
                                               *std::max_element(config.recall_ks.begin(),
                                                                 config.recall_ks.end())),
                                      trie);
            std::vector<std::string> ids;
            for (const auto& sd : ranked) ids.push_back(sd.doc_id);
            for (int k : config.recall_ks) {
                report.recall[k] += recall_at_k(ids, {pair.relevant_doc}, k);
            }
        }
        for (int k : config.recall_ks) report.recall[k] /= static_cast<double>(pairs.size());

        report.purity_l0 = category_purity(table, corpus, 0);
        double ppl = 0.0;
        for (int l = 0; l < table.L; ++l) ppl += codebook_utilization(table, l).perplexity;
        report.mean_perplexity = ppl / table.L;
    } catch (const std::exception& e) {
        report.failed = true;
        report.error = e.what();
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

std::vector<RunReport> ablation_run(const Corpus& corpus, const PipelineConfig& config,
                                    const std::vector<AblationVariant>& variants,
                                    const std::vector<std::uint64_t>& seeds) {
    std::vector<RunReport> reports;
    for (const auto& variant : variants) {
        for (std::uint64_t seed : seeds) {
            reports.push_back(run_pipeline(corpus, config, variant, seed));
        }
    }
    return reports;
}

void save_reports_csv(const std::vector<RunReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("save_reports_csv: cannot open '" + path + "'");
    std::vector<int> ks;
    for (const auto& r : reports) {
        for (const auto& [k, v] : r.recall) {
            if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
        }
    }
    std::sort(ks.begin(), ks.end());
    out << "variant,seed";
    for (int k : ks) out << ",recall@" << k;
    out << ",purity_l0,mean_perplexity,collisions_before_resolution,failed,error\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };
    for (const auto& r : reports) {
        out << r.variant << "," << r.seed;
        for (int k : ks) {
            auto it = r.recall.find(k);
            out << "," << (it == r.recall.end() ? "" : fmt(it->second));
        }
        out << "," << fmt(r.purity_l0) << "," << fmt(r.mean_perplexity) << ","
            << r.collisions_before_resolution << "," << (r.failed ? 1 : 0) << ","
            << r.error << "\n";
    }
}

}  // namespace catid
