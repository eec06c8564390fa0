#include "catid/id_assign.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace catid {

namespace {

std::string code_key(const std::vector<int>& codes, std::size_t upto) {
    std::string key;
    for (std::size_t i = 0; i < upto; ++i) key += std::to_string(codes[i]) + ",";
    return key;
}

}  // namespace

std::vector<std::vector<int>> DocIdTable::collision_groups() const {
    std::map<std::string, std::vector<int>> by_seq;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        by_seq[code_key(rows[i].codes, rows[i].codes.size())].push_back(static_cast<int>(i));
    }
    std::vector<std::vector<int>> groups;
    for (auto& [key, members] : by_seq) {
        if (members.size() >= 2) groups.push_back(std::move(members));
    }
    return groups;
}

long DocIdTable::collision_count() const {
    long count = 0;
    for (const auto& g : collision_groups()) count += static_cast<long>(g.size()) - 1;
    return count;
}

bool DocIdTable::collision_free() const { return collision_groups().empty(); }

DocIdTable assign_ids(const QuantizerStack& stack, const Corpus& corpus) {
    DocIdTable table;
    table.L = stack.L;
    table.K = stack.K;
    for (const auto& doc : corpus.documents) {
        QuantizationTrace tr = quantize(stack, doc.embedding);
        table.rows.push_back(DocIdRow{doc.doc_id, tr.codes, false});
    }
    return table;
}

SinkhornResult sinkhorn(const Mat& cost, const Vec& row_targets, const Vec& col_targets,
                        double epsilon, int max_iters, double tol) {
    const int g = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    if (row_targets.size() != g || col_targets.size() != m) {
        throw DimensionError("sinkhorn: target length mismatch");
    }
    if (epsilon <= 0.0) throw ConfigError("sinkhorn: epsilon must be > 0");
    if (row_targets.minCoeff() < 0.0 || col_targets.minCoeff() < 0.0) {
        throw ValidationError("sinkhorn: targets must be non-negative");
    }
    if (std::abs(row_targets.sum() - col_targets.sum()) > 1e-9 * std::max(1.0, row_targets.sum())) {
        throw ValidationError("sinkhorn: total row and column mass must match");
    }

    Mat kernel = (-cost / epsilon).array().exp();
    Vec u = Vec::Ones(g);
    Vec v = Vec::Ones(m);
    SinkhornResult result;
    auto marginal_residuals = [&](double* row_res, double* col_res) {
        Mat plan = u.asDiagonal() * kernel * v.asDiagonal();
        *row_res = (plan.rowwise().sum() - row_targets).cwiseAbs().maxCoeff();
        *col_res = (plan.colwise().sum().transpose() - col_targets).cwiseAbs().maxCoeff();
    };
    for (int it = 0; it < max_iters; ++it) {
        Vec kv = kernel * v;
        for (int i = 0; i < g; ++i) {
            u[i] = (kv[i] > 0.0) ? row_targets[i] / kv[i] : 0.0;
        }
        Vec ktu = kernel.transpose() * u;
        for (int j = 0; j < m; ++j) {
            v[j] = (ktu[j] > 0.0) ? col_targets[j] / ktu[j] : 0.0;
        }
        if (!u.allFinite() || !v.allFinite()) {
            throw NumericError("sinkhorn: scaling diverged; increase epsilon");
        }
        double row_res, col_res;
        marginal_residuals(&row_res, &col_res);
        result.residual_log.push_back(std::max(row_res, col_res));
        result.iterations = it + 1;
        result.row_residual = row_res;
        result.col_residual = col_res;
        if (row_res < tol && col_res < tol) break;
    }
    result.plan = u.asDiagonal() * kernel * v.asDiagonal();
    if (!result.plan.allFinite()) {
        throw NumericError("sinkhorn: non-finite plan; increase epsilon");
    }
    return result;
}

DocIdTable resolve_collisions(const DocIdTable& table, const QuantizerStack& stack,
                              const Corpus& corpus, const SinkhornOptions& opts) {
    if (table.rows.size() != corpus.size()) {
        throw ValidationError("resolve_collisions: table/corpus size mismatch");
    }
    const int L = table.L;
    const int K = table.K;
    DocIdTable out = table;

    // prefix (first L-1 codes) -> row indices
    std::map<std::string, std::vector<int>> prefix_groups;
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        prefix_groups[code_key(out.rows[i].codes, static_cast<std::size_t>(L - 1))].push_back(
            static_cast<int>(i));
    }

    for (auto& [prefix, members] : prefix_groups) {
        // docs whose full sequence is shared by someone else in the group
        std::map<int, std::vector<int>> by_last;
        for (int idx : members) by_last[out.rows[idx].codes[L - 1]].push_back(idx);
        std::vector<int> colliding;
        std::vector<bool> code_taken(K, false);
        for (const auto& [last, docs] : by_last) {
            if (docs.size() >= 2) {
                for (int idx : docs) colliding.push_back(idx);
            } else {
                code_taken[last] = true;
            }
        }
        if (colliding.empty()) continue;

        std::vector<int> candidates;
        for (int k = 0; k < K; ++k) {
            if (!code_taken[k]) candidates.push_back(k);
        }
        const int g = static_cast<int>(colliding.size());
        const int m = static_cast<int>(candidates.size());
        if (g > m) {
            throw ValidationError("resolve_collisions: prefix [" + prefix + "] has " +
                                  std::to_string(g) + " colliding documents but only " +
                                  std::to_string(m) + " free last-layer codes");
        }

        // cost(i, k) = squared distance from the doc's last residual to codeword k
        Mat cost(g, m);
        for (int i = 0; i < g; ++i) {
            QuantizationTrace tr = quantize(stack, corpus.documents[colliding[i]].embedding);
            for (int j = 0; j < m; ++j) {
                cost(i, j) =
                    (tr.residuals[L - 1] - stack.codebooks[L - 1].entries.col(candidates[j]))
                        .squaredNorm();
            }
        }
        const double lo = cost.minCoeff();
        const double hi = cost.maxCoeff();
        if (hi > lo) {
            cost = (cost.array() - lo) / (hi - lo);
        } else {
            cost.setZero();
        }

        // pad with dummy rows so row and column mass agree; dummies carry a
        // flat worst-case cost and are ignored during rounding
        Mat padded(m, m);
        padded.topRows(g) = cost;
        if (m > g) padded.bottomRows(m - g).setConstant(1.0);
        SinkhornResult ot = sinkhorn(padded, Vec::Ones(m), Vec::Ones(m), opts.epsilon,
                                     opts.max_iters, opts.tol);

        // greedy rounding by descending plan mass over real (doc, code) pairs
        struct Cell {
            double mass;
            int doc;
            int code;
        };
        std::vector<Cell> cells;
        for (int i = 0; i < g; ++i) {
            for (int j = 0; j < m; ++j) cells.push_back({ot.plan(i, j), i, j});
        }
        std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
            return a.mass > b.mass;
        });
        std::vector<bool> doc_done(g, false), code_used(m, false);
        std::vector<int> pick(g, -1);
        int assigned = 0;
        for (const auto& c : cells) {
            if (doc_done[c.doc] || code_used[c.code]) continue;
            doc_done[c.doc] = true;
            code_used[c.code] = true;
            pick[c.doc] = c.code;
            if (++assigned == g) break;
        }

        // the entropic plan can blur near-tie optima; polish the rounded
        // assignment with single-doc moves and pairwise swaps to a fixpoint
        bool improved = true;
        while (improved) {
            improved = false;
            for (int i = 0; i < g; ++i) {
                for (int j = 0; j < m; ++j) {
                    if (!code_used[j] && cost(i, j) < cost(i, pick[i]) - 1e-15) {
                        code_used[pick[i]] = false;
                        code_used[j] = true;
                        pick[i] = j;
                        improved = true;
                    }
                }
            }
            for (int i = 0; i < g; ++i) {
                for (int j = i + 1; j < g; ++j) {
                    if (cost(i, pick[j]) + cost(j, pick[i]) <
                        cost(i, pick[i]) + cost(j, pick[j]) - 1e-15) {
                        std::swap(pick[i], pick[j]);
                        improved = true;
                    }
                }
            }
        }

        for (int i = 0; i < g; ++i) {
            DocIdRow& row = out.rows[colliding[i]];
            const int new_code = candidates[pick[i]];
            row.reassigned = (row.codes[L - 1] != new_code);
            row.codes[L - 1] = new_code;
        }
    }

    if (!out.collision_free()) {
        throw NumericError("resolve_collisions: table still has collisions after resolution");
    }
    return out;
}

void save_table(const DocIdTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("save_table: cannot open '" + path + "'");
    out << "L=" << table.L << ",K=" << table.K << "\n";
    for (const auto& row : table.rows) {
        out << row.doc_id;
        for (int c : row.codes) out << "," << c;
        out << "," << (row.reassigned ? 1 : 0) << "\n";
    }
}

DocIdTable load_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("load_table: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("load_table: empty file");
    DocIdTable table;
    if (std::sscanf(line.c_str(), "L=%d,K=%d", &table.L, &table.K) != 2) {
        throw ParseError("load_table: bad header '" + line + "'");
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        DocIdRow row;
        if (!std::getline(ss, field, ',')) throw ParseError("load_table: bad record");
        row.doc_id = field;
        std::vector<int> nums;
        while (std::getline(ss, field, ',')) nums.push_back(std::stoi(field));
        if (static_cast<int>(nums.size()) != table.L + 1) {
            throw ParseError("load_table: record for '" + row.doc_id + "' has wrong field count");
        }
        row.codes.assign(nums.begin(), nums.end() - 1);
        row.reassigned = nums.back() != 0;
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace catid
