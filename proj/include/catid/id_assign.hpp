#pragma once

#include <string>
#include <vector>

#include "catid/corpus.hpp"
#include "catid/quantizer.hpp"

namespace catid {

struct DocIdRow {
    std::string doc_id;
    std::vector<int> codes;
    bool reassigned = false;
};

struct DocIdTable {
    int L = 0;
    int K = 0;
    std::vector<DocIdRow> rows;

    /// doc indices per duplicated full code sequence (groups of size >= 2)
    std::vector<std::vector<int>> collision_groups() const;
    long collision_count() const;
    bool collision_free() const;
};

/// One quantize per document; collisions are left in place, only detectable.
DocIdTable assign_ids(const QuantizerStack& stack, const Corpus& corpus);

struct SinkhornResult {
    Mat plan;
    std::vector<double> residual_log;  // max marginal residual after each iteration
    int iterations = 0;
    double row_residual = 0.0;
    double col_residual = 0.0;
};

/// Entropic OT via alternating row/column scaling of exp(-cost/epsilon).
/// Targets must be non-negative with equal total mass.
SinkhornResult sinkhorn(const Mat& cost, const Vec& row_targets, const Vec& col_targets,
                        double epsilon = 0.05, int max_iters = 10000, double tol = 1e-9);

struct SinkhornOptions {
    double epsilon = 0.05;  // on min-max normalized costs
    int max_iters = 10000;
    double tol = 1e-9;
};

/// Reassigns last-layer codes within each shared-(L-1)-prefix group via
/// Sinkhorn + greedy rounding. First L-1 codes never change.
DocIdTable resolve_collisions(const DocIdTable& table, const QuantizerStack& stack,
                              const Corpus& corpus, const SinkhornOptions& opts = {});

void save_table(const DocIdTable& table, const std::string& path);
DocIdTable load_table(const std::string& path);

}  // namespace catid
