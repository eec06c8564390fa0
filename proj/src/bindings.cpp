#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "catid/eval.hpp"

namespace py = pybind11;
using namespace catid;

PYBIND11_MODULE(_core, m) {
    m.doc() = "hierarchical document identifier learning and generative retrieval";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ParseError>(m, "ParseError");
    py::register_exception<ValidationError>(m, "ValidationError");
    py::register_exception<DepthError>(m, "DepthError");
    py::register_exception<NumericError>(m, "NumericError");

    py::class_<CategoryPath>(m, "CategoryPath")
        .def(py::init<>())
        .def_readwrite("labels", &CategoryPath::labels);

    py::class_<Document>(m, "Document")
        .def(py::init<>())
        .def_readwrite("doc_id", &Document::doc_id)
        .def_readwrite("embedding", &Document::embedding)
        .def_readwrite("category", &Document::category);

    py::class_<Corpus>(m, "Corpus")
        .def(py::init<>())
        .def_readonly("documents", &Corpus::documents)
        .def_readonly("H", &Corpus::H)
        .def_readonly("D_emb", &Corpus::D_emb)
        .def("__len__", &Corpus::size);

    py::class_<SyntheticSpec>(m, "SyntheticSpec")
        .def(py::init<>())
        .def_readwrite("branching", &SyntheticSpec::branching)
        .def_readwrite("docs_per_leaf", &SyntheticSpec::docs_per_leaf)
        .def_readwrite("D_emb", &SyntheticSpec::D_emb)
        .def_readwrite("level_scales", &SyntheticSpec::level_scales)
        .def_readwrite("noise_scale", &SyntheticSpec::noise_scale)
        .def_readwrite("seed", &SyntheticSpec::seed);

    m.def("generate_synthetic_corpus", &generate_synthetic_corpus, py::arg("spec"));
    m.def("load_corpus", &load_corpus, py::arg("path"));
    m.def("save_corpus", &save_corpus, py::arg("corpus"), py::arg("path"));
    m.def("validate_category_depth", &validate_category_depth, py::arg("corpus"),
          py::arg("L"));

    py::class_<LossWeights>(m, "LossWeights")
        .def(py::init<>())
        .def_readwrite("alpha", &LossWeights::alpha)
        .def_readwrite("beta", &LossWeights::beta)
        .def_readwrite("gamma", &LossWeights::gamma)
        .def_readwrite("eta", &LossWeights::eta)
        .def_readwrite("tau", &LossWeights::tau)
        .def_readwrite("include_recon", &LossWeights::include_recon);

    py::class_<OptimConfig>(m, "OptimConfig")
        .def(py::init<>())
        .def_readwrite("lr", &OptimConfig::lr)
        .def_readwrite("weight_decay", &OptimConfig::weight_decay)
        .def_readwrite("beta1", &OptimConfig::beta1)
        .def_readwrite("beta2", &OptimConfig::beta2)
        .def_readwrite("eps", &OptimConfig::eps);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("L", &TrainConfig::L)
        .def_readwrite("K", &TrainConfig::K)
        .def_readwrite("D_z", &TrainConfig::D_z)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("weights", &TrainConfig::weights)
        .def_readwrite("optim", &TrainConfig::optim)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("baseline_mode", &TrainConfig::baseline_mode)
        .def_readwrite("log_every", &TrainConfig::log_every)
        .def_readwrite("encoder_hidden", &TrainConfig::encoder_hidden);

    py::class_<QuantizerStack>(m, "QuantizerStack")
        .def_readonly("L", &QuantizerStack::L)
        .def_readonly("K", &QuantizerStack::K)
        .def_readonly("D_z", &QuantizerStack::D_z);

    py::class_<QuantizationTrace>(m, "QuantizationTrace")
        .def_readonly("z", &QuantizationTrace::z)
        .def_readonly("codes", &QuantizationTrace::codes)
        .def_readonly("z_hat", &QuantizationTrace::z_hat)
        .def_readonly("d_hat", &QuantizationTrace::d_hat);

    py::class_<MetricsRow>(m, "MetricsRow")
        .def_readonly("step", &MetricsRow::step)
        .def_readonly("rq", &MetricsRow::rq)
        .def_readonly("recon", &MetricsRow::recon)
        .def_readonly("dispersion", &MetricsRow::dispersion)
        .def_readonly("hcc", &MetricsRow::hcc)
        .def_readonly("csc", &MetricsRow::csc)
        .def_readonly("total", &MetricsRow::total)
        .def_readonly("perplexity", &MetricsRow::perplexity)
        .def_readonly("collisions", &MetricsRow::collisions);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("stack", &TrainResult::stack)
        .def_property_readonly("log",
                               [](const TrainResult& r) { return r.log.rows; });

    m.def(
        "train_tokenizer",
        [](const Corpus& corpus, const TrainConfig& config) {
            return train_tokenizer(corpus, config);
        },
        py::arg("corpus"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
    m.def("quantize", &quantize, py::arg("stack"), py::arg("d"));
    m.def("save_stack", &save_stack, py::arg("stack"), py::arg("path"));
    m.def("load_stack", &load_stack, py::arg("path"));

    py::class_<DocIdRow>(m, "DocIdRow")
        .def_readonly("doc_id", &DocIdRow::doc_id)
        .def_readonly("codes", &DocIdRow::codes)
        .def_readonly("reassigned", &DocIdRow::reassigned);

    py::class_<DocIdTable>(m, "DocIdTable")
        .def_readonly("L", &DocIdTable::L)
        .def_readonly("K", &DocIdTable::K)
        .def_readonly("rows", &DocIdTable::rows)
        .def("collision_count", &DocIdTable::collision_count)
        .def("collision_free", &DocIdTable::collision_free);

    py::class_<SinkhornOptions>(m, "SinkhornOptions")
        .def(py::init<>())
        .def_readwrite("epsilon", &SinkhornOptions::epsilon)
        .def_readwrite("max_iters", &SinkhornOptions::max_iters)
        .def_readwrite("tol", &SinkhornOptions::tol);

    m.def("assign_ids", &assign_ids, py::arg("stack"), py::arg("corpus"));
    m.def("resolve_collisions", &resolve_collisions, py::arg("table"), py::arg("stack"),
          py::arg("corpus"), py::arg("opts") = SinkhornOptions{});
    m.def(
        "sinkhorn",
        [](const Mat& cost, const Vec& row_targets, const Vec& col_targets, double epsilon,
           int max_iters, double tol) {
            SinkhornResult r = sinkhorn(cost, row_targets, col_targets, epsilon, max_iters, tol);
            return py::make_tuple(r.plan, r.residual_log, r.iterations);
        },
        py::arg("cost"), py::arg("row_targets"), py::arg("col_targets"),
        py::arg("epsilon") = 0.05, py::arg("max_iters") = 10000, py::arg("tol") = 1e-9);
    m.def("save_table", &save_table, py::arg("table"), py::arg("path"));
    m.def("load_table", &load_table, py::arg("path"));

    py::class_<RetrieverConfig>(m, "RetrieverConfig")
        .def(py::init<>())
        .def_readwrite("hidden", &RetrieverConfig::hidden)
        .def_readwrite("epochs", &RetrieverConfig::epochs)
        .def_readwrite("batch_size", &RetrieverConfig::batch_size)
        .def_readwrite("optim", &RetrieverConfig::optim)
        .def_readwrite("log_every", &RetrieverConfig::log_every);

    py::class_<QueryPair>(m, "QueryPair")
        .def(py::init<>())
        .def_readwrite("query", &QueryPair::query)
        .def_readwrite("targets", &QueryPair::targets)
        .def_readwrite("relevant_doc", &QueryPair::relevant_doc);

    py::class_<RetrieverModel>(m, "RetrieverModel")
        .def_readonly("D_emb", &RetrieverModel::D_emb)
        .def_readonly("hidden", &RetrieverModel::hidden)
        .def_readonly("L", &RetrieverModel::L)
        .def_readonly("K", &RetrieverModel::K);

    py::class_<RetrieverTrainResult>(m, "RetrieverTrainResult")
        .def_readonly("model", &RetrieverTrainResult::model)
        .def_readonly("loss_log", &RetrieverTrainResult::loss_log);

    py::class_<IdTrie>(m, "IdTrie");

    py::class_<ScoredDoc>(m, "ScoredDoc")
        .def_readonly("doc_id", &ScoredDoc::doc_id)
        .def_readonly("codes", &ScoredDoc::codes)
        .def_readonly("log_prob", &ScoredDoc::log_prob);

    m.def("build_trie", &build_trie, py::arg("table"));
    m.def("make_noisy_queries", &make_noisy_queries, py::arg("corpus"), py::arg("table"),
          py::arg("queries_per_doc"), py::arg("noise_sigma"), py::arg("seed"));
    m.def("train_retriever", &train_retriever, py::arg("pairs"), py::arg("D_emb"),
          py::arg("L"), py::arg("K"), py::arg("config"), py::arg("seed"),
          py::call_guard<py::gil_scoped_release>());
    m.def("beam_search", &beam_search, py::arg("model"), py::arg("query"),
          py::arg("beam_width"), py::arg("trie"));
    m.def("seq_loss",
          [](const RetrieverModel& model, const QueryPair& pair) {
              return seq_loss(model, pair);
          },
          py::arg("model"), py::arg("pair"));
    m.def("save_retriever", &save_retriever, py::arg("model"), py::arg("path"));
    m.def("load_retriever", &load_retriever, py::arg("path"));

    m.def("recall_at_k", &recall_at_k, py::arg("ranked"), py::arg("relevant"), py::arg("k"));
    m.def("category_purity", &category_purity, py::arg("table"), py::arg("corpus"),
          py::arg("level"));
    m.def(
        "codebook_utilization",
        [](const DocIdTable& table, int level) {
            UtilizationReport r = codebook_utilization(table, level);
            return py::make_tuple(r.entropy, r.perplexity, r.used_codes);
        },
        py::arg("table"), py::arg("level"));

    py::class_<GradCheckGroup>(m, "GradCheckGroup")
        .def_readonly("name", &GradCheckGroup::name)
        .def_readonly("max_rel_err", &GradCheckGroup::max_rel_err);

    py::class_<GradCheckReport>(m, "GradCheckReport")
        .def_readonly("groups", &GradCheckReport::groups)
        .def_readonly("max_rel_err", &GradCheckReport::max_rel_err);

    m.def("grad_check", &grad_check, py::arg("config"), py::arg("seed"));
}
