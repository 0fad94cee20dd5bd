#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <vector>

#include "pcn/baselines.hpp"
#include "pcn/config.hpp"
#include "pcn/datagen.hpp"
#include "pcn/embed_net.hpp"
#include "pcn/episodic.hpp"
#include "pcn/error.hpp"
#include "pcn/evaluate.hpp"
#include "pcn/metrics.hpp"
#include "pcn/protobank.hpp"

namespace py = pybind11;
using namespace pcn;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix matrix_from_array(const DoubleArray& array) {
    py::buffer_info info = array.request();
    if (info.ndim != 2) throw ShapeError("expected a 2-d array");
    Matrix m(static_cast<std::size_t>(info.shape[0]), static_cast<std::size_t>(info.shape[1]));
    const double* data = static_cast<const double*>(info.ptr);
    std::copy(data, data + m.rows() * m.cols(), m.data());
    return m;
}

py::array_t<double> array_from_matrix(const Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::copy(m.data(), m.data() + m.rows() * m.cols(), out.mutable_data());
    return out;
}

std::vector<double> vector_from_array(const DoubleArray& array) {
    py::buffer_info info = array.request();
    if (info.ndim != 1) throw ShapeError("expected a 1-d array");
    const double* data = static_cast<const double*>(info.ptr);
    return std::vector<double>(data, data + info.shape[0]);
}

std::map<int, std::vector<std::size_t>> support_map(const py::dict& d) {
    std::map<int, std::vector<std::size_t>> out;
    for (const auto& item : d) {
        out[item.first.cast<int>()] = item.second.cast<std::vector<std::size_t>>();
    }
    return out;
}

py::dict report_to_dict(const MetricsReport& r) {
    py::dict out;
    out["mca_combined"] = r.mca_combined;
    out["mca_base"] = r.mca_base;
    out["mca_novel"] = r.mca_novel;
    out["mca_combined_std"] = r.mca_combined_std;
    out["mca_base_std"] = r.mca_base_std;
    out["mca_novel_std"] = r.mca_novel_std;
    out["recall_at"] = r.recall_at;
    out["balanced_recall_at"] = r.balanced_recall_at;
    out["per_class_accuracy"] = r.per_class_accuracy;
    out["n_folds"] = r.n_folds;
    return out;
}

}  // namespace

PYBIND11_MODULE(_pcn, m) {
    m.doc() = "Prototypical clustering networks: few-shot classification with "
              "per-class prototype mixtures";

    // Translators run newest-first, so the base class is registered first.
    py::register_exception<Error>(m, "PcnError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

    py::class_<GenConfig>(m, "GenConfig")
        .def(py::init([](int n_classes, std::vector<int> modes_per_class, int ambient_dim,
                         double tail_exponent, int head_count, double mode_separation,
                         double noise_scale, bool warp, uint64_t seed) {
                 GenConfig cfg;
                 cfg.n_classes = n_classes;
                 cfg.modes_per_class = std::move(modes_per_class);
                 cfg.ambient_dim = ambient_dim;
                 cfg.tail_exponent = tail_exponent;
                 cfg.head_count = head_count;
                 cfg.mode_separation = mode_separation;
                 cfg.noise_scale = noise_scale;
                 cfg.warp = warp;
                 cfg.seed = seed;
                 return cfg;
             }),
             py::arg("n_classes") = 20, py::arg("modes_per_class") = std::vector<int>{3},
             py::arg("ambient_dim") = 12, py::arg("tail_exponent") = 1.0,
             py::arg("head_count") = 200, py::arg("mode_separation") = 5.0,
             py::arg("noise_scale") = 1.0, py::arg("warp") = true, py::arg("seed") = 0)
        .def_readwrite("n_classes", &GenConfig::n_classes)
        .def_readwrite("seed", &GenConfig::seed);

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("dim", [](const Dataset& d) { return d.dim; })
        .def_property_readonly("n_classes", [](const Dataset& d) { return d.n_classes; })
        .def_property_readonly("n_base", [](const Dataset& d) { return d.n_base; })
        .def_property_readonly("examples",
                               [](const Dataset& d) { return array_from_matrix(d.examples); })
        .def_property_readonly("labels", [](const Dataset& d) { return d.labels; })
        .def_property_readonly("splits",
                               [](const Dataset& d) {
                                   std::vector<int> out;
                                   out.reserve(d.split.size());
                                   for (Split s : d.split) out.push_back(static_cast<int>(s));
                                   return out;
                               })
        .def("is_base", &Dataset::is_base, py::arg("class_id"))
        .def("class_sizes", &Dataset::class_sizes)
        .def("indices_of",
             [](const Dataset& d, int class_id, const std::string& split) {
                 if (split == "all") return d.indices_of(class_id);
                 if (split == "train") return d.indices_of(class_id, Split::train);
                 if (split == "val") return d.indices_of(class_id, Split::val);
                 if (split == "test") return d.indices_of(class_id, Split::test);
                 throw ConfigError("split must be all/train/val/test");
             },
             py::arg("class_id"), py::arg("split") = "all")
        .def("__len__", [](const Dataset& d) { return d.size(); });

    m.def("gen_synthetic", &gen_synthetic, py::arg("config"));
    m.def("split_base_novel", &split_base_novel, py::arg("dataset"), py::arg("k_base"),
          py::arg("val_frac") = 0.2, py::arg("seed") = 0);
    m.def("save_dataset", &save_dataset, py::arg("path"), py::arg("dataset"));
    m.def("load_dataset", &load_dataset, py::arg("path"));
    m.def("zipf_sizes", &zipf_sizes, py::arg("n_classes"), py::arg("head_count"),
          py::arg("tail_exponent"));

    py::class_<LowshotFold>(m, "LowshotFold")
        .def_readonly("support", &LowshotFold::support)
        .def_readonly("test", &LowshotFold::test);
    m.def("lowshot_folds", &lowshot_folds, py::arg("dataset"), py::arg("n_train") = 5,
          py::arg("n_test") = 5, py::arg("folds") = 10, py::arg("seed") = 0);

    py::class_<EmbedNet>(m, "EmbedNet")
        .def_property_readonly("layer_dims", [](const EmbedNet& n) { return n.layer_dims; })
        .def_property_readonly("embed_dim", &EmbedNet::embed_dim);
    m.def("net_init",
          [](const std::vector<std::size_t>& dims, uint64_t seed) { return net_init(dims, seed); },
          py::arg("layer_dims"), py::arg("seed") = 0);
    m.def("net_forward",
          [](const EmbedNet& net, const DoubleArray& batch) {
              return array_from_matrix(net_forward(net, matrix_from_array(batch)));
          },
          py::arg("net"), py::arg("batch"));

    m.def("sq_dist",
          [](const DoubleArray& a, const DoubleArray& b) {
              std::vector<double> va = vector_from_array(a), vb = vector_from_array(b);
              return sq_dist(va, vb);
          },
          py::arg("a"), py::arg("b"));
    m.def("responsibilities",
          [](const DoubleArray& emb, const DoubleArray& protos, double tau) {
              std::vector<double> e = vector_from_array(emb);
              return responsibilities(e, matrix_from_array(protos), tau);
          },
          py::arg("emb"), py::arg("class_protos"), py::arg("tau") = 1.0);
    m.def("kmeans",
          [](const DoubleArray& points, std::size_t m, uint64_t seed) {
              KmeansResult r = kmeans(matrix_from_array(points), m, seed);
              return py::make_tuple(array_from_matrix(r.centers), r.assignment, r.sse,
                                    r.sse_history);
          },
          py::arg("points"), py::arg("m"), py::arg("seed") = 0,
          "Returns (centers, assignment, sse, sse_history).");
    m.def("ema_update",
          [](const DoubleArray& old_protos, const DoubleArray& support_embs,
             const DoubleArray& q, double alpha) {
              return array_from_matrix(ema_update(matrix_from_array(old_protos),
                                                  matrix_from_array(support_embs),
                                                  matrix_from_array(q), alpha));
          },
          py::arg("old_protos"), py::arg("support_embs"), py::arg("q_per_example"),
          py::arg("alpha"));
    m.def("linear_form",
          [](const DoubleArray& emb, const DoubleArray& protos, const std::vector<double>& q) {
              std::vector<double> e = vector_from_array(emb);
              LinearFormWitness w = linear_form(e, matrix_from_array(protos), q);
              return py::make_tuple(w.w, w.b, w.constant);
          },
          py::arg("emb"), py::arg("class_protos"), py::arg("q"),
          "Returns (w, b, constant) with -sum_z q_z d(emb, mu_z) == constant + w.emb - b.");

    py::class_<PrototypeBank>(m, "PrototypeBank")
        .def_property_readonly("class_ids",
                               [](const PrototypeBank& b) { return b.class_ids; })
        .def_readwrite("tau", &PrototypeBank::tau)
        .def_readwrite("alpha", &PrototypeBank::alpha)
        .def("prototypes_of",
             [](const PrototypeBank& b, int class_id) {
                 int idx = b.index_of(class_id);
                 if (idx < 0) throw StateError("class not in bank");
                 return array_from_matrix(b.prototypes[static_cast<std::size_t>(idx)]);
             },
             py::arg("class_id"));
    m.def("class_posterior",
          [](const DoubleArray& emb, const PrototypeBank& bank, double tau) {
              std::vector<double> e = vector_from_array(emb);
              return class_posterior(e, bank, tau);
          },
          py::arg("emb"), py::arg("bank"), py::arg("tau") = 1.0);
    m.def("posterior_ranking", &posterior_ranking, py::arg("posterior"), py::arg("class_ids"));
    m.def("save_bank", py::overload_cast<const std::string&, const PrototypeBank&>(&save_bank),
          py::arg("path"), py::arg("bank"));
    m.def("load_bank", py::overload_cast<const std::string&>(&load_bank), py::arg("path"));

    py::class_<EpisodeConfig>(m, "EpisodeConfig")
        .def(py::init([](int n_way, int n_support, int n_query, int episodes_per_epoch,
                         double tau_train, double alpha, bool stop_grad_q) {
                 EpisodeConfig cfg;
                 cfg.n_way = n_way;
                 cfg.n_support = n_support;
                 cfg.n_query = n_query;
                 cfg.episodes_per_epoch = episodes_per_epoch;
                 cfg.tau_train = tau_train;
                 cfg.alpha = alpha;
                 cfg.stop_grad_q = stop_grad_q;
                 return cfg;
             }),
             py::arg("n_way") = 10, py::arg("n_support") = 10, py::arg("n_query") = 10,
             py::arg("episodes_per_epoch") = 200, py::arg("tau_train") = 1.0,
             py::arg("alpha") = 0.5, py::arg("stop_grad_q") = false)
        .def_readwrite("n_way", &EpisodeConfig::n_way)
        .def_readwrite("n_support", &EpisodeConfig::n_support)
        .def_readwrite("n_query", &EpisodeConfig::n_query)
        .def_readwrite("episodes_per_epoch", &EpisodeConfig::episodes_per_epoch)
        .def_readwrite("tau_train", &EpisodeConfig::tau_train)
        .def_readwrite("alpha", &EpisodeConfig::alpha)
        .def_readwrite("stop_grad_q", &EpisodeConfig::stop_grad_q);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("net", &TrainResult::net)
        .def_readonly("bank", &TrainResult::bank)
        .def_readonly("best_epoch", &TrainResult::best_epoch)
        .def_property_readonly("history", [](const TrainResult& r) {
            py::list out;
            for (const EpochStats& row : r.history) {
                out.append(py::make_tuple(row.epoch, row.train_loss, row.val_mca));
            }
            return out;
        });
    m.def("train",
          [](const Dataset& ds, const std::vector<std::size_t>& layer_dims,
             const EpisodeConfig& episode, int m_base, int patience, int max_epochs,
             double learning_rate, double weight_decay, uint64_t seed) {
              TrainOptions opts;
              opts.episode = episode;
              opts.m_base = m_base;
              opts.patience = patience;
              opts.max_epochs = max_epochs;
              opts.adam.learning_rate = learning_rate;
              opts.adam.weight_decay = weight_decay;
              opts.seed = seed;
              return train(ds, layer_dims, opts);
          },
          py::arg("dataset"), py::arg("layer_dims"), py::arg("episode") = EpisodeConfig{},
          py::arg("m_base") = 10, py::arg("patience") = 10, py::arg("max_epochs") = 30,
          py::arg("learning_rate") = 1e-4, py::arg("weight_decay") = 1e-5, py::arg("seed") = 0);
    m.def("build_test_prototypes",
          [](const EmbedNet& net, const Dataset& ds, int m_base, int m_novel, uint64_t seed,
             const py::object& novel_support) {
              if (novel_support.is_none()) {
                  return build_test_prototypes(net, ds, m_base, m_novel, seed);
              }
              auto support = support_map(novel_support.cast<py::dict>());
              return build_test_prototypes(net, ds, m_base, m_novel, seed, &support);
          },
          py::arg("net"), py::arg("dataset"), py::arg("m_base") = 10, py::arg("m_novel") = 4,
          py::arg("seed") = 0, py::arg("novel_support") = py::none());
    m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("net"), py::arg("bank"));
    m.def("load_checkpoint",
          [](const std::string& path) {
              Checkpoint ckpt = load_checkpoint(path);
              return py::make_tuple(ckpt.net, ckpt.bank);
          },
          py::arg("path"), "Returns (net, bank).");

    m.def("lowshot_evaluate",
          [](const EmbedNet& net, const Dataset& ds, const std::vector<LowshotFold>& folds,
             int m_base, int m_novel, double tau, const std::vector<int>& recall_ks,
             uint64_t seed) {
              LowshotOptions opts;
              opts.m_base = m_base;
              opts.m_novel = m_novel;
              opts.tau = tau;
              opts.recall_ks = recall_ks;
              LowshotOutcome outcome = lowshot_evaluate(net, ds, folds, opts, seed);
              py::list per_fold;
              for (const MetricsReport& r : outcome.per_fold) per_fold.append(report_to_dict(r));
              py::dict out = report_to_dict(outcome.aggregate);
              out["per_fold"] = per_fold;
              return out;
          },
          py::arg("net"), py::arg("dataset"), py::arg("folds"), py::arg("m_base") = 10,
          py::arg("m_novel") = 4, py::arg("tau") = 1.0,
          py::arg("recall_ks") = std::vector<int>{5, 10}, py::arg("seed") = 0);

    m.def("mca",
          [](const std::vector<Ranking>& preds, const std::vector<int>& labels,
             const std::vector<int>& class_filter) { return mca(preds, labels, class_filter); },
          py::arg("ranked_preds"), py::arg("labels"), py::arg("class_filter"));
    m.def("recall_at_k", &recall_at_k, py::arg("ranked_preds"), py::arg("labels"), py::arg("k"));
    m.def("balanced_recall_at_k", &balanced_recall_at_k, py::arg("ranked_preds"),
          py::arg("labels"), py::arg("k"));

    m.def("knn_classify",
          [](const DoubleArray& train_embs, const std::vector<int>& labels,
             const DoubleArray& query, int k) {
              std::vector<double> q = vector_from_array(query);
              KnnResult r = knn_classify(matrix_from_array(train_embs), labels, q, k);
              return py::make_tuple(r.predicted, r.ranking, r.scores);
          },
          py::arg("train_embs"), py::arg("train_labels"), py::arg("query_emb"), py::arg("k") = 1,
          "Returns (predicted, ranking, scores).");
}
