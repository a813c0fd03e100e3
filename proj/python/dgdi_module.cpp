// pydgdi: thin python bindings over the core operations, mainly for quick
// experiments and smoke testing the installed library.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dgdi/config.hpp"
#include "dgdi/dataio.hpp"
#include "dgdi/eval.hpp"
#include "dgdi/fixture.hpp"
#include "dgdi/trainer.hpp"

namespace py = pybind11;
using namespace dgdi;

namespace {

RunConfig config_from_kwargs(const py::kwargs& kwargs) {
    RunConfig cfg;
    for (auto item : kwargs) {
        const std::string key = py::cast<std::string>(item.first);
        if (key == "lambda1") cfg.hp.lambda1 = py::cast<double>(item.second);
        else if (key == "lambda2") cfg.hp.lambda2 = py::cast<double>(item.second);
        else if (key == "tau") cfg.hp.tau = py::cast<double>(item.second);
        else if (key == "lr") cfg.hp.lr = py::cast<double>(item.second);
        else if (key == "batch_size") cfg.hp.batch_size = py::cast<int>(item.second);
        else if (key == "dim") cfg.hp.dim = py::cast<int>(item.second);
        else if (key == "layers") cfg.hp.n_layers = py::cast<int>(item.second);
        else if (key == "epochs") cfg.hp.epochs = py::cast<int>(item.second);
        else if (key == "patience") cfg.hp.patience = py::cast<int>(item.second);
        else if (key == "seed") cfg.hp.seed = py::cast<std::uint64_t>(item.second);
        else if (key == "seeds") cfg.seeds = py::cast<std::vector<std::uint64_t>>(item.second);
        else if (key == "k_list") cfg.hp.k_list = py::cast<std::vector<int>>(item.second);
        else if (key == "threshold_km") cfg.threshold_km = py::cast<double>(item.second);
        else if (key == "bucket_edges") cfg.bucket_edges = py::cast<std::vector<int>>(item.second);
        else if (key == "every_prefix") cfg.every_prefix = py::cast<bool>(item.second);
        else if (key == "workers") cfg.workers = py::cast<int>(item.second);
        else if (key == "mode") { /* handled by callers */ }
        else throw ConfigError("unknown keyword '" + key + "'");
    }
    return cfg;
}

py::dict report_to_dict(const MetricsReport& r) {
    py::dict out;
    out["dataset"] = r.dataset;
    out["mode"] = r.mode;
    out["seeds"] = r.seeds;
    py::dict recall, map_;
    for (std::size_t i = 0; i < r.k_list.size(); ++i) {
        recall[py::int_(r.k_list[i])] = py::make_tuple(r.recall_mean[i], r.recall_std[i]);
        map_[py::int_(r.k_list[i])] = py::make_tuple(r.map_mean[i], r.map_std[i]);
    }
    out["recall"] = recall;
    out["map"] = map_;
    out["evaluated"] = r.evaluated;
    out["skipped"] = r.skipped;
    out["json"] = metrics_to_json(r);
    return out;
}

std::vector<RankedPrediction> ranks_from_list(const std::vector<int>& ranks) {
    std::vector<RankedPrediction> out;
    for (int rank : ranks) {
        RankedPrediction r;
        r.rank = rank;
        out.push_back(r);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(pydgdi, m) {
    m.doc() = "Graph diffusion next-location prediction (DGDI) core operations";

    m.def("haversine_km", &haversine_km, py::arg("lat1"), py::arg("lon1"), py::arg("lat2"),
          py::arg("lon2"), "Great-circle distance in kilometers");

    m.def(
        "positional_encoding",
        [](int position, int dim) { return positional_encoding(position, dim).data; },
        py::arg("position"), py::arg("dim"), "Sinusoidal positional encoding row");

    m.def(
        "gradcheck",
        [](std::uint64_t seed, double eps) { return run_gradcheck(seed, eps); },
        py::arg("seed") = 7, py::arg("eps") = 1e-5,
        "Max relative error between tape gradients and central differences on the desk fixture");

    m.def(
        "synth",
        [](const std::string& out_dir, int nodes, int diffusions, std::uint64_t seed,
           double zipf, double locality) {
            SynthConfig cfg;
            cfg.n_nodes = nodes;
            cfg.n_diffusions = diffusions;
            cfg.seed = seed;
            cfg.zipf_exponent = zipf;
            cfg.locality_weight = locality;
            auto result = synth_generate(cfg);
            std::filesystem::create_directories(out_dir);
            write_locations(std::filesystem::path(out_dir) / "locations.csv", result.locations);
            write_diffusions(std::filesystem::path(out_dir) / "diffusions.csv", result.diffusions,
                             result.locations);
            write_synth_manifest(std::filesystem::path(out_dir) / "manifest.txt", cfg);
            return py::make_tuple(result.locations.size(), result.diffusions.size());
        },
        py::arg("out_dir"), py::arg("nodes") = 100, py::arg("diffusions") = 200,
        py::arg("seed") = 1, py::arg("zipf") = 1.0, py::arg("locality") = 1.0,
        "Write a synthetic corpus and return (n_locations, n_diffusions)");

    m.def(
        "graph_stats",
        [](const std::string& locations_csv, double threshold_km) {
            auto locations = load_locations(locations_csv);
            auto graph = build_graph(locations, threshold_km);
            py::dict out;
            out["n_nodes"] = graph.n_nodes;
            out["n_edges"] = graph.edges.size();
            return out;
        },
        py::arg("locations_csv"), py::arg("threshold_km") = 3.0,
        "Node and edge counts of the geometric graph");

    m.def(
        "train",
        [](const std::string& locations_csv, const std::string& diffusions_csv,
           const std::string& checkpoint_path, const py::kwargs& kwargs) {
            RunConfig cfg = config_from_kwargs(kwargs);
            auto locations = load_locations(locations_csv);
            auto diffusions = load_diffusions(diffusions_csv, index_by_id(locations));
            PreparedData data = prepare_data(locations, diffusions, cfg);
            TrainResult result = train_model(data.graph, data.split.train, cfg.hp,
                                             Mode::dgdi_default, {});
            save_checkpoint(checkpoint_path, result.params);
            py::dict out;
            out["epochs"] = result.epochs.size();
            out["final_loss"] = result.epochs.back().total;
            out["checkpoint"] = checkpoint_path;
            return out;
        },
        py::arg("locations_csv"), py::arg("diffusions_csv"), py::arg("checkpoint_path"),
        "Train the default model and write a checkpoint");

    m.def(
        "evaluate",
        [](const std::string& locations_csv, const std::string& diffusions_csv,
           const std::string& checkpoint_path, const py::kwargs& kwargs) {
            RunConfig cfg = config_from_kwargs(kwargs);
            std::string mode_name = "default";
            if (kwargs.contains("mode")) mode_name = py::cast<std::string>(kwargs["mode"]);
            auto locations = load_locations(locations_csv);
            auto diffusions = load_diffusions(diffusions_csv, index_by_id(locations));
            PreparedData data = prepare_data(locations, diffusions, cfg);
            ModelParams params = load_checkpoint(checkpoint_path);
            return report_to_dict(
                evaluate_single(data, params, mode_from_string(mode_name), cfg, cfg.hp.seed));
        },
        py::arg("locations_csv"), py::arg("diffusions_csv"), py::arg("checkpoint_path"),
        "Evaluate a checkpoint on the temporal test split");

    m.def(
        "recall_at_k",
        [](const std::vector<int>& ranks, int k) { return recall_at_k(ranks_from_list(ranks), k); },
        py::arg("ranks"), py::arg("k"));

    m.def(
        "map_at_k",
        [](const std::vector<int>& ranks, int k) { return map_at_k(ranks_from_list(ranks), k); },
        py::arg("ranks"), py::arg("k"));

    py::register_exception<Error>(m, "DgdiError");
}
