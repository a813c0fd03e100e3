#include "dgdi/fixture.hpp"

#include "dgdi/rng.hpp"

namespace dgdi {

GradCheckFixture make_gradcheck_fixture(std::uint64_t seed) {
    SynthConfig synth;
    synth.n_nodes = 12;
    synth.n_diffusions = 4;
    synth.lat_min = 22.00;
    synth.lat_max = 22.06;
    synth.lon_min = 114.00;
    synth.lon_max = 114.06;
    synth.threshold_km = 3.0;
    synth.zipf_exponent = 1.0;
    synth.locality_weight = 1.0;
    synth.seed = derive_seed(seed, "fixture");

    GradCheckFixture f;
    auto data = synth_generate(synth);
    f.graph = build_graph(data.locations, synth.threshold_km);
    f.diffusions = std::move(data.diffusions);
    f.instances = make_prefix_instances(f.diffusions);
    f.hp.dim = 8;
    f.hp.n_layers = 2;
    f.hp.lambda1 = 0.3;
    f.hp.lambda2 = 1.0;
    f.hp.tau = 0.75;
    f.hp.seed = seed;
    f.params = init_params(f.graph.n_nodes, f.hp.dim, f.hp.n_layers, seed);
    f.corrupt_seed = derive_seed(seed, "fixture.corrupt");
    return f;
}

double run_gradcheck(std::uint64_t seed, double eps) {
    GradCheckFixture f = make_gradcheck_fixture(seed);
    ModelParams scratch = f.params;
    LossFn loss = [&](std::span<const double> theta, std::vector<double>* grad) {
        scratch.unflatten(theta);
        if (!grad) {
            return total_loss_value(f.graph.norm_adj, f.diffusions, f.instances, scratch, f.hp,
                                    Mode::dgdi_default, f.corrupt_seed);
        }
        Tape tape;
        BatchLoss bl = total_loss(tape, f.graph.norm_adj, f.diffusions, f.instances, scratch, f.hp,
                                  Mode::dgdi_default, f.corrupt_seed);
        tape.backward(bl.node);
        grad->clear();
        for (NodeId id : bl.params.ordered()) {
            const auto& a = tape.adjoint(id);
            grad->insert(grad->end(), a.begin(), a.end());
        }
        return bl.total;
    };
    return grad_check(loss, f.params.flatten(), eps);
}

}  // namespace dgdi
