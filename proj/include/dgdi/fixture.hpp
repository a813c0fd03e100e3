#pragma once

#include <cstdint>

#include "dgdi/dataio.hpp"
#include "dgdi/objective.hpp"

namespace dgdi {

// The built-in 12-node / 4-diffusion desk fixture used by `gradcheck` and the
// smoothness checks. Small embedding dimension keeps the full
// finite-difference sweep fast.
struct GradCheckFixture {
    GeometricGraph graph;
    std::vector<Diffusion> diffusions;
    std::vector<PrefixInstance> instances;
    ModelParams params;
    Hyperparams hp;
    std::uint64_t corrupt_seed = 0;
};

GradCheckFixture make_gradcheck_fixture(std::uint64_t seed);

// Max relative error between tape gradients of the full loss and central
// finite differences over every parameter coordinate.
double run_gradcheck(std::uint64_t seed, double eps);

}  // namespace dgdi
