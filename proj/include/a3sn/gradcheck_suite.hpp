#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace a3sn {

struct OpCheck {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Runs the finite-difference oracle through every differentiable op and one
// full-model loss composition. Each op appears exactly once in the result.
std::vector<OpCheck> run_gradcheck_suite(std::uint64_t seed, double tol, std::size_t d_model,
                                         std::size_t n_heads);

} // namespace a3sn
