#pragma once

#include <cstdint>

#include "kolmo/chain.hpp"
#include "kolmo/density_grid.hpp"
#include "kolmo/model.hpp"

namespace kolmo {

// Fine-step Euler-Maruyama reference density. Y accumulates by the trapezoid
// rule, which matches the half-drift structure of the macro chain and halves
// the deterministic bias.
DensityGrid euler_mc_density(const ModelSpec& model, double T, const PhasePoint& z0,
                             const GridSpec& grid, long long samples, int micro_steps,
                             double bx, double by, std::uint64_t seed);

std::vector<KdeEstimate> euler_density_at_points(const ModelSpec& model, double T,
                                                 const PhasePoint& z0,
                                                 const std::vector<PhasePoint>& points,
                                                 long long samples, int micro_steps,
                                                 double bx, double by, std::uint64_t seed);

enum class AsianEngine { euler, macro_chain };

struct ProbabilityEstimate {
    double p = 0.0;
    double se = 0.0;
    long long samples = 0;
};

// P[(Y_T / T - X_T)^+ > K], estimated either from Euler paths or from the
// macro-scale chain, so the chain's distributional fidelity is testable on a
// functional as well as pointwise.
ProbabilityEstimate digital_asian_probability(const ModelSpec& model, double T, double K,
                                              long long samples, AsianEngine engine,
                                              const ChainConfig& chain_cfg,
                                              int euler_micro_steps, std::uint64_t seed);

} // namespace kolmo
