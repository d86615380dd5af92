#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kolmo/density_grid.hpp"
#include "kolmo/model.hpp"
#include "kolmo/parametrix.hpp"
#include "kolmo/rng.hpp"

namespace kolmo {

// Micro-variable law for the aggregated innovations. All three are centered
// with unit variance per coordinate; the non-gaussian ones have smooth
// densities and finite moments of every order.
//   gaussian                 N(0, 1)
//   scaled_uniform_mixture   asymmetric two-component uniform mixture plus a
//                            narrow Gaussian mollifier (skewness 0.384)
//   student_like_smoothed    symmetric two-component Gaussian scale mixture
//                            (excess kurtosis 1.75)
enum class BaseDist { gaussian, scaled_uniform_mixture, student_like_smoothed };

BaseDist base_dist_from_string(const std::string& s);
std::string to_string(BaseDist b);

// Parameters of the non-gaussian bases; the closed-form characteristic
// functions in the charfn module track these exactly.
namespace base_params {
inline constexpr double mix_p1 = 0.75;
inline constexpr double mix_c1 = -0.4;
inline constexpr double mix_c2 = 1.2;
inline constexpr double mix_eps = 0.45;
inline const double mix_a = std::sqrt(3.0 * (1.0 - 0.48 - mix_eps * mix_eps));
inline constexpr double stu_q = 0.7;
inline const double stu_s1 = std::sqrt(0.5);
inline const double stu_s2 = std::sqrt(13.0 / 6.0);
} // namespace base_params

struct ChainConfig {
    double T = 1.0;
    int N = 16; // macro steps
    int n = 2;  // micro aggregation count per macro step
    BaseDist base = BaseDist::gaussian;
    std::uint64_t seed = 0;

    double h() const { return T / N; }
    double gamma_n() const { return 1.0 + 1.0 / n; }
    void validate() const;
};

// Covariance of the aggregated pair (xi^(1), xi^(2)), as a 2x2 scalar-block
// matrix: [[1, (n+1)/(2n)], [(n+1)/(2n), (2n^2+3n+1)/(6n^2)]].
// Singular exactly at n = 1.
Mat innovation_covariance(int n);

struct InnovationPair {
    Vec eta1;
    Vec eta2;
};

double sample_base(BaseDist base, CounterRng& rng);

// Aggregates n micro variables per coordinate:
//   xi^(1) = n^{-1/2} sum_k xi_k
//   xi^(2) = n^{-1/2} sum_k (1 - (k-1)/n) xi_k.
// The micro source is injectable so tests can feed impulses.
InnovationPair aggregate_innovation(int n, int d, const std::function<double()>& micro);
InnovationPair sample_innovation(int n, BaseDist base, int d, CounterRng& rng);

// Macro-scale chain step:
//   X+ = X + b h + sigma sqrt(h) eta1
//   Y+ = Y + (X + (gamma_n/2) b h + sigma sqrt(h) eta2) h.
PhasePoint simulate_chain(const ModelSpec& model, const ChainConfig& cfg,
                          const PhasePoint& start, CounterRng& rng,
                          std::vector<PhasePoint>* path = nullptr);

// Innovation-pair density per coordinate (2 arguments).
using QnDensity = std::function<double(double, double)>;
QnDensity qn_gaussian(int n);

// One chain step transition density
//   q_n(u, v) / (det a(z) h^{2d}),
//   u = sigma^{-1}(z) (x'-x-b h)/sqrt(h),
//   v = sigma^{-1}(z) (y'-y-(x + gamma_n b h / 2) h)/h^{3/2}.
double one_step_density(const ModelSpec& model, double h, int n, const PhasePoint& z,
                        const PhasePoint& zp, const QnDensity& qn);

struct FrozenChainMoments {
    Vec mean;  // m_j, length 2d
    Mat vj;    // normalized covariance of the scaled pair (2d x 2d)
    Mat cov;   // diag(rho, rho^3)-scaled covariance
    double gamma_nj = 0.0;
};

// Exact finite-sum moments of the frozen chain after j steps of size h,
// coefficients frozen at `freeze` and transported against `anchor_time`.
FrozenChainMoments frozen_chain_moments(const ModelSpec& model, int j, double h,
                                        const PhasePoint& start, const PhasePoint& freeze,
                                        double anchor_time, int n);

// Gaussian-base frozen chain transition density over j steps.
double frozen_chain_density(const ModelSpec& model, int j, double h,
                            const PhasePoint& start, const PhasePoint& freeze,
                            double anchor_time, int n);

struct KdeEstimate {
    double value = 0.0;
    double se = 0.0;
};

// Product-Gaussian kernel density estimates of the chain endpoint law.
DensityGrid chain_density_kde(const ModelSpec& model, const ChainConfig& cfg,
                              const PhasePoint& start, const GridSpec& grid,
                              long long samples, double bx, double by);
std::vector<KdeEstimate> chain_kde_at_points(const ModelSpec& model, const ChainConfig& cfg,
                                             const PhasePoint& start,
                                             const std::vector<PhasePoint>& points,
                                             long long samples, double bx, double by);

// Rule-of-thumb bandwidths honoring the two scales sqrt(T), T^{3/2}.
void default_bandwidths(double T, double& bx, double& by);

// Discrete series p_h(t_N) = sum_r p~_h (x)_h H_h^(r); gaussian base, d = 1,
// N small. Exact identity up to quadrature, used as a cross-validation path.
// The evaluator caches the per-order lattices so a grid of targets shares the
// heavy build.
class DiscreteParametrixEvaluator {
  public:
    DiscreteParametrixEvaluator(const ModelSpec& model, const ChainConfig& cfg,
                                const PhasePoint& z0, const QuadratureSpec& quad);
    ~DiscreteParametrixEvaluator();
    DiscreteParametrixEvaluator(const DiscreteParametrixEvaluator&) = delete;
    DiscreteParametrixEvaluator& operator=(const DiscreteParametrixEvaluator&) = delete;

    SeriesResult eval(const PhasePoint& zp) const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

SeriesResult discrete_parametrix_density(const ModelSpec& model, const ChainConfig& cfg,
                                         const PhasePoint& z0, const PhasePoint& zp,
                                         const QuadratureSpec& quad);

enum class RateReference { parametrix, euler_oracle };

struct RateSample {
    int N = 0;
    double h = 0.0;
    int point = 0;
    double p_chain = 0.0, se_chain = 0.0;
    double p_ref = 0.0, se_ref = 0.0;
    double diff = 0.0, se = 0.0;
    double weight_fn = 0.0; // theorem weight at this point
};

struct RateReport {
    std::vector<RateSample> samples;
    double slope = 0.0;
    double slope_se = 0.0;
    std::vector<double> intercepts; // one per test point
    double bx = 0.0, by = 0.0;
    int r_max_ref = 0;
};

struct RateOptions {
    std::vector<int> N_ladder = {8, 16, 32, 64};
    int n = 2;
    BaseDist base = BaseDist::scaled_uniform_mixture;
    long long samples = 10'000'000;
    RateReference reference = RateReference::parametrix;
    int r_max_ref = 5;
    double bx = 0.0, by = 0.0; // 0 = rule of thumb
    std::uint64_t seed = 1;
    int euler_micro_steps = 1000;
};

// Measures |p_h - p| at the test points across the N ladder and fits a
// weighted common slope in log h. Both densities are smoothed by the same
// product kernel so the comparison is bias-matched.
RateReport lil_rate_experiment(const ModelSpec& model, double T, const PhasePoint& z0,
                               const std::vector<PhasePoint>& points,
                               const RateOptions& opt, const QuadratureSpec& quad);

} // namespace kolmo
