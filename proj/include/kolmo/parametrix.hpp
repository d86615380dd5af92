#pragma once

#include <memory>
#include <vector>

#include "kolmo/density_grid.hpp"
#include "kolmo/gaussian.hpp"
#include "kolmo/model.hpp"
#include "kolmo/quadrature.hpp"

namespace kolmo {

// Correction kernel H(t, z, z') = (L - L~) p~(t, z, z'). The y-derivative
// terms of the two generators cancel, leaving
//   1/2 Tr[(a(z) - a(x', y'-x't)) D_x^2 p~] + <b(z) - b(z'), grad_x p~>.
double kernel_H(const ModelSpec& model, double t, const PhasePoint& z,
                const PhasePoint& zp, const QuadratureSpec& quad);

// One space-time convolution step against the kernel:
//   (prev (x) H)(t, z0 -> z1) = int_0^t du int prev(u, w) H(t-u, w, z1) dw.
// prev supplies the previous-order term started from z0; the time rule
// flattens the (t-u)^{-1/2} blow-up of H and the space nodes adapt to the
// product of the two Gaussian envelopes.
double convolve_term(const ModelSpec& model,
                     const std::function<double(double, const PhasePoint&)>& prev,
                     double t, const PhasePoint& z0, const PhasePoint& z1,
                     const QuadratureSpec& quad);

// Tail majorant sum_{r >= r_from} C^{r+1} t^{r/2} pi^{r/2} / Gamma((r+2)/2),
// the telescoped Beta-product bound on the series remainder (in units of the
// Gaussian envelope).
double series_tail_bound(double C_fit, double t, int r_from);

struct SeriesResult {
    double value = 0.0;
    std::vector<double> terms;            // per-order contributions, r = 0..r_max
    double tail_bound = 0.0;              // envelope-scaled remainder bound past r_max
    std::vector<double> order_defects;    // per-order quadrature self-consistency
    double c_env = 0.0;                   // envelope exponent constant used
    double C_fit = 0.0;                   // max of the two fitted constants below
    double C_kernel = 0.0;                // fitted sup |H| sqrt(s) / hat_p
    double C_density = 0.0;               // fitted sup p~ / hat_p
    double out_of_box_fraction = 0.0;     // lattice lookups that fell outside the box
};

// Series evaluator for fixed (t, z0). Order-r terms are iterated space-time
// convolutions; intermediate orders are cached on a standardized lattice so a
// grid of targets shares the heavy work.
class ParametrixEvaluator {
  public:
    ParametrixEvaluator(const ModelSpec& model, double t, const PhasePoint& z0,
                        int r_max, const QuadratureSpec& quad);
    ~ParametrixEvaluator();

    ParametrixEvaluator(const ParametrixEvaluator&) = delete;
    ParametrixEvaluator& operator=(const ParametrixEvaluator&) = delete;

    SeriesResult eval(const PhasePoint& z1, bool with_defects = true) const;

    double c_env() const;
    double C_fit() const;
    double t() const;
    int r_max() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

SeriesResult parametrix_density(const ModelSpec& model, double t, const PhasePoint& z0,
                                const PhasePoint& z1, int r_max,
                                const QuadratureSpec& quad);

struct BoundReport {
    double c = 0.0;
    double C_upper = 0.0;       // max p / hat_p over the fitted region
    double argmax_x = 0.0, argmax_y = 0.0;
    double C0 = 1.0;            // compact-set level for the lower clause
    double lower_min_ratio = 0.0; // min p / hat_{1/c} over {form <= C0}
    int lower_nodes = 0;
    double form_cap = 18.0;     // nodes beyond this quadratic-form level are
                                // below the quadrature dynamic range and are
                                // excluded from the fit
    int capped_nodes = 0;
};

// Fits envelope constants from a grid of density values rooted at z0.
BoundReport gaussian_bound_check(const ModelSpec& model, double t, const PhasePoint& z0,
                                 const DensityGrid& grid, double c, double C0 = 1.0,
                                 double form_cap = 18.0);

} // namespace kolmo
