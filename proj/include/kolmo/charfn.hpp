#pragma once

#include <complex>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kolmo/chain.hpp"
#include "kolmo/density_grid.hpp"

namespace kolmo {

// Scalar base characteristic function (d = 1) in closed form, so decay
// hypotheses are checkable analytically per base.
struct BaseCharFn {
    std::string name;
    std::function<std::complex<double>(double)> phi;
    // Moment order documented for the envelope reports: S = 4 d S' + 4 with
    // S' = 1, d = 1. Every built-in base has all moments finite.
    int documented_S = 8;
};

BaseCharFn base_charfn(BaseDist base);

// phi_n(tau1, tau2) = prod_{j=0}^{n-1} phi((tau1 + (1 - j/n) tau2)/sqrt(n)),
// the characteristic function of the aggregated innovation pair.
std::complex<double> phi_n(const BaseCharFn& base, int n, double tau1, double tau2);

struct DecayReport {
    double C_n = 0.0;        // max |phi_n| (1 + |tau|^{2d+1}) over the lattice
    double attained_tau = 0.0;
    bool finite = true;      // max not attained on the lattice boundary
    double radius = 0.0;
};

DecayReport decay_check(const BaseCharFn& base, int n, double radius, int nodes);

struct CharFnTable {
    int n = 0;
    std::string base;
    double radius = 0.0; // lattice [-radius, radius]^2
    int nodes = 0;       // per axis
    std::vector<std::complex<double>> values;

    double spacing() const { return nodes > 1 ? 2.0 * radius / (nodes - 1) : 0.0; }
    double tau_at(int i) const { return -radius + i * spacing(); }
    const std::complex<double>& at(int i, int j) const {
        return values[static_cast<size_t>(i) * nodes + j];
    }
};

CharFnTable tabulate_phi_n(const BaseCharFn& base, int n, double radius, int nodes);

// Characteristic function of the constant-coefficient micro walk
//   X = sqrt(hm) sum xi_k, Y = hm^{3/2} sum (M - k + 1) xi_k
// after M steps of size hm; the macro chain endpoint law for constant models.
std::complex<double> walk_charfn(const BaseCharFn& base, int steps, double micro_h,
                                 double tau1, double tau2);

struct DensityTable {
    GridSpec spec; // over (theta1, theta2)
    std::vector<double> f;
    std::vector<double> f_renormalized; // mass-corrected variant
    double mass = 0.0;
    double min_value = 0.0;
    double max_imag_residue = 0.0;

    double at(int i, int j) const { return f[static_cast<size_t>(i) * spec.ny + j]; }
};

// Fourier inversion of a tabulated charfn by trapezoid sums on the truncated
// lattice. Negative lobes are recorded, not clipped; the renormalized copy is
// what density consumers should read.
DensityTable invert_density(const CharFnTable& table, const GridSpec& out);
DensityTable invert_charfn_fn(const std::function<std::complex<double>(double, double)>& fn,
                              double radius, int nodes, const GridSpec& out);

// Bilinear lookup, zero outside the table.
double density_table_lookup(const DensityTable& table, double th1, double th2);

QnDensity qn_from_table(std::shared_ptr<const DensityTable> table);

// Fitted envelope constant: max over the grid and derivative orders <= 4
// (finite differences per axis) of |D f| (1 + |theta|^{S + 2d + 1}).
double fit_envelope_constant(const DensityTable& table, int S);

std::string charfn_csv(const CharFnTable& table, int stride = 1);
void write_charfn_csv(const CharFnTable& table, const std::string& path);

} // namespace kolmo
