#include "kolmo/charfn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "kolmo/errors.hpp"

namespace kolmo {

namespace {

double sinc(double x) {
    if (std::abs(x) < 1e-6) return 1.0 - x * x / 6.0;
    return std::sin(x) / x;
}

} // namespace

BaseCharFn base_charfn(BaseDist base) {
    using namespace base_params;
    BaseCharFn out;
    out.name = to_string(base);
    switch (base) {
        case BaseDist::gaussian:
            out.phi = [](double tau) {
                return std::complex<double>(std::exp(-0.5 * tau * tau), 0.0);
            };
            break;
        case BaseDist::scaled_uniform_mixture:
            // X = C + U[-a, a] + eps Z with centers c1, c2; the factors are
            // independent, so phi is a plain product. The mollifier supplies
            // super-polynomial decay on top of the sinc falloff.
            out.phi = [](double tau) {
                const std::complex<double> centers =
                    mix_p1 * std::exp(std::complex<double>(0.0, tau * mix_c1)) +
                    (1.0 - mix_p1) * std::exp(std::complex<double>(0.0, tau * mix_c2));
                return centers * sinc(mix_a * tau) *
                       std::exp(-0.5 * mix_eps * mix_eps * tau * tau);
            };
            break;
        case BaseDist::student_like_smoothed:
            out.phi = [](double tau) {
                const double t2 = tau * tau;
                return std::complex<double>(
                    stu_q * std::exp(-0.5 * stu_s1 * stu_s1 * t2) +
                        (1.0 - stu_q) * std::exp(-0.5 * stu_s2 * stu_s2 * t2),
                    0.0);
            };
            break;
    }
    return out;
}

std::complex<double> phi_n(const BaseCharFn& base, int n, double tau1, double tau2) {
    if (n < 1) throw argument_error("phi_n: n >= 1");
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    std::complex<double> prod(1.0, 0.0);
    for (int j = 0; j < n; ++j) {
        const double arg = (tau1 + (1.0 - static_cast<double>(j) / n) * tau2) * inv_sqrt_n;
        prod *= base.phi(arg);
    }
    return prod;
}

DecayReport decay_check(const BaseCharFn& base, int n, double radius, int nodes) {
    if (!(radius > 0.0) || nodes < 8) throw argument_error("decay_check: bad lattice");
    DecayReport rep;
    rep.radius = radius;
    double boundary_max = 0.0;
    for (int i = 0; i < nodes; ++i) {
        const double t1 = -radius + 2.0 * radius * i / (nodes - 1.0);
        for (int j = 0; j < nodes; ++j) {
            const double t2 = -radius + 2.0 * radius * j / (nodes - 1.0);
            const double r = std::sqrt(t1 * t1 + t2 * t2);
            const double v = std::abs(phi_n(base, n, t1, t2)) * (1.0 + r * r * r);
            if (v > rep.C_n) {
                rep.C_n = v;
                rep.attained_tau = r;
            }
            if (std::max(std::abs(t1), std::abs(t2)) >= 0.95 * radius)
                boundary_max = std::max(boundary_max, v);
        }
    }
    rep.finite = boundary_max < rep.C_n;
    return rep;
}

CharFnTable tabulate_phi_n(const BaseCharFn& base, int n, double radius, int nodes) {
    if (nodes < 16) throw argument_error("tabulate_phi_n: nodes >= 16");
    CharFnTable t;
    t.n = n;
    t.base = base.name;
    t.radius = radius;
    t.nodes = nodes;
    t.values.resize(static_cast<size_t>(nodes) * nodes);
    for (int i = 0; i < nodes; ++i) {
        const double t1 = t.tau_at(i);
        for (int j = 0; j < nodes; ++j)
            t.values[static_cast<size_t>(i) * nodes + j] = phi_n(base, n, t1, t.tau_at(j));
    }
    return t;
}

std::complex<double> walk_charfn(const BaseCharFn& base, int steps, double micro_h,
                                 double tau1, double tau2) {
    const double sq = std::sqrt(micro_h);
    const double y_scale = micro_h * sq;
    std::complex<double> prod(1.0, 0.0);
    for (int k = 1; k <= steps; ++k) {
        const double arg = sq * tau1 + y_scale * (steps - k + 1.0) * tau2;
        prod *= base.phi(arg);
    }
    return prod;
}

DensityTable invert_density(const CharFnTable& table, const GridSpec& out) {
    out.validate();
    const int nt = table.nodes;
    if (nt < 16) throw argument_error("invert_density: empty charfn table");
    // Truncation sanity: the integrand must have died off at the lattice edge.
    double edge = 0.0;
    for (int i = 0; i < nt; ++i) {
        edge = std::max({edge, std::abs(table.at(i, 0)), std::abs(table.at(i, nt - 1)),
                         std::abs(table.at(0, i)), std::abs(table.at(nt - 1, i))});
    }
    if (edge > 1e-5)
        throw quadrature_error("invert_density: charfn not decayed at lattice edge (" +
                               std::to_string(edge) + ")");

    const double dtau = table.spacing();
    std::vector<double> wt(static_cast<size_t>(nt), dtau);
    wt.front() *= 0.5;
    wt.back() *= 0.5;

    // Stage 1: transform over tau1 for every tau2 row.
    std::vector<std::complex<double>> g(static_cast<size_t>(out.nx) * nt);
    for (int a = 0; a < out.nx; ++a) {
        const double th1 = out.x_at(a);
        std::vector<std::complex<double>> phase(static_cast<size_t>(nt));
        for (int i = 0; i < nt; ++i)
            phase[i] = std::exp(std::complex<double>(0.0, -th1 * table.tau_at(i))) * wt[i];
        for (int j = 0; j < nt; ++j) {
            std::complex<double> acc(0.0, 0.0);
            for (int i = 0; i < nt; ++i) acc += phase[i] * table.at(i, j);
            g[static_cast<size_t>(a) * nt + j] = acc;
        }
    }

    // Stage 2: transform over tau2.
    DensityTable dt;
    dt.spec = out;
    dt.f.assign(static_cast<size_t>(out.nodes()), 0.0);
    dt.min_value = 1e300;
    const double scale = 1.0 / (4.0 * M_PI * M_PI);
    for (int b = 0; b < out.ny; ++b) {
        const double th2 = out.y_at(b);
        std::vector<std::complex<double>> phase(static_cast<size_t>(nt));
        for (int j = 0; j < nt; ++j)
            phase[j] = std::exp(std::complex<double>(0.0, -th2 * table.tau_at(j))) * wt[j];
        for (int a = 0; a < out.nx; ++a) {
            std::complex<double> acc(0.0, 0.0);
            const size_t base = static_cast<size_t>(a) * nt;
            for (int j = 0; j < nt; ++j) acc += phase[j] * g[base + j];
            const double v = scale * acc.real();
            dt.f[static_cast<size_t>(a) * out.ny + b] = v;
            dt.min_value = std::min(dt.min_value, v);
            dt.max_imag_residue = std::max(dt.max_imag_residue, scale * std::abs(acc.imag()));
        }
    }

    DensityGrid mass_view = make_grid(out);
    mass_view.value = dt.f;
    dt.mass = mass_view.integrate();
    dt.f_renormalized = dt.f;
    if (dt.mass > 0.0)
        for (double& v : dt.f_renormalized) v /= dt.mass;
    return dt;
}

DensityTable invert_charfn_fn(const std::function<std::complex<double>(double, double)>& fn,
                              double radius, int nodes, const GridSpec& out) {
    CharFnTable t;
    t.n = 0;
    t.base = "custom";
    t.radius = radius;
    t.nodes = nodes;
    t.values.resize(static_cast<size_t>(nodes) * nodes);
    for (int i = 0; i < nodes; ++i)
        for (int j = 0; j < nodes; ++j)
            t.values[static_cast<size_t>(i) * nodes + j] = fn(t.tau_at(i), t.tau_at(j));
    return invert_density(t, out);
}

double density_table_lookup(const DensityTable& table, double th1, double th2) {
    const GridSpec& s = table.spec;
    const double dx = s.cell_dx(), dy = s.cell_dy();
    if (th1 < s.x_min || th1 > s.x_max || th2 < s.y_min || th2 > s.y_max) return 0.0;
    const int i = std::min(s.nx - 2, std::max(0, static_cast<int>((th1 - s.x_min) / dx)));
    const int j = std::min(s.ny - 2, std::max(0, static_cast<int>((th2 - s.y_min) / dy)));
    const double fx = (th1 - s.x_at(i)) / dx;
    const double fy = (th2 - s.y_at(j)) / dy;
    auto v = [&](int a, int b) {
        return table.f_renormalized[static_cast<size_t>(a) * s.ny + b];
    };
    return (1.0 - fx) * (1.0 - fy) * v(i, j) + fx * (1.0 - fy) * v(i + 1, j) +
           (1.0 - fx) * fy * v(i, j + 1) + fx * fy * v(i + 1, j + 1);
}

QnDensity qn_from_table(std::shared_ptr<const DensityTable> table) {
    if (!table) throw argument_error("qn_from_table: null table");
    return [table](double e1, double e2) { return density_table_lookup(*table, e1, e2); };
}

double fit_envelope_constant(const DensityTable& table, int S) {
    const GridSpec& s = table.spec;
    const double dx = s.cell_dx(), dy = s.cell_dy();
    const int power = S + 3; // S + 2d + 1, d = 1
    double c_fit = 0.0;
    auto f = [&](int i, int j) { return table.at(i, j); };
    for (int i = 2; i < s.nx - 2; ++i) {
        for (int j = 2; j < s.ny - 2; ++j) {
            const double r = std::hypot(s.x_at(i), s.y_at(j));
            const double env = 1.0 + std::pow(r, power);
            double dmax = std::abs(f(i, j));
            // axis-aligned central differences through order 4
            dmax = std::max(dmax, std::abs((f(i + 1, j) - f(i - 1, j)) / (2 * dx)));
            dmax = std::max(dmax, std::abs((f(i, j + 1) - f(i, j - 1)) / (2 * dy)));
            dmax = std::max(dmax,
                            std::abs((f(i + 1, j) - 2 * f(i, j) + f(i - 1, j)) / (dx * dx)));
            dmax = std::max(dmax,
                            std::abs((f(i, j + 1) - 2 * f(i, j) + f(i, j - 1)) / (dy * dy)));
            dmax = std::max(dmax, std::abs((f(i + 2, j) - 2 * f(i + 1, j) + 2 * f(i - 1, j) -
                                            f(i - 2, j)) /
                                           (2 * dx * dx * dx)));
            dmax = std::max(dmax, std::abs((f(i, j + 2) - 2 * f(i, j + 1) + 2 * f(i, j - 1) -
                                            f(i, j - 2)) /
                                           (2 * dy * dy * dy)));
            dmax = std::max(dmax,
                            std::abs((f(i + 2, j) - 4 * f(i + 1, j) + 6 * f(i, j) -
                                      4 * f(i - 1, j) + f(i - 2, j)) /
                                     (dx * dx * dx * dx)));
            dmax = std::max(dmax,
                            std::abs((f(i, j + 2) - 4 * f(i, j + 1) + 6 * f(i, j) -
                                      4 * f(i, j - 1) + f(i, j - 2)) /
                                     (dy * dy * dy * dy)));
            c_fit = std::max(c_fit, dmax * env);
        }
    }
    return c_fit;
}

std::string charfn_csv(const CharFnTable& table, int stride) {
    if (stride < 1) stride = 1;
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "# charfn n=%d base=%s radius=%.17g nodes=%d stride=%d\n",
                  table.n, table.base.c_str(), table.radius, table.nodes, stride);
    out += buf;
    out += "tau1,tau2,re,im\n";
    for (int i = 0; i < table.nodes; i += stride)
        for (int j = 0; j < table.nodes; j += stride) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", table.tau_at(i),
                          table.tau_at(j), table.at(i, j).real(), table.at(i, j).imag());
            out += buf;
        }
    return out;
}

void write_charfn_csv(const CharFnTable& table, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw error("cannot open for write: " + path);
    os << charfn_csv(table);
    if (!os) throw error("write failed: " + path);
}

} // namespace kolmo
