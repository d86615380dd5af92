#include "kolmo/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

#include "kolmo/chain.hpp"
#include "kolmo/charfn.hpp"
#include "kolmo/errors.hpp"
#include "kolmo/gaussian.hpp"
#include "kolmo/model.hpp"
#include "kolmo/oracle.hpp"
#include "kolmo/parametrix.hpp"

namespace kolmo {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Strict config access

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) throw config_error(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw config_error(where + ": unknown key '" + it.key() + "'");
    }
}

const json& section(const json& cfg, const char* key) {
    static const json empty = json::object();
    if (!cfg.contains(key)) return empty;
    if (!cfg.at(key).is_object())
        throw config_error(std::string("config: '") + key + "' must be an object");
    return cfg.at(key);
}

double jnum(const json& j, const char* key, double def, double lo, double hi,
            const std::string& where) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_number()) throw config_error(where + "." + key + ": expected a number");
    const double x = v.get<double>();
    if (!(x >= lo) || !(x <= hi))
        throw config_error(where + "." + key + ": value " + std::to_string(x) +
                           " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return x;
}

long long jint(const json& j, const char* key, long long def, long long lo, long long hi,
               const std::string& where) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_number_integer())
        throw config_error(where + "." + key + ": expected an integer");
    const long long x = v.get<long long>();
    if (x < lo || x > hi)
        throw config_error(where + "." + key + ": value out of range");
    return x;
}

bool jbool(const json& j, const char* key, bool def, const std::string& where) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_boolean()) throw config_error(where + "." + key + ": expected a bool");
    return j.at(key).get<bool>();
}

std::string jstr(const json& j, const char* key, const std::string& def,
                 const std::string& where) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_string()) throw config_error(where + "." + key + ": expected a string");
    return j.at(key).get<std::string>();
}

PhasePoint jpoint(const json& cfg, const char* key, const PhasePoint& def) {
    if (!cfg.contains(key)) return def;
    const json& p = cfg.at(key);
    check_keys(p, {"x", "y"}, key);
    return PhasePoint(jnum(p, "x", 0.0, -1e6, 1e6, key), jnum(p, "y", 0.0, -1e6, 1e6, key));
}

ModelSpec model_from(const json& cfg) {
    const json& m = section(cfg, "model");
    check_keys(m, {"family", "dim", "params", "lambda_min", "lambda_max", "coeff_bound"},
               "model");
    const std::string family = jstr(m, "family", "constant", "model");
    const int dim = static_cast<int>(jint(m, "dim", 1, 1, 4, "model"));
    std::map<std::string, double> params;
    if (m.contains("params")) {
        if (!m.at("params").is_object())
            throw config_error("model.params: expected an object");
        for (auto it = m.at("params").begin(); it != m.at("params").end(); ++it) {
            if (!it.value().is_number())
                throw config_error("model.params." + it.key() + ": expected a number");
            params[it.key()] = it.value().get<double>();
        }
    }
    ModelSpec spec = make_model(family, params, dim);
    spec.lambda_min = jnum(m, "lambda_min", spec.lambda_min, 0.0, 1e6, "model");
    spec.lambda_max = jnum(m, "lambda_max", spec.lambda_max, 0.0, 1e6, "model");
    spec.coeff_bound = jnum(m, "coeff_bound", spec.coeff_bound, 0.0, 1e6, "model");
    return spec;
}

GridSpec grid_from(const json& cfg, const GridSpec& def) {
    const json& g = section(cfg, "grid");
    check_keys(g, {"x_min", "x_max", "nx", "y_min", "y_max", "ny"}, "grid");
    GridSpec s = def;
    s.x_min = jnum(g, "x_min", def.x_min, -1e6, 1e6, "grid");
    s.x_max = jnum(g, "x_max", def.x_max, -1e6, 1e6, "grid");
    s.nx = static_cast<int>(jint(g, "nx", def.nx, 1, 4096, "grid"));
    s.y_min = jnum(g, "y_min", def.y_min, -1e6, 1e6, "grid");
    s.y_max = jnum(g, "y_max", def.y_max, -1e6, 1e6, "grid");
    s.ny = static_cast<int>(jint(g, "ny", def.ny, 1, 4096, "grid"));
    s.validate();
    return s;
}

QuadratureSpec quad_from(const json& cfg, std::uint64_t seed) {
    const json& q = section(cfg, "quadrature");
    check_keys(q, {"time_nodes", "time_rule", "space_nodes_per_dim", "space_rule",
                   "mc_samples"},
               "quadrature");
    QuadratureSpec spec;
    spec.time_nodes = static_cast<int>(jint(q, "time_nodes", 12, 2, 256, "quadrature"));
    spec.space_nodes_per_dim =
        static_cast<int>(jint(q, "space_nodes_per_dim", 8, 2, 64, "quadrature"));
    spec.mc_samples = static_cast<int>(jint(q, "mc_samples", 4096, 100, 10'000'000, "quadrature"));
    const std::string trule = jstr(q, "time_rule", "substitution-w2", "quadrature");
    if (trule == "substitution-w2")
        spec.time_rule = TimeRule::substitution_w2;
    else if (trule == "gauss-jacobi-sqrt-singularity")
        spec.time_rule = TimeRule::gauss_jacobi_sqrt_singularity;
    else
        throw config_error("quadrature.time_rule: unknown rule '" + trule + "'");
    const std::string srule = jstr(q, "space_rule", "gauss-hermite-adapted", "quadrature");
    if (srule == "gauss-hermite-adapted")
        spec.space_rule = SpaceRule::gauss_hermite_adapted;
    else if (srule == "monte-carlo")
        spec.space_rule = SpaceRule::monte_carlo;
    else
        throw config_error("quadrature.space_rule: unknown rule '" + srule + "'");
    spec.seed = seed;
    spec.validate();
    return spec;
}

ChainConfig chain_from(const json& cfg, double T, std::uint64_t seed) {
    const json& c = section(cfg, "chain");
    check_keys(c, {"N", "n", "base"}, "chain");
    ChainConfig cc;
    cc.T = T;
    cc.N = static_cast<int>(jint(c, "N", 16, 1, 1'000'000, "chain"));
    cc.n = static_cast<int>(jint(c, "n", 2, 2, 4096, "chain"));
    cc.base = base_dist_from_string(jstr(c, "base", "gaussian", "chain"));
    cc.seed = seed;
    return cc;
}

struct McOptions {
    long long samples;
    int micro_steps;
    double bx, by;
};

McOptions mc_from(const json& cfg) {
    const json& m = section(cfg, "mc");
    check_keys(m, {"samples", "micro_steps", "bandwidth_x", "bandwidth_y"}, "mc");
    McOptions o;
    o.samples = jint(m, "samples", 1'000'000, 1, 1'000'000'000, "mc");
    o.micro_steps = static_cast<int>(jint(m, "micro_steps", 1000, 1, 1'000'000, "mc"));
    o.bx = jnum(m, "bandwidth_x", 0.0, 0.0, 1e3, "mc");
    o.by = jnum(m, "bandwidth_y", 0.0, 0.0, 1e3, "mc");
    return o;
}

// Grid centered on the frozen mean with k-sigma extents from the frozen
// covariance; the lazy default for density-style experiments.
GridSpec auto_grid(const ModelSpec& model, double T, const PhasePoint& z0, int nx, int ny,
                   double k_sigma) {
    const FrozenKernel fk(model, T, z0);
    const Vec mean = fk.mean(z0);
    const GaussianMoments& mom = fk.moments_blocks();
    const double sdx = std::sqrt(mom.block_xx(0, 0));
    const double sdy = std::sqrt(mom.block_yy(0, 0));
    GridSpec g;
    g.x_min = mean[0] - k_sigma * sdx;
    g.x_max = mean[0] + k_sigma * sdx;
    g.nx = nx;
    g.y_min = mean[1] - k_sigma * sdy;
    g.y_max = mean[1] + k_sigma * sdy;
    g.ny = ny;
    return g;
}

// ---------------------------------------------------------------------------
// Artifact staging

struct Stage {
    std::vector<std::pair<std::string, std::string>> files;
    void add(const std::string& name, std::string content) {
        files.emplace_back(name, std::move(content));
    }
};

std::string fnv1a64_hex(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void atomic_write(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw error("cannot open for write: " + tmp.string());
        os << content;
        if (!os) throw error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string now_iso() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

json grid_json(const GridSpec& g) {
    return json{{"x_min", g.x_min}, {"x_max", g.x_max}, {"nx", g.nx},
                {"y_min", g.y_min}, {"y_max", g.y_max}, {"ny", g.ny}};
}

// ---------------------------------------------------------------------------
// Experiments

json run_validate(const json& cfg, const ModelSpec& model, std::uint64_t seed, Stage& stage,
                  json& constants) {
    const json& v = section(cfg, "validate");
    check_keys(v, {"samples", "hormander_points", "fd_step"}, "validate");
    const int samples = static_cast<int>(jint(v, "samples", 200, 1, 1'000'000, "validate"));
    const int hpoints =
        static_cast<int>(jint(v, "hormander_points", 20, 0, 10'000, "validate"));
    const double fd_step = jnum(v, "fd_step", 1e-5, 1e-10, 1e-2, "validate");

    const ValidationReport rep = validate_model(model, samples, seed);
    int min_rank = 2 * model.dim;
    CounterRng rng(seed, 7);
    for (int k = 0; k < hpoints; ++k) {
        PhasePoint p;
        p.x.resize(static_cast<size_t>(model.dim));
        p.y.resize(static_cast<size_t>(model.dim));
        for (int i = 0; i < model.dim; ++i) {
            p.x[i] = 4.0 * (rng.uniform() - 0.5);
            p.y[i] = 4.0 * (rng.uniform() - 0.5);
        }
        min_rank = std::min(min_rank, hormander_rank(model, p, fd_step));
    }
    json res{{"family", model.family},
             {"samples", rep.samples},
             {"eig_min", rep.eig_min},
             {"eig_max", rep.eig_max},
             {"max_drift_norm", rep.max_drift_norm},
             {"max_sigma_norm", rep.max_sigma_norm},
             {"symmetric", rep.symmetric},
             {"declared_lambda_min", model.lambda_min},
             {"declared_lambda_max", model.lambda_max},
             {"pass", rep.pass},
             {"hormander_min_rank", min_rank},
             {"hormander_expected", 2 * model.dim}};
    constants["eig_min"] = rep.eig_min;
    constants["eig_max"] = rep.eig_max;
    stage.add("validate_result.json", dump(res));
    return res;
}

json run_density(const json& cfg, const ModelSpec& model, std::uint64_t seed, Stage& stage,
                 json& constants) {
    const double T = jnum(cfg, "horizon", 1.0, 1e-9, 1e3, "config");
    const PhasePoint z0 = jpoint(cfg, "z0", PhasePoint(0.0, 0.0));
    const json& s = section(cfg, "series");
    check_keys(s, {"r_max", "envelope_c"}, "series");
    const int r_max = static_cast<int>(jint(s, "r_max", 3, 0, 12, "series"));
    const QuadratureSpec quad = quad_from(cfg, seed);
    const GridSpec grid = grid_from(cfg, auto_grid(model, T, z0, 21, 21, 4.0));

    const ParametrixEvaluator ev(model, T, z0, r_max, quad);
    DensityGrid out = make_grid(grid);
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j)
            out.at(i, j) = ev.eval(PhasePoint(grid.x_at(i), grid.y_at(j)), false).value;
    out.meta["experiment"] = "density";
    out.meta["r_max"] = std::to_string(r_max);

    const PhasePoint center(0.5 * (grid.x_min + grid.x_max), 0.5 * (grid.y_min + grid.y_max));
    const SeriesResult sr = ev.eval(center, true);
    const double mass = out.integrate();
    json res{{"horizon", T},
             {"r_max", r_max},
             {"grid", grid_json(grid)},
             {"mass", mass},
             {"c_env", sr.c_env},
             {"C_fit", sr.C_fit},
             {"center_value", sr.value},
             {"center_terms", sr.terms},
             {"center_tail_bound", sr.tail_bound},
             {"center_order_defects", sr.order_defects}};
    constants["C_fit"] = sr.C_fit;
    constants["mass"] = mass;
    stage.add("density_grid.csv", density_csv(out));
    stage.add("density_result.json", dump(res));
    return res;
}

json run_semigroup(const json& cfg, std::uint64_t seed, Stage& stage, json& constants) {
    const json& sg = section(cfg, "semigroup");
    check_keys(sg, {"c_values", "t_values", "s_fractions"}, "semigroup");
    auto vec_of = [&](const char* key, std::vector<double> def) {
        if (!sg.contains(key)) return def;
        std::vector<double> v;
        for (const auto& e : sg.at(key)) {
            if (!e.is_number()) throw config_error(std::string("semigroup.") + key);
            v.push_back(e.get<double>());
        }
        return v;
    };
    const std::vector<double> cs = vec_of("c_values", {0.5, 1.0, 2.0});
    const std::vector<double> ts = vec_of("t_values", {0.25, 0.5, 1.0});
    const std::vector<double> fr = vec_of("s_fractions", {0.25, 0.5, 0.75});
    const PhasePoint z0 = jpoint(cfg, "z0", PhasePoint(0.0, 0.0));
    const PhasePoint zp = jpoint(cfg, "zp", PhasePoint(0.3, 0.1));
    const QuadratureSpec quad = quad_from(cfg, seed);

    json rows = json::array();
    double max_defect = 0.0;
    bool all_converged = true;
    for (double c : cs)
        for (double t : ts)
            for (double f : fr) {
                const CkDefect d = chapman_kolmogorov_defect(c, 1, f * t, t, z0, zp, quad);
                max_defect = std::max(max_defect, d.defect);
                all_converged = all_converged && d.converged;
                rows.push_back(json{{"c", c},
                                    {"t", t},
                                    {"s", f * t},
                                    {"defect", d.defect},
                                    {"converged", d.converged}});
            }
    json res{{"configurations", rows},
             {"max_defect", max_defect},
             {"all_converged", all_converged}};
    constants["max_defect"] = max_defect;
    stage.add("semigroup_result.json", dump(res));
    return res;
}

json run_bound_check(const json& cfg, const ModelSpec& model, std::uint64_t seed,
                     Stage& stage, json& constants) {
    const double T = jnum(cfg, "horizon", 0.25, 1e-9, 1e3, "config");
    const PhasePoint z0 = jpoint(cfg, "z0", PhasePoint(0.0, 0.0));
    const json& b = section(cfg, "bound");
    check_keys(b, {"c", "C0", "refine", "form_cap"}, "bound");
    const double c = jnum(b, "c", 1.0, 1e-6, 1e3, "bound");
    const double C0 = jnum(b, "C0", 1.0, 1e-6, 1e3, "bound");
    const double form_cap = jnum(b, "form_cap", 18.0, 1.0, 1e6, "bound");
    const bool refine = jbool(b, "refine", true, "bound");
    const json& s = section(cfg, "series");
    check_keys(s, {"r_max", "envelope_c"}, "series");
    const int r_max = static_cast<int>(jint(s, "r_max", 2, 0, 12, "series"));
    const QuadratureSpec quad = quad_from(cfg, seed);
    const GridSpec grid = grid_from(cfg, auto_grid(model, T, z0, 31, 31, 4.0));

    const ParametrixEvaluator ev(model, T, z0, r_max, quad);
    auto fill = [&](const GridSpec& g) {
        DensityGrid dg = make_grid(g);
        for (int i = 0; i < g.nx; ++i)
            for (int j = 0; j < g.ny; ++j)
                dg.at(i, j) = ev.eval(PhasePoint(g.x_at(i), g.y_at(j)), false).value;
        return dg;
    };
    DensityGrid dg = fill(grid);
    const BoundReport rep = gaussian_bound_check(model, T, z0, dg, c, C0, form_cap);
    double stability = 0.0;
    json refined;
    if (refine) {
        GridSpec g2 = grid;
        g2.nx = 2 * grid.nx - 1;
        g2.ny = 2 * grid.ny - 1;
        const DensityGrid dg2 = fill(g2);
        const BoundReport rep2 = gaussian_bound_check(model, T, z0, dg2, c, C0, form_cap);
        stability = std::abs(rep2.C_upper - rep.C_upper) / rep.C_upper;
        refined = json{{"C_upper", rep2.C_upper}, {"grid", grid_json(g2)}};
    }
    dg.meta["experiment"] = "bound-check";
    json res{{"horizon", T},
             {"c", c},
             {"C_upper", rep.C_upper},
             {"argmax", json{{"x", rep.argmax_x}, {"y", rep.argmax_y}}},
             {"C0", C0},
             {"lower_min_ratio", rep.lower_min_ratio},
             {"lower_nodes", rep.lower_nodes},
             {"form_cap", rep.form_cap},
             {"capped_nodes", rep.capped_nodes},
             {"refined", refined},
             {"refinement_stability", stability},
             {"C_fit", ev.C_fit()}};
    constants["C_upper"] = rep.C_upper;
    constants["refinement_stability"] = stability;
    stage.add("bound_grid.csv", density_csv(dg));
    stage.add("bound_result.json", dump(res));
    return res;
}

json run_rate(const json& cfg, const ModelSpec& model, std::uint64_t seed, Stage& stage,
              json& constants) {
    const double T = jnum(cfg, "horizon", 0.5, 1e-9, 1e3, "config");
    const PhasePoint z0 = jpoint(cfg, "z0", PhasePoint(0.0, 0.0));
    const json& r = section(cfg, "rate");
    check_keys(r, {"N_ladder", "points", "reference", "r_max_ref"}, "rate");
    const ChainConfig cc = chain_from(cfg, T, seed);
    const McOptions mc = mc_from(cfg);
    const QuadratureSpec quad = quad_from(cfg, seed);

    RateOptions opt;
    opt.n = cc.n;
    opt.base = cc.base;
    opt.samples = mc.samples;
    opt.seed = seed;
    opt.bx = mc.bx;
    opt.by = mc.by;
    opt.euler_micro_steps = mc.micro_steps;
    opt.r_max_ref = static_cast<int>(jint(r, "r_max_ref", 5, 0, 12, "rate"));
    const std::string ref = jstr(r, "reference", "parametrix", "rate");
    if (ref == "parametrix")
        opt.reference = RateReference::parametrix;
    else if (ref == "oracle")
        opt.reference = RateReference::euler_oracle;
    else
        throw config_error("rate.reference: 'parametrix' or 'oracle'");
    if (r.contains("N_ladder")) {
        opt.N_ladder.clear();
        for (const auto& e : r.at("N_ladder")) opt.N_ladder.push_back(e.get<int>());
    }

    std::vector<PhasePoint> points;
    if (r.contains("points")) {
        for (const auto& p : r.at("points")) {
            check_keys(p, {"x", "y"}, "rate.points");
            points.emplace_back(p.at("x").get<double>(), p.at("y").get<double>());
        }
    } else {
        const FrozenKernel fk(model, T, z0);
        const Vec mean = fk.mean(z0);
        const GaussianMoments& mom = fk.moments_blocks();
        const double sdx = std::sqrt(mom.block_xx(0, 0));
        const double sdy = std::sqrt(mom.block_yy(0, 0));
        points.emplace_back(mean[0], mean[1]);
        points.emplace_back(mean[0] + 0.5 * sdx, mean[1] + 0.5 * sdy);
        points.emplace_back(mean[0] - 0.7 * sdx, mean[1] - 0.4 * sdy);
    }

    const RateReport rep = lil_rate_experiment(model, T, z0, points, opt, quad);

    std::string csv = "N,h,point,p_chain,se_chain,p_ref,se_ref,diff,se,weight_fn,"
                      "diff_normalized\n";
    char buf[320];
    for (const RateSample& s : rep.samples) {
        std::snprintf(buf, sizeof buf,
                      "%d,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.N,
                      s.h, s.point, s.p_chain, s.se_chain, s.p_ref, s.se_ref, s.diff, s.se,
                      s.weight_fn, s.diff / s.weight_fn);
        csv += buf;
    }
    json res{{"horizon", T},
             {"base", to_string(opt.base)},
             {"n", opt.n},
             {"samples", opt.samples},
             {"slope", rep.slope},
             {"slope_se", rep.slope_se},
             {"intercepts", rep.intercepts},
             {"bandwidth_x", rep.bx},
             {"bandwidth_y", rep.by},
             {"reference", ref},
             {"r_max_ref", rep.r_max_ref}};
    constants["slope"] = rep.slope;
    constants["slope_se"] = rep.slope_se;
    stage.add("rate_samples.csv", csv);
    stage.add("rate_result.json", dump(res));
    return res;
}

json run_charfn(const json& cfg, std::uint64_t seed, Stage& stage, json& constants) {
    const json& c = section(cfg, "charfn");
    check_keys(c, {"n", "radius", "nodes", "out_radius", "out_nodes", "table_stride",
                   "decay_nodes"},
               "charfn");
    const int n = static_cast<int>(jint(c, "n", 2, 1, 64, "charfn"));
    const double radius = jnum(c, "radius", 60.0, 1.0, 1e4, "charfn");
    const int nodes = static_cast<int>(jint(c, "nodes", 481, 16, 4096, "charfn"));
    const double out_radius = jnum(c, "out_radius", 8.0, 0.5, 1e3, "charfn");
    const int out_nodes = static_cast<int>(jint(c, "out_nodes", 81, 8, 1024, "charfn"));
    const int stride = static_cast<int>(jint(c, "table_stride", 8, 1, 64, "charfn"));
    const int decay_nodes = static_cast<int>(jint(c, "decay_nodes", 201, 8, 4096, "charfn"));
    const ChainConfig cc = chain_from(cfg, 1.0, seed);
    const BaseCharFn base = base_charfn(cc.base);

    const DecayReport decay = decay_check(base, n, radius, decay_nodes);
    const CharFnTable table = tabulate_phi_n(base, n, radius, nodes);
    GridSpec out;
    out.x_min = -out_radius;
    out.x_max = out_radius;
    out.nx = out_nodes;
    out.y_min = -out_radius;
    out.y_max = out_radius;
    out.ny = out_nodes;
    const DensityTable dens = invert_density(table, out);

    // Second moments of the inverted density against the aggregation formula.
    double m11 = 0.0, m12 = 0.0, m22 = 0.0;
    {
        DensityGrid g = make_grid(out);
        DensityGrid gxx = make_grid(out), gxy = make_grid(out), gyy = make_grid(out);
        for (int i = 0; i < out.nx; ++i)
            for (int j = 0; j < out.ny; ++j) {
                const double f = dens.f_renormalized[static_cast<size_t>(i) * out.ny + j];
                const double t1 = out.x_at(i), t2 = out.y_at(j);
                gxx.at(i, j) = t1 * t1 * f;
                gxy.at(i, j) = t1 * t2 * f;
                gyy.at(i, j) = t2 * t2 * f;
                g.at(i, j) = f;
            }
        m11 = gxx.integrate();
        m12 = gxy.integrate();
        m22 = gyy.integrate();
    }
    const Mat icov = innovation_covariance(n);
    const double env_C = fit_envelope_constant(dens, base.documented_S);

    DensityGrid dens_grid = make_grid(out);
    dens_grid.value = dens.f;
    dens_grid.meta["experiment"] = "charfn";
    dens_grid.meta["n"] = std::to_string(n);
    dens_grid.meta["base"] = base.name;

    json res{{"n", n},
             {"base", base.name},
             {"lattice", json{{"radius", radius}, {"nodes", nodes}}},
             {"C_n", decay.C_n},
             {"decay_attained_tau", decay.attained_tau},
             {"decay_finite", decay.finite},
             {"mass", dens.mass},
             {"min_value", dens.min_value},
             {"max_imag_residue", dens.max_imag_residue},
             {"moments", json{{"m11", m11}, {"m12", m12}, {"m22", m22}}},
             {"moments_expected",
              json{{"m11", icov(0, 0)}, {"m12", icov(0, 1)}, {"m22", icov(1, 1)}}},
             {"envelope_C", env_C},
             {"documented_S", base.documented_S}};
    constants["C_n"] = decay.C_n;
    constants["mass"] = dens.mass;
    constants["envelope_C"] = env_C;
    stage.add("charfn_table.csv", charfn_csv(table, stride));
    stage.add("charfn_density.csv", density_csv(dens_grid));
    stage.add("charfn_result.json", dump(res));
    return res;
}

json run_asian(const json& cfg, const ModelSpec& model, std::uint64_t seed, Stage& stage,
               json& constants) {
    const double T = jnum(cfg, "horizon", 1.0, 1e-9, 1e3, "config");
    const json& a = section(cfg, "asian");
    check_keys(a, {"K"}, "asian");
    const double K = jnum(a, "K", 0.5, -1e6, 1e6, "asian");
    const McOptions mc = mc_from(cfg);
    ChainConfig cc = chain_from(cfg, T, seed);

    const ProbabilityEstimate pe = digital_asian_probability(
        model, T, K, mc.samples, AsianEngine::euler, cc, mc.micro_steps, seed);
    const ProbabilityEstimate pc = digital_asian_probability(
        model, T, K, mc.samples, AsianEngine::macro_chain, cc, mc.micro_steps, seed + 1);
    const double diff = std::abs(pe.p - pc.p);
    const double comb_se = std::sqrt(pe.se * pe.se + pc.se * pc.se);
    json res{{"horizon", T},
             {"K", K},
             {"euler", json{{"p", pe.p}, {"se", pe.se}, {"samples", pe.samples}}},
             {"macro_chain", json{{"p", pc.p}, {"se", pc.se}, {"samples", pc.samples}}},
             {"chain", json{{"N", cc.N}, {"n", cc.n}, {"base", to_string(cc.base)}}},
             {"diff", diff},
             {"combined_se", comb_se},
             {"sigma_distance", comb_se > 0.0 ? diff / comb_se : 0.0}};
    constants["asian_euler_p"] = pe.p;
    constants["asian_chain_p"] = pc.p;
    stage.add("asian_result.json", dump(res));
    return res;
}

json run_discrete(const json& cfg, const ModelSpec& model, std::uint64_t seed, Stage& stage,
                  json& constants) {
    const double T = jnum(cfg, "horizon", 1.0, 1e-9, 1e3, "config");
    const PhasePoint z0 = jpoint(cfg, "z0", PhasePoint(0.0, 0.0));
    ChainConfig cc = chain_from(cfg, T, seed);
    if (cc.N > 8) throw config_error("discrete-parametrix: chain.N must be <= 8");
    const QuadratureSpec quad = quad_from(cfg, seed);
    const McOptions mc = mc_from(cfg);
    const json& d = section(cfg, "discrete");
    check_keys(d, {"points"}, "discrete");

    std::vector<PhasePoint> points;
    if (d.contains("points")) {
        for (const auto& p : d.at("points")) {
            check_keys(p, {"x", "y"}, "discrete.points");
            points.emplace_back(p.at("x").get<double>(), p.at("y").get<double>());
        }
    } else {
        const FrozenKernel fk(model, T, z0);
        const Vec mean = fk.mean(z0);
        const GaussianMoments& mom = fk.moments_blocks();
        const double sdx = std::sqrt(mom.block_xx(0, 0));
        const double sdy = std::sqrt(mom.block_yy(0, 0));
        for (int i = -1; i <= 1; ++i)
            for (int j = -1; j <= 1; ++j)
                points.emplace_back(mean[0] + 0.6 * i * sdx, mean[1] + 0.6 * j * sdy);
    }

    double bx = mc.bx, by = mc.by;
    if (!(bx > 0.0) || !(by > 0.0)) {
        default_bandwidths(T, bx, by);
        bx *= 0.6;
        by *= 0.6;
    }
    const std::vector<KdeEstimate> kde =
        chain_kde_at_points(model, cc, z0, points, mc.samples, bx, by);

    const Rule1D& gh = gauss_hermite_ref(8);
    const DiscreteParametrixEvaluator dev(model, cc, z0, quad);
    json rows = json::array();
    std::string csv = "x,y,series,kde,kde_se,z_score\n";
    double max_z = 0.0;
    char buf[200];
    for (size_t p = 0; p < points.size(); ++p) {
        // Kernel-smoothed series value, matching the KDE's expectation.
        double smoothed = 0.0;
        for (int i = 0; i < gh.size(); ++i)
            for (int j = 0; j < gh.size(); ++j) {
                const PhasePoint w(points[p].x[0] + std::sqrt(2.0) * bx * gh.x[i],
                                   points[p].y[0] + std::sqrt(2.0) * by * gh.x[j]);
                smoothed += gh.w[i] * gh.w[j] / M_PI * dev.eval(w).value;
            }
        const double z = kde[p].se > 0.0 ? std::abs(smoothed - kde[p].value) / kde[p].se : 0.0;
        max_z = std::max(max_z, z);
        rows.push_back(json{{"x", points[p].x[0]},
                            {"y", points[p].y[0]},
                            {"series", smoothed},
                            {"kde", kde[p].value},
                            {"kde_se", kde[p].se},
                            {"z", z}});
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      points[p].x[0], points[p].y[0], smoothed, kde[p].value, kde[p].se, z);
        csv += buf;
    }
    json res{{"horizon", T},
             {"N", cc.N},
             {"n", cc.n},
             {"points", rows},
             {"max_z", max_z},
             {"bandwidth_x", bx},
             {"bandwidth_y", by},
             {"samples", mc.samples}};
    constants["max_z"] = max_z;
    stage.add("discrete_samples.csv", csv);
    stage.add("discrete_result.json", dump(res));
    return res;
}

json run_hoelder(const json& cfg, const ModelSpec& model, std::uint64_t seed, Stage& stage,
                 json& constants) {
    const double T = jnum(cfg, "horizon", 0.3, 1e-9, 1e3, "config");
    const PhasePoint z0 = jpoint(cfg, "z0", PhasePoint(0.0, 0.0));
    const json& s = section(cfg, "series");
    check_keys(s, {"r_max", "envelope_c"}, "series");
    const int r_max = static_cast<int>(jint(s, "r_max", 3, 0, 12, "series"));
    const QuadratureSpec quad = quad_from(cfg, seed);
    const GridSpec grid = grid_from(cfg, auto_grid(model, T, z0, 41, 41, 5.0));

    const ParametrixEvaluator ev(model, T, z0, r_max, quad);
    DensityGrid dg = make_grid(grid);
    double min_value = 1e300;
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j) {
            const double v = ev.eval(PhasePoint(grid.x_at(i), grid.y_at(j)), false).value;
            dg.at(i, j) = v;
            min_value = std::min(min_value, v);
        }
    dg.meta["experiment"] = "hoelder-smoke";
    const double mass = dg.integrate();
    const SeriesResult sr = ev.eval(PhasePoint(z0.x[0], z0.y[0] + z0.x[0] * T), true);
    json res{{"horizon", T},
             {"r_max", r_max},
             {"smoothness", model.smoothness == Smoothness::hoelder ? "hoelder" : "lipschitz"},
             {"mass", mass},
             {"mass_error", std::abs(mass - 1.0)},
             {"min_value", min_value},
             {"center_terms", sr.terms},
             {"center_tail_bound", sr.tail_bound}};
    constants["mass"] = mass;
    stage.add("hoelder_grid.csv", density_csv(dg));
    stage.add("hoelder_result.json", dump(res));
    return res;
}

} // namespace

std::vector<ExperimentDescriptor> list_experiments() {
    return {
        {"validate", "ellipticity window, coefficient bounds, bracket rank",
         "model, validate", "validate_result.json"},
        {"density", "parametrix series density on a grid", "model, horizon, z0, grid, series, quadrature",
         "density_grid.csv, density_result.json"},
        {"semigroup", "Chapman-Kolmogorov defect of the Gaussian envelope",
         "semigroup, z0, zp, quadrature", "semigroup_result.json"},
        {"bound-check", "fitted envelope constants and refinement stability",
         "model, horizon, z0, grid, series, bound, quadrature",
         "bound_grid.csv, bound_result.json"},
        {"rate", "local limit rate ladder with weighted slope fit",
         "model, horizon, z0, chain, mc, rate, quadrature",
         "rate_samples.csv, rate_result.json"},
        {"charfn", "aggregated innovation charfn, decay and inversion",
         "chain, charfn", "charfn_table.csv, charfn_density.csv, charfn_result.json"},
        {"asian", "digital Asian probability, euler vs macro chain",
         "model, horizon, asian, mc, chain", "asian_result.json"},
        {"discrete-parametrix", "discrete series against chain KDE",
         "model, horizon, z0, chain, discrete, mc, quadrature",
         "discrete_samples.csv, discrete_result.json"},
        {"hoelder-smoke", "series convergence under Hoelder coefficients",
         "model, horizon, z0, grid, series, quadrature",
         "hoelder_grid.csv, hoelder_result.json"},
    };
}

void apply_override(json& config, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw config_error("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json* node = &config;
    size_t pos = 0;
    for (;;) {
        const size_t dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw config_error("override: empty key in " + assignment);
        if (dot == std::string::npos) {
            json value;
            try {
                value = json::parse(raw);
            } catch (...) {
                value = raw; // plain string
            }
            (*node)[key] = value;
            return;
        }
        node = &((*node)[key]);
        pos = dot + 1;
    }
}

json run_experiment(json config, const std::string& out_dir_override,
                    std::optional<std::uint64_t> seed_override) {
    const std::string started = now_iso();
    check_keys(config,
               {"experiment", "seed", "out_dir", "model", "horizon", "z0", "zp", "grid",
                "quadrature", "series", "chain", "mc", "semigroup", "rate", "charfn",
                "asian", "bound", "discrete", "validate"},
               "config");
    if (!config.contains("experiment"))
        throw config_error("config: missing 'experiment'");
    const std::string name = jstr(config, "experiment", "", "config");
    std::uint64_t seed = static_cast<std::uint64_t>(
        jint(config, "seed", 1, 0, std::numeric_limits<long long>::max(), "config"));
    if (seed_override) seed = *seed_override;
    config["seed"] = seed;

    std::string out_dir = out_dir_override;
    if (out_dir.empty()) out_dir = jstr(config, "out_dir", "", "config");
    if (out_dir.empty()) {
        const char* env = std::getenv("KOLMO_OUT_DIR");
        out_dir = env ? env : "out";
    }
    config["out_dir"] = out_dir;

    Stage stage;
    json constants = json::object();
    json result;

    const bool needs_model = name != "semigroup" && name != "charfn";
    ModelSpec model;
    if (needs_model) model = model_from(config);

    if (name == "validate")
        result = run_validate(config, model, seed, stage, constants);
    else if (name == "density")
        result = run_density(config, model, seed, stage, constants);
    else if (name == "semigroup")
        result = run_semigroup(config, seed, stage, constants);
    else if (name == "bound-check")
        result = run_bound_check(config, model, seed, stage, constants);
    else if (name == "rate")
        result = run_rate(config, model, seed, stage, constants);
    else if (name == "charfn")
        result = run_charfn(config, seed, stage, constants);
    else if (name == "asian")
        result = run_asian(config, model, seed, stage, constants);
    else if (name == "discrete-parametrix")
        result = run_discrete(config, model, seed, stage, constants);
    else if (name == "hoelder-smoke")
        result = run_hoelder(config, model, seed, stage, constants);
    else
        throw config_error("config: unknown experiment '" + name + "'");

    fs::create_directories(out_dir);
    json outputs = json::array();
    for (const auto& [fname, content] : stage.files) {
        atomic_write(fs::path(out_dir) / fname, content);
        outputs.push_back(json{{"name", fname},
                               {"bytes", content.size()},
                               {"fnv1a64", fnv1a64_hex(content)}});
    }
    json manifest{{"experiment", name},
                  {"config", config},
                  {"timestamps", json{{"started", started}, {"finished", now_iso()}}},
                  {"outputs", outputs},
                  {"constants", constants},
                  {"result", result}};
    atomic_write(fs::path(out_dir) / "manifest.json", dump(manifest));
    return manifest;
}

} // namespace kolmo
