#include "kolmo/model.hpp"

#include <cmath>
#include <sstream>

#include "kolmo/errors.hpp"
#include "kolmo/rng.hpp"

namespace kolmo {

bool PhasePoint::finite() const {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    for (double v : y)
        if (!std::isfinite(v)) return false;
    return x.size() == y.size();
}

Coefficients eval_coefficients(const ModelSpec& model, const PhasePoint& p) {
    if (!p.finite() || p.dim() != model.dim)
        throw argument_error("eval_coefficients: point not finite or wrong dimension");
    Coefficients c;
    c.b = model.drift(p.x, p.y);
    c.sigma = model.diffusion_sqrt(p.x, p.y);
    c.a = c.sigma * c.sigma;
    auto check = [&](double v) {
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "model evaluation produced non-finite value at x=(";
            for (double xi : p.x) os << xi << " ";
            os << ") y=(";
            for (double yi : p.y) os << yi << " ";
            os << ")";
            throw model_eval_error(os.str());
        }
    };
    for (double v : c.b) check(v);
    for (double v : c.sigma.a) check(v);
    return c;
}

ValidationReport validate_model(const ModelSpec& model, int sample_count,
                                std::uint64_t rng_seed) {
    if (sample_count < 1) throw argument_error("validate_model: sample_count >= 1");
    const int d = model.dim;
    CounterRng rng(rng_seed, 0);
    ValidationReport rep;
    rep.samples = sample_count;
    rep.eig_min = 1e300;
    rep.eig_max = -1e300;
    for (int s = 0; s < sample_count; ++s) {
        PhasePoint p;
        p.x.resize(static_cast<size_t>(d));
        p.y.resize(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) {
            p.x[i] = 6.0 * (rng.uniform() - 0.5);
            p.y[i] = 6.0 * (rng.uniform() - 0.5);
        }
        const Coefficients c = eval_coefficients(model, p);
        const Vec ev = sym_eigenvalues(c.a);
        rep.eig_min = std::min(rep.eig_min, ev.front());
        rep.eig_max = std::max(rep.eig_max, ev.back());
        rep.max_drift_norm = std::max(rep.max_drift_norm, norm2(c.b));
        const Vec sv = singular_values(c.sigma);
        rep.max_sigma_norm = std::max(rep.max_sigma_norm, sv.front());
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j)
                if (std::abs(c.sigma(i, j) - c.sigma(j, i)) > 1e-12) rep.symmetric = false;
    }
    const double tol = 1e-9;
    rep.pass = rep.symmetric && rep.eig_min >= model.lambda_min - tol &&
               rep.eig_max <= model.lambda_max + tol &&
               rep.max_drift_norm <= model.coeff_bound + tol &&
               rep.max_sigma_norm <= model.coeff_bound + tol;
    return rep;
}

namespace {

// Stacked field value: A_0 = (b; x), A_j = (sigma_{.j}; 0).
Vec field_a0(const ModelSpec& m, const Vec& x, const Vec& y) {
    const int d = m.dim;
    Vec v(static_cast<size_t>(2 * d));
    const Vec b = m.drift(x, y);
    for (int i = 0; i < d; ++i) v[i] = b[i];
    for (int i = 0; i < d; ++i) v[d + i] = x[i];
    return v;
}

Vec field_aj(const ModelSpec& m, const Vec& x, const Vec& y, int j) {
    const int d = m.dim;
    Vec v(static_cast<size_t>(2 * d), 0.0);
    const Mat s = m.diffusion_sqrt(x, y);
    for (int i = 0; i < d; ++i) v[i] = s(i, j);
    return v;
}

// Central-difference Jacobian of a stacked field over the 2d coordinates.
Mat field_jacobian(const std::function<Vec(const Vec&, const Vec&)>& f, const Vec& x,
                   const Vec& y, double h) {
    const int d = static_cast<int>(x.size());
    Mat jac(2 * d, 2 * d);
    for (int k = 0; k < 2 * d; ++k) {
        Vec xp = x, yp = y, xm = x, ym = y;
        if (k < d) {
            xp[k] += h;
            xm[k] -= h;
        } else {
            yp[k - d] += h;
            ym[k - d] -= h;
        }
        const Vec fp = f(xp, yp);
        const Vec fm = f(xm, ym);
        for (int i = 0; i < 2 * d; ++i) jac(i, k) = (fp[i] - fm[i]) / (2.0 * h);
    }
    return jac;
}

} // namespace

int hormander_rank(const ModelSpec& model, const PhasePoint& p, double fd_step) {
    if (!(fd_step > 0.0) || fd_step > 1e-2)
        throw argument_error("hormander_rank: fd_step must be in (0, 1e-2]");
    const int d = model.dim;
    auto a0 = [&](const Vec& x, const Vec& y) { return field_a0(model, x, y); };
    const Mat j0 = field_jacobian(a0, p.x, p.y, fd_step);
    const Vec v0 = field_a0(model, p.x, p.y);

    Mat span(2 * d, 2 * d);
    for (int j = 0; j < d; ++j) {
        auto aj = [&](const Vec& x, const Vec& y) { return field_aj(model, x, y, j); };
        const Vec vj = field_aj(model, p.x, p.y, j);
        const Mat jj = field_jacobian(aj, p.x, p.y, fd_step);
        // [A_0, A_j] = (A_0 . grad) A_j - (A_j . grad) A_0
        const Vec br_fwd = mat_vec(jj, v0);
        const Vec br_bwd = mat_vec(j0, vj);
        for (int i = 0; i < 2 * d; ++i) {
            span(i, j) = vj[i];
            span(i, d + j) = br_fwd[i] - br_bwd[i];
        }
    }
    return numerical_rank(span, 1e-8);
}

namespace {

double param(const std::map<std::string, double>& params, const std::string& key,
             double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

Mat scalar_diag(int d, double v) { return Mat::scaled_identity(d, v); }

} // namespace

ModelSpec make_model(const std::string& family,
                     const std::map<std::string, double>& params, int dim) {
    if (dim < 1) throw argument_error("make_model: dim >= 1");
    ModelSpec m;
    m.dim = dim;
    m.family = family;
    // Every family is scalar-isotropic: drift and diffusion depend on the
    // first coordinates only, so d > 1 instances are diagonal liftings.
    std::function<double(double, double)> b1, s1;
    if (family == "constant") {
        const double sig = param(params, "sigma", 1.0);
        const double b0 = param(params, "drift", 0.0);
        b1 = [b0](double, double) { return b0; };
        s1 = [sig](double, double) { return sig; };
        m.lambda_min = m.lambda_max = sig * sig;
        m.coeff_bound = std::max(std::abs(sig), std::abs(b0));
        if (m.coeff_bound == 0.0) m.coeff_bound = 1.0;
    } else if (family == "trig" || family == "perturbed" || family == "tanh-drift") {
        const double a_amp = (family == "tanh-drift") ? 0.0 : param(params, "a_amp", 0.1);
        const double b_amp =
            (family == "trig") ? 0.0 : param(params, "b_amp", family == "tanh-drift" ? 0.5 : 0.2);
        if (std::abs(a_amp) >= 1.0) throw argument_error("make_model: need |a_amp| < 1");
        b1 = [b_amp](double x, double) { return b_amp * std::tanh(x); };
        s1 = [a_amp](double, double y) { return std::sqrt(1.0 + a_amp * std::sin(y)); };
        m.lambda_min = 1.0 - std::abs(a_amp);
        m.lambda_max = 1.0 + std::abs(a_amp);
        m.coeff_bound = std::max(std::sqrt(m.lambda_max), std::abs(b_amp));
    } else if (family == "hoelder") {
        const double a_amp = param(params, "a_amp", 0.1);
        b1 = [](double, double) { return 0.0; };
        s1 = [a_amp](double, double y) {
            return std::sqrt(1.0 + a_amp * std::sqrt(std::abs(std::sin(y))));
        };
        m.lambda_min = 1.0;
        m.lambda_max = 1.0 + std::abs(a_amp);
        m.coeff_bound = std::sqrt(m.lambda_max);
        m.smoothness = Smoothness::hoelder;
    } else if (family == "zero-sigma") {
        b1 = [](double, double) { return 0.0; };
        s1 = [](double, double) { return 0.0; };
        m.lambda_min = 0.0;
        m.lambda_max = 0.0;
        m.coeff_bound = 1.0;
    } else {
        throw config_error("make_model: unknown family '" + family + "'");
    }
    m.drift1 = b1;
    m.sigma1 = s1;
    m.drift = [b1, dim](const Vec& x, const Vec& y) {
        Vec b(static_cast<size_t>(dim));
        for (int i = 0; i < dim; ++i) b[i] = b1(x[0], y[0]);
        return b;
    };
    m.diffusion_sqrt = [s1, dim](const Vec& x, const Vec& y) {
        return scalar_diag(dim, s1(x[0], y[0]));
    };
    return m;
}

std::vector<std::string> model_families() {
    return {"constant", "trig", "tanh-drift", "perturbed", "hoelder", "zero-sigma"};
}

} // namespace kolmo
