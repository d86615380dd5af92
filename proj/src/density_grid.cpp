#include "kolmo/density_grid.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kolmo/errors.hpp"

namespace kolmo {

double GridSpec::x_at(int i) const {
    return nx == 1 ? x_min : x_min + (x_max - x_min) * i / (nx - 1.0);
}

double GridSpec::y_at(int j) const {
    return ny == 1 ? y_min : y_min + (y_max - y_min) * j / (ny - 1.0);
}

double GridSpec::cell_dx() const { return nx == 1 ? 0.0 : (x_max - x_min) / (nx - 1.0); }
double GridSpec::cell_dy() const { return ny == 1 ? 0.0 : (y_max - y_min) / (ny - 1.0); }

void GridSpec::validate() const {
    if (nx < 1 || ny < 1) throw argument_error("grid: node counts must be >= 1");
    if (!(x_max >= x_min) || !(y_max >= y_min))
        throw argument_error("grid: empty extent");
}

double DensityGrid::integrate() const {
    const double dx = spec.cell_dx(), dy = spec.cell_dy();
    double s = 0.0;
    for (int i = 0; i < spec.nx; ++i) {
        const double wx = (i == 0 || i == spec.nx - 1) ? 0.5 : 1.0;
        for (int j = 0; j < spec.ny; ++j) {
            const double wy = (j == 0 || j == spec.ny - 1) ? 0.5 : 1.0;
            s += wx * wy * at(i, j);
        }
    }
    return s * dx * dy;
}

DensityGrid make_grid(const GridSpec& spec) {
    spec.validate();
    DensityGrid g;
    g.spec = spec;
    g.value.assign(static_cast<size_t>(spec.nodes()), 0.0);
    return g;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string density_csv(const DensityGrid& grid) {
    std::ostringstream os;
    os << "# grid x:[" << fmt(grid.spec.x_min) << "," << fmt(grid.spec.x_max) << "] nx="
       << grid.spec.nx << " y:[" << fmt(grid.spec.y_min) << "," << fmt(grid.spec.y_max)
       << "] ny=" << grid.spec.ny << "\n";
    for (const auto& [k, v] : grid.meta) os << "# " << k << "=" << v << "\n";
    os << "x,y,value,se\n";
    for (int i = 0; i < grid.spec.nx; ++i)
        for (int j = 0; j < grid.spec.ny; ++j)
            os << fmt(grid.spec.x_at(i)) << "," << fmt(grid.spec.y_at(j)) << ","
               << fmt(grid.at(i, j)) << "," << fmt(grid.se_at(i, j)) << "\n";
    return os.str();
}

void write_density_csv(const DensityGrid& grid, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw error("cannot open for write: " + path);
    os << density_csv(grid);
    if (!os) throw error("write failed: " + path);
}

DensityGrid read_density_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw error("cannot open for read: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("# grid", 0) != 0)
        throw error("density csv: missing grid header in " + path);
    GridSpec spec;
    if (std::sscanf(line.c_str(), "# grid x:[%lf,%lf] nx=%d y:[%lf,%lf] ny=%d",
                    &spec.x_min, &spec.x_max, &spec.nx, &spec.y_min, &spec.y_max,
                    &spec.ny) != 6)
        throw error("density csv: malformed grid header in " + path);
    DensityGrid g = make_grid(spec);
    g.se.assign(static_cast<size_t>(spec.nodes()), 0.0);
    size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("x,", 0) == 0) continue;
        double x, y, v, s;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &x, &y, &v, &s) != 4)
            throw error("density csv: malformed row in " + path);
        if (row >= g.value.size()) throw error("density csv: too many rows in " + path);
        g.value[row] = v;
        g.se[row] = s;
        ++row;
    }
    if (row != g.value.size()) throw error("density csv: row count mismatch in " + path);
    return g;
}

} // namespace kolmo
