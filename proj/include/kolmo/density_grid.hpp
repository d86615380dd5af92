#pragma once

#include <map>
#include <string>
#include <vector>

namespace kolmo {

// Rectangular evaluation lattice over (x', y'), d = 1.
struct GridSpec {
    double x_min = -1.0, x_max = 1.0;
    int nx = 21;
    double y_min = -1.0, y_max = 1.0;
    int ny = 21;

    double x_at(int i) const;
    double y_at(int j) const;
    double cell_dx() const;
    double cell_dy() const;
    int nodes() const { return nx * ny; }
    void validate() const;
};

// Density values (and optional standard errors) on a GridSpec, plus free-form
// metadata that travels with the CSV serialization.
struct DensityGrid {
    GridSpec spec;
    std::vector<double> value;           // nx * ny, row-major in x
    std::vector<double> se;              // empty when deterministic
    std::map<std::string, std::string> meta;

    double& at(int i, int j) { return value[static_cast<size_t>(i) * spec.ny + j]; }
    double at(int i, int j) const { return value[static_cast<size_t>(i) * spec.ny + j]; }
    double se_at(int i, int j) const {
        return se.empty() ? 0.0 : se[static_cast<size_t>(i) * spec.ny + j];
    }

    // Trapezoid mass over the lattice.
    double integrate() const;
};

DensityGrid make_grid(const GridSpec& spec);

std::string density_csv(const DensityGrid& grid);
void write_density_csv(const DensityGrid& grid, const std::string& path);
DensityGrid read_density_csv(const std::string& path);

} // namespace kolmo
