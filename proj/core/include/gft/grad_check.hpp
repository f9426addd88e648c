#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gft/param_set.hpp"
#include "gft/rng.hpp"
#include "gft/tensor.hpp"

namespace gft {

struct GradCheckEntry {
    std::string path;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t coords_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double max_rel_err() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_err);
        return m;
    }

    bool ok(double tolerance) const { return max_rel_err() < tolerance; }
};

// Central finite differences against the analytic gradient, in 64-bit mode.
// `f` must be a deterministic scalar function of the parameters (re-seed any
// stochastic op inside it). Checks up to max_coords coordinates per
// parameter, chosen deterministically. Relative error uses
// |fd - an| / max(|fd|, |an|); pairs where both magnitudes are below 1e-6
// count as matching (the finite difference itself is noise there).
inline GradCheckReport finite_diff_check(const std::function<Tensor<double>()>& f, ParamSet<double>& params,
                                         double eps = 1e-5, std::size_t max_coords = 200,
                                         std::uint64_t coord_seed = 0x6f7261636c65ull) {
    GradCheckReport report;
    params.zero_grads();
    Tensor<double> loss = f();
    backward(loss);
    for (auto& [path, p] : params) {
        GradCheckEntry entry;
        entry.path = path;
        std::vector<double> analytic = p.grad();
        std::vector<std::size_t> coords(p.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (coords.size() > max_coords) {
            Rng rng(Rng::mix(coord_seed, Rng::hash_string(path)));
            rng.shuffle(coords);
            coords.resize(max_coords);
        }
        for (std::size_t i : coords) {
            double saved = p.data()[i];
            p.data()[i] = saved + eps;
            double up;
            {
                NoGradGuard ng;
                up = f().item();
            }
            p.data()[i] = saved - eps;
            double down;
            {
                NoGradGuard ng;
                down = f().item();
            }
            p.data()[i] = saved;
            double fd = (up - down) / (2.0 * eps);
            double an = analytic[i];
            double denom = std::max(std::abs(fd), std::abs(an));
            entry.max_abs_err = std::max(entry.max_abs_err, std::abs(fd - an));
            if (denom >= 1e-6) entry.max_rel_err = std::max(entry.max_rel_err, std::abs(fd - an) / denom);
            ++entry.coords_checked;
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace gft
