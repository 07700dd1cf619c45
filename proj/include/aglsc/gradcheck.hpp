#pragma once

#include "aglsc/param_store.hpp"
#include "aglsc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace aglsc {

struct GradCheckOptions {
    // Coordinates probed per parameter; all of them when the parameter is smaller.
    std::size_t max_coords_per_param = 32;
    std::uint64_t seed = 7;
    // Parameters whose names are listed here are skipped.
    std::vector<std::string> skip;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares the gradients already stored in `store` against central
// differences of `loss`. The error per coordinate is
// |analytic - numeric| / max(1, |analytic|). A non-finite loss yields an
// infinite error.
inline GradCheckResult finite_diff_check_detailed(const std::function<double(const ParamStore&)>& loss,
                                                  const ParamStore& store, double h,
                                                  const GradCheckOptions& opt = {}) {
    if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
    GradCheckResult res;
    ParamStore probe = store;
    Rng rng(opt.seed);
    for (std::size_t pi = 0; pi < probe.params().size(); ++pi) {
        auto& p = probe.params()[pi];
        if (std::find(opt.skip.begin(), opt.skip.end(), p.name) != opt.skip.end()) continue;
        const auto n = static_cast<std::size_t>(p.value.size());
        std::vector<Index> coords(n);
        std::iota(coords.begin(), coords.end(), Index{0});
        if (n > opt.max_coords_per_param) {
            rng.shuffle(coords.begin(), coords.end());
            coords.resize(opt.max_coords_per_param);
        }
        for (Index c : coords) {
            double& x = p.value.data()[c];
            const double orig = x;
            x = orig + h;
            const double up = loss(probe);
            x = orig - h;
            const double down = loss(probe);
            x = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = store.params()[pi].grad.data()[c];
            double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
            if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(err))
                err = std::numeric_limits<double>::infinity();
            if (err >= res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_param = p.name;
                res.worst_index = c;
                res.analytic = analytic;
                res.numeric = numeric;
            }
        }
    }
    return res;
}

inline double finite_diff_check(const std::function<double(const ParamStore&)>& loss, const ParamStore& store,
                                double h, const GradCheckOptions& opt = {}) {
    return finite_diff_check_detailed(loss, store, h, opt).max_rel_error;
}

}  // namespace aglsc
