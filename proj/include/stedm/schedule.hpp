#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stedm/errors.hpp"

namespace stedm::diffusion {

enum class ScheduleKind { linear, cosine };

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw param_error("unknown schedule kind: " + s);
}

/// Forward-process variance tables. Steps are 1-based: betas[t-1] is the
/// variance added at step t; alpha_bar(0) == 1 by convention.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // beta_t, length T
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{i<=t} alpha_i

    double beta(int t) const {
        check_step(t);
        return betas[static_cast<size_t>(t - 1)];
    }
    double alpha(int t) const {
        check_step(t);
        return alphas[static_cast<size_t>(t - 1)];
    }
    double alpha_bar(int t) const {
        if (t == 0) return 1.0;
        check_step(t);
        return alpha_bars[static_cast<size_t>(t - 1)];
    }

    void check_step(int t) const {
        if (t < 1 || t > T) throw index_error("schedule: step " + std::to_string(t) +
                                              " outside [1," + std::to_string(T) + "]");
    }
};

/// Builds a noise schedule. Linear interpolates beta from beta_start to
/// beta_end; cosine follows the squared-cosine alpha_bar curve (ignores the
/// beta bounds, clips beta at 0.999).
inline NoiseSchedule build_schedule(int T, ScheduleKind kind, double beta_start = 1e-4,
                                    double beta_end = 2e-2) {
    if (T < 1) throw param_error("build_schedule: T must be >= 1");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    if (kind == ScheduleKind::linear) {
        if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0))
            throw param_error("build_schedule: need 0 < beta_start <= beta_end < 1");
        for (int t = 0; t < T; ++t)
            s.betas[static_cast<size_t>(t)] =
                T == 1 ? beta_start
                       : beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
    } else {
        auto f = [T](double t) {
            double v = std::cos((t / T + 0.008) / 1.008 * M_PI / 2.0);
            return v * v;
        };
        double f0 = f(0.0);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            double ab = f(double(t)) / f0;
            double beta = 1.0 - ab / prev;
            s.betas[static_cast<size_t>(t - 1)] = std::min(std::max(beta, 1e-8), 0.999);
            prev = ab;
        }
    }
    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T));
    double acc = 1.0;
    for (int t = 0; t < T; ++t) {
        s.alphas[static_cast<size_t>(t)] = 1.0 - s.betas[static_cast<size_t>(t)];
        acc *= s.alphas[static_cast<size_t>(t)];
        s.alpha_bars[static_cast<size_t>(t)] = acc;
    }
    return s;
}

}  // namespace stedm::diffusion
