#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "metassm/tensor.hpp"

namespace metassm {

using State2 = std::array<double, 2>;

struct SystemParams {
    double theta = 1.0;
    State2 x0{0.0, 0.0};
    double t_final = 20.0;
    double dt = 0.01;

    void validate() const {
        if (!(dt > 0.0)) throw ValidationError("system params: dt must be positive");
        if (!(t_final >= dt)) throw ValidationError("system params: t_final must be >= dt");
        if (!std::isfinite(theta)) throw ValidationError("system params: theta not finite");
        if (!std::isfinite(x0[0]) || !std::isfinite(x0[1])) {
            throw ValidationError("system params: initial state not finite");
        }
    }
};

// Full-state output sequence of one simulated system.
struct Trajectory {
    SystemParams params;
    std::vector<State2> outputs;

    std::size_t length() const { return outputs.size(); }
};

inline State2 vdp_derivative(const State2& state, double theta) {
    if (!std::isfinite(state[0]) || !std::isfinite(state[1])) {
        throw NumericError("vdp_derivative: non-finite state");
    }
    return {state[1], theta * state[1] * (1.0 - state[0] * state[0]) - state[0]};
}

// Classical fixed-step RK4 with step equal to the sampling period. The first
// output is the initial state; one output per step thereafter.
inline Trajectory simulate(const SystemParams& params) {
    params.validate();
    const std::size_t steps = static_cast<std::size_t>(std::floor(params.t_final / params.dt));
    Trajectory traj;
    traj.params = params;
    traj.outputs.reserve(steps + 1);

    State2 x = params.x0;
    traj.outputs.push_back(x);
    const double h = params.dt;
    for (std::size_t i = 0; i < steps; ++i) {
        const State2 k1 = vdp_derivative(x, params.theta);
        const State2 k2 =
            vdp_derivative({x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]}, params.theta);
        const State2 k3 =
            vdp_derivative({x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]}, params.theta);
        const State2 k4 = vdp_derivative({x[0] + h * k3[0], x[1] + h * k3[1]}, params.theta);
        x[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        x[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        if (std::abs(x[0]) > 1e6 || std::abs(x[1]) > 1e6) {
            throw NumericError("simulate: state diverged beyond 1e6 at t=" +
                               std::to_string((i + 1) * h));
        }
        traj.outputs.push_back(x);
    }
    return traj;
}

}  // namespace metassm
