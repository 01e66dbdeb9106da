#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "usnav/common.hpp"

namespace usnav {

struct SimplexOptions {
    int max_iter = 200;
    double tol = 1e-4;      // stop when the window improvement drops below this
    int stall_window = 10;  // iterations
    Eigen::VectorXd initial_step;  // per-dimension simplex edge lengths
};

struct SimplexResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> best_trace;  // best value after each iteration, non-decreasing
};

// Nelder-Mead maximization. The best vertex is never discarded, so the
// reported best-value trace is non-decreasing by construction.
inline SimplexResult nelder_mead_maximize(
    const std::function<double(const Eigen::VectorXd&)>& fn, const Eigen::VectorXd& x0,
    const SimplexOptions& opt) {
    const auto n = x0.size();
    if (opt.initial_step.size() != n) {
        throw DataError("nelder_mead_maximize: initial_step dimension mismatch");
    }

    const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
    std::vector<Eigen::VectorXd> xs;
    std::vector<double> fs;
    xs.reserve(static_cast<std::size_t>(n) + 1);
    xs.push_back(x0);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd v = x0;
        v(i) += opt.initial_step(i);
        xs.push_back(v);
    }
    fs.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) fs[i] = fn(xs[i]);

    auto order = [&]() {
        std::vector<std::size_t> idx(xs.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return fs[a] > fs[b]; });
        std::vector<Eigen::VectorXd> xs2(xs.size());
        std::vector<double> fs2(fs.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            xs2[i] = xs[idx[i]];
            fs2[i] = fs[idx[i]];
        }
        xs.swap(xs2);
        fs.swap(fs2);
    };
    order();

    SimplexResult res;
    res.best_trace.reserve(static_cast<std::size_t>(opt.max_iter));
    int iter = 0;
    for (; iter < opt.max_iter; ++iter) {
        const std::size_t worst = xs.size() - 1;
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (std::size_t i = 0; i < worst; ++i) centroid += xs[i];
        centroid /= static_cast<double>(worst);

        const Eigen::VectorXd reflected = centroid + alpha * (centroid - xs[worst]);
        const double f_ref = fn(reflected);
        if (f_ref > fs[0]) {
            const Eigen::VectorXd expanded = centroid + gamma * (reflected - centroid);
            const double f_exp = fn(expanded);
            if (f_exp > f_ref) {
                xs[worst] = expanded;
                fs[worst] = f_exp;
            } else {
                xs[worst] = reflected;
                fs[worst] = f_ref;
            }
        } else if (f_ref > fs[worst - 1]) {
            xs[worst] = reflected;
            fs[worst] = f_ref;
        } else {
            const Eigen::VectorXd contracted = centroid + rho * (xs[worst] - centroid);
            const double f_con = fn(contracted);
            if (f_con > fs[worst]) {
                xs[worst] = contracted;
                fs[worst] = f_con;
            } else {
                for (std::size_t i = 1; i < xs.size(); ++i) {
                    xs[i] = xs[0] + sigma * (xs[i] - xs[0]);
                    fs[i] = fn(xs[i]);
                }
            }
        }
        order();
        res.best_trace.push_back(fs[0]);

        const int w = opt.stall_window;
        if (iter + 1 >= w) {
            const double past = res.best_trace[static_cast<std::size_t>(iter + 1 - w)];
            if (fs[0] - past < opt.tol) {
                res.converged = true;
                ++iter;
                break;
            }
        }
    }
    res.x = xs[0];
    res.value = fs[0];
    res.iterations = iter;
    return res;
}

}  // namespace usnav
