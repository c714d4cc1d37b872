#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mspc/autodiff.hpp"

namespace mspc::test {

template <class T>
struct RunOut {
    ad::Var<T> out;
    ad::Tape<T> tape;
};

/// Central finite-difference check: compares tape gradients of a random
/// linear functional of `run()`'s output against numeric differentiation
/// of every entry of every checked Var. Returns the worst relative error.
template <class T, class Run>
double gradcheck_max_rel_err(std::vector<ad::Var<T>> checked, Run run, std::uint64_t seed,
                             double h_scale = 1e-5, double denom_floor = 1e-6) {
    RunOut<T> first = run();
    std::vector<double> c(first.out.val->count());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : c) v = u(rng);

    for (auto& p : checked) p.grad->zero();
    for (std::size_t i = 0; i < c.size(); ++i) first.out.grad->v[i] = static_cast<T>(c[i]);
    first.tape.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& p : checked) {
        analytic.emplace_back(p.grad->v.begin(), p.grad->v.end());
    }

    auto loss = [&]() {
        RunOut<T> r = run();
        double L = 0;
        for (std::size_t i = 0; i < c.size(); ++i) L += c[i] * static_cast<double>(r.out.val->v[i]);
        return L;
    };

    double worst = 0;
    for (std::size_t pi = 0; pi < checked.size(); ++pi) {
        auto& p = checked[pi];
        for (std::size_t i = 0; i < p.val->count(); ++i) {
            const T orig = p.val->v[i];
            const double h = h_scale * std::max(1.0, std::abs(static_cast<double>(orig)));
            p.val->v[i] = static_cast<T>(orig + h);
            const double lp = loss();
            p.val->v[i] = static_cast<T>(orig - h);
            const double lm = loss();
            p.val->v[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({std::abs(a), std::abs(fd), denom_floor});
            worst = std::max(worst, std::abs(a - fd) / denom);
        }
    }
    return worst;
}

template <class T>
void randomize(ad::Var<T>& v, std::mt19937_64& rng, double scale = 0.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& x : v.val->v) x = static_cast<T>(u(rng));
}

}  // namespace mspc::test
