#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "llre/ops.hpp"
#include "llre/rng.hpp"
#include "llre/tensor.hpp"

// Central finite-difference verification of analytic gradients. The
// difference quotient never touches the tape, so it stays an independent
// oracle for the reverse-mode path.

namespace llre::gradcheck {

// relative error with a floor so near-zero gradients are compared absolutely
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2});
}

struct CheckResult {
    std::string name;
    double max_rel = 0.0;
    double tol = 0.0;
    bool pass = false;
};

struct Check {
    std::string name;
    std::function<Tensor<double>()> forward; // scalar loss over the captured tensors
    std::vector<Tensor<double>> wrt;         // tensors to differentiate against
    double tol = 1e-4;
    double step = 1e-5;
};

inline CheckResult run_check(const Check& chk) {
    for (const auto& t : chk.wrt) {
        const_cast<Tensor<double>&>(t).set_requires_grad(true);
        t.drop_grad();
    }

    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        Tensor<double> loss = chk.forward();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(chk.wrt.size());
    for (const auto& t : chk.wrt) analytic.push_back(t.grad());

    // evaluate the probe with no tape installed
    GradTape<double>*& cur = GradTape<double>::current();
    GradTape<double>* saved = cur;
    cur = nullptr;
    CheckResult res{chk.name, 0.0, chk.tol, false};
    const double h = chk.step;
    for (std::size_t ti = 0; ti < chk.wrt.size(); ++ti) {
        const Tensor<double>& t = chk.wrt[ti];
        double* p = t.data();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double v = p[i];
            p[i] = v + h;
            const double fp = chk.forward().item();
            p[i] = v - h;
            const double fm = chk.forward().item();
            p[i] = v;
            const double fd = (fp - fm) / (2.0 * h);
            res.max_rel = std::max(res.max_rel, rel_err(analytic[ti][i], fd));
        }
    }
    cur = saved;
    res.pass = res.max_rel < chk.tol;
    return res;
}

template <typename T>
Tensor<T> random_tensor(SeqRng& rng, Shape shape, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    T* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.normal() * scale);
    return t;
}

} // namespace llre::gradcheck
