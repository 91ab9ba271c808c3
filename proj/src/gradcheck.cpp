#include "cb/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cb {

Tensor finite_difference_grad(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input,
                              double epsilon) {
    if (epsilon <= 0) throw ShapeError("finite_difference_grad: epsilon must be positive");
    Tensor work = input.detach();
    Tensor grad = Tensor::zeros(input.shape());
    auto eval = [&]() {
        Tensor out = fn(work);
        if (out.numel() != 1) throw ShapeError("finite_difference_grad: fn must return a scalar");
        return out.item();
    };
    for (long long i = 0; i < work.numel(); ++i) {
        double saved = work.data()[i];
        work.data()[i] = saved + epsilon;
        double up = eval();
        work.data()[i] = saved - epsilon;
        double down = eval();
        work.data()[i] = saved;
        grad.data()[i] = (up - down) / (2.0 * epsilon);
    }
    return grad;
}

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& fd) {
    if (analytic.size() != fd.size()) throw ShapeError("max_relative_error: length mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        double denom = std::max({std::abs(analytic[i]), std::abs(fd[i]), 1e-3});
        worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
    }
    return worst;
}

GradCheckReport check_gradient(const std::function<Tensor()>& loss_fn, Tensor target,
                               const std::string& name, double epsilon, double tolerance) {
    target.zero_grad();
    Tensor loss = loss_fn();
    if (loss.numel() != 1) throw ShapeError("check_gradient: loss must be scalar");
    loss.backward();
    std::vector<double> analytic = target.grad();

    std::vector<double> fd(static_cast<size_t>(target.numel()), 0.0);
    for (long long i = 0; i < target.numel(); ++i) {
        double saved = target.data()[i];
        target.data()[i] = saved + epsilon;
        double up = loss_fn().item();
        target.data()[i] = saved - epsilon;
        double down = loss_fn().item();
        target.data()[i] = saved;
        fd[static_cast<size_t>(i)] = (up - down) / (2.0 * epsilon);
    }

    GradCheckReport report;
    report.parameter_name = name;
    report.max_relative_error = max_relative_error(analytic, fd);
    report.passed = report.max_relative_error < tolerance;
    return report;
}

}  // namespace cb
