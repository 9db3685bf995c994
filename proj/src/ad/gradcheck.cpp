#include "dva/ad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dva::ad {

namespace {

double checked(double v, const char* where) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("finite differences: non-finite ") +
                             where + " value");
  }
  return v;
}

}  // namespace

FdReport compare_with_finite_differences(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, std::span<const double> analytic, double step,
    ErrorMeasure measure, std::span<const int64_t> coords) {
  if (!(step > 0.0)) throw std::invalid_argument("finite differences: step <= 0");
  if (analytic.size() != x.size()) {
    throw std::invalid_argument("finite differences: gradient size mismatch");
  }
  std::vector<int64_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) all[i] = static_cast<int64_t>(i);
    coords = all;
  }
  double scale = 0.0;
  for (double g : analytic) scale = std::max(scale, std::abs(g));

  checked(f(x), "base");
  std::vector<double> probe(x.begin(), x.end());
  FdReport report;
  for (int64_t i : coords) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = checked(f(probe), "perturbed");
    probe[i] = orig - step;
    const double fm = checked(f(probe), "perturbed");
    probe[i] = orig;
    const double fd = (fp - fm) / (2.0 * step);
    const double an = analytic[i];
    double err;
    if (measure == ErrorMeasure::mixed) {
      err = std::abs(fd - an) / (1.0 + std::abs(an));
    } else {
      const double denom =
          std::max({std::abs(an), std::abs(fd), 1e-3 * scale, 1e-300});
      err = std::abs(fd - an) / denom;
    }
    ++report.checked;
    if (err > report.max_rel_err || report.worst_index < 0) {
      report.max_rel_err = err;
      report.worst_index = i;
      report.analytic_at_worst = an;
      report.numeric_at_worst = fd;
    }
  }
  return report;
}

FdReport finite_difference_check(const TapeFunction& f, const Tensor& x,
                                 double step, ErrorMeasure measure) {
  std::vector<double> analytic;
  {
    Tape tape;
    const Tensor leaf = tape.variable(x.detach());
    const Tensor y = f(tape, leaf);
    checked(y.item(), "base");
    tape.backward(y);
    analytic = tape.grad(leaf).to_vector();
  }
  const Shape shape = x.shape();
  auto value = [&](std::span<const double> v) {
    Tape tape;
    const Tensor leaf = tape.variable(shape, {v.begin(), v.end()});
    return f(tape, leaf).item();
  };
  return compare_with_finite_differences(value, x.values(), analytic, step,
                                         measure);
}

}  // namespace dva::ad
