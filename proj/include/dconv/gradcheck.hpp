// Finite-difference gradient checking. The oracle is central differencing of
// the forward value; it never touches the backward path it verifies. Checks
// default to double precision to keep the difference quotient above the
// rounding noise floor.

#pragma once

#include "dconv/tape.hpp"

#include <functional>
#include <span>

namespace dconv {

struct GradCheckReport {
  std::vector<double> max_rel_err_per_input;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Generic form: `forward` returns the scalar objective (reading *inputs in
// place), `backward` fills each input's grad buffer. Relative error uses
// |a - o| / max(1, |a|, |o|) so near-zero gradients compare absolutely.
template <class S>
inline GradCheckReport grad_check(const std::function<S()>& forward,
                                  const std::function<void()>& backward,
                                  std::span<TensorT<S>* const> inputs, double tol,
                                  S h = S(1e-3)) {
  GradCheckReport report;
  for (TensorT<S>* in : inputs) {
    in->requires_grad = true;
    in->ensure_grad();
    in->zero_grad();
  }
  backward();

  for (TensorT<S>* in : inputs) {
    double worst = 0.0;
    for (size_t i = 0; i < in->data.size(); ++i) {
      const S saved = in->data[i];
      in->data[i] = saved + h;
      const double f_plus = static_cast<double>(forward());
      in->data[i] = saved - h;
      const double f_minus = static_cast<double>(forward());
      in->data[i] = saved;

      const double oracle = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
      const double analytic = static_cast<double>(in->grad[i]);
      const double denom = std::max({1.0, std::abs(analytic), std::abs(oracle)});
      worst = std::max(worst, std::abs(analytic - oracle) / denom);
    }
    report.max_rel_err_per_input.push_back(worst);
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

// Convenience form for pure tensor functions built from tape ops. Non-scalar
// outputs are reduced with sum_all before differentiation.
template <class S>
inline GradCheckReport grad_check_fn(
    const std::function<Var(TapeT<S>&, const std::vector<Var>&)>& f,
    std::vector<TensorT<S>> inputs, double tol, S h = S(1e-3)) {
  std::vector<TensorT<S>*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);

  auto run = [&](bool with_grad) -> S {
    TapeT<S> tape;
    std::vector<Var> vars;
    for (auto* t : ptrs) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    if (tape.value(out).numel() != 1) out = tape.sum_all(out);
    const S value = tape.value(out).data[0];
    if (with_grad) tape.backward(out);
    return value;
  };

  std::function<S()> fwd = [&] {
    for (auto* t : ptrs) t->requires_grad = false;
    return run(false);
  };
  std::function<void()> bwd = [&] {
    for (auto* t : ptrs) t->requires_grad = true;
    run(true);
  };
  return grad_check<S>(fwd, bwd, ptrs, tol, h);
}

}  // namespace dconv
