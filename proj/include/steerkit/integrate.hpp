#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "steerkit/vec.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

enum class Method { dopri5, dop853 };
const char* method_name(Method m);
Method method_from_name(const std::string& s);

struct Settings {
  Method method = Method::dopri5;
  double atol = 1e-9;
  double rtol = 1e-9;
  double h_init = 0.0;  // 0: automatic
  double h_max = kInf;
  long max_steps = 2'000'000'000L;
  // Wrap states into [0, period)^d after each accepted step.
  std::optional<double> period;
  // Optional cap on the next step: (t, x, f, h_proposed) -> h_allowed.
  std::function<double(double, const Vec&, const Vec&, double)> step_limit;

  Settings finer(double factor) const;
  static Settings with(Method m, double tol) {
    Settings s;
    s.method = m;
    s.atol = s.rtol = tol;
    return s;
  }
};

using Rhs = std::function<Vec(double, const Vec&)>;

// Resumable adaptive embedded Runge-Kutta integrator. Time runs forward only;
// callers reverse the field for backward solves.
class Stepper {
 public:
  struct State {
    double t = 0.0, t_comp = 0.0, h = 0.0, err_old = 1e-4;
    Vec x, f;
    bool last_rejected = false;
  };

  Stepper(Rhs f, Settings s, double t0, const Vec& x0);

  // One accepted step that never passes t_end. Returns false when t == t_end.
  bool step(double t_end);
  // Integrates up to t_end; the observer sees every accepted step and may stop
  // early by returning false.
  void advance(double t_end, const std::function<bool(const Stepper&)>& observer = nullptr);

  double t() const { return st_.t; }
  const Vec& x() const { return st_.x; }
  const Vec& f() const { return st_.f; }
  double t_prev() const { return t_prev_; }
  const Vec& x_prev() const { return x_prev_; }
  const Vec& f_prev() const { return f_prev_; }
  // End of the last step before wrapping (equals x() off the torus).
  const Vec& x_end_unwrapped() const { return x_end_; }
  double last_h() const { return st_.t - t_prev_; }

  // Cubic Hermite dense output over the last accepted step. Positions are
  // continuous with x_prev() (unwrapped on the torus).
  Vec dense(double t) const;
  Vec dense_derivative(double t) const;
  // RK-accurate state at t inside the last step: one clamped step from its start.
  Vec exact_at(double t) const;

  State state() const { return st_; }
  void restore(const State& s);

  const Settings& settings() const { return set_; }
  long steps() const { return steps_; }
  long rejects() const { return rejects_; }
  long evals() const { return evals_; }
  double error_budget() const { return budget_; }

  // Single explicit step of the configured method; returns the new state and
  // the embedded error norm.
  Vec raw_step(double t, const Vec& x, const Vec& f, double h, double* err, Vec* f_new) const;

 private:
  double initial_step(double t_end);
  double error_norm(const Vec& e, const Vec& x0, const Vec& x1) const;

  Rhs rhs_;
  Settings set_;
  State st_;
  double t_prev_ = 0.0;
  Vec x_prev_, f_prev_, x_end_;
  bool started_ = false;
  long steps_ = 0, rejects_ = 0;
  mutable long evals_ = 0;
  double budget_ = 0.0;
};

class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(int dim) : dim_(dim) {}

  void push(double t, const Vec& x, const Vec& f, const Vec* x_unwrapped_end = nullptr);
  int dim() const { return dim_; }
  size_t size() const { return t_.size(); }
  bool empty() const { return t_.empty(); }
  double t0() const { return t_.front(); }
  double t1() const { return t_.back(); }
  const std::vector<double>& times() const { return t_; }
  const std::vector<Vec>& states() const { return x_; }
  const std::vector<Vec>& slopes() const { return f_; }

  // Cubic Hermite interpolation; exact at stored times.
  Vec at(double t) const;
  Vec derivative_at(double t) const;
  // Index i with t_i <= t < t_{i+1} (clamped).
  size_t segment_index(double t) const;
  // RK-accurate state at t when the trajectory remembers its integrator.
  Vec state_at(double t) const;

  std::optional<double> period;
  double tol_budget = 0.0;

  struct Context {
    Rhs rhs;
    Settings settings;
  };
  std::shared_ptr<const Context> context;

  std::string to_csv(size_t max_rows = 0) const;

 private:
  int dim_ = 0;
  std::vector<double> t_;
  std::vector<Vec> x_, f_;
  std::vector<Vec> xu_;  // unwrapped step ends (torus only)
};

Rhs autonomous(const VectorField& V);

Trajectory integrate(const VectorField& V, const Vec& x0, double t0, double t1, const Settings& s);
Trajectory integrate_rhs(const Rhs& f, int dim, const Vec& x0, double t0, double t1, const Settings& s);

}  // namespace steerkit
