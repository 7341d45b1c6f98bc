#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerkit/integrate.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

// Named fields that control descriptors refer to by id.
class FieldRegistry {
 public:
  void add(const std::string& id, VectorField f);
  bool has(const std::string& id) const { return fields_.count(id) != 0; }
  const VectorField& get(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, std::shared_ptr<const VectorField>> fields_;
};

enum class SegmentKind { zero, constant, steer, field_difference };
const char* kind_name(SegmentKind k);

// Closed-form control over one segment. Time inside a segment is local:
// sigma = t - t0.
struct Descriptor {
  SegmentKind kind = SegmentKind::zero;
  // constant and steer
  Vec alpha;
  // steer: u(sigma, x) = F(z) - F(x_eps(sigma)) + alpha + (gain/tau)(x_eps(sigma) - x)
  // with x_eps(sigma) = x_start + sigma (F(z) + alpha), F = registry[base].
  // The tracking term vanishes on the designed path and damps replay drift.
  Vec z, x_start;
  double s = 0.0, tau = 0.0, gain = 0.0;
  std::string base;
  // field_difference: u(sigma, x) = A(x) - B(x) + inner(sigma, x)
  std::string a, b;
  std::shared_ptr<Descriptor> inner;
  // Analytic bound on |u| over the segment (steer and field_difference).
  double bound = 0.0;

  static Descriptor zero() { return {}; }
  static Descriptor constant(const Vec& alpha);
  static Descriptor field_difference(const std::string& a, const std::string& b, Descriptor inner, double bound);

  double analytic_bound() const;
  nlohmann::json to_json() const;  // {"kind", "params"}
  static Descriptor from_json(const nlohmann::json& j);
  bool operator==(const Descriptor& o) const;
};

struct Segment {
  double t0 = 0.0, t1 = 0.0;
  Descriptor d;
  double length() const { return t1 - t0; }
  bool operator==(const Segment& o) const { return t0 == o.t0 && t1 == o.t1 && d == o.d; }
};

struct ControlSchedule {
  std::vector<Segment> segments;
  double sup_cert = 0.0;

  bool empty() const { return segments.empty(); }
  double t_begin() const { return segments.empty() ? 0.0 : segments.front().t0; }
  double t_end() const { return segments.empty() ? 0.0 : segments.back().t1; }
  // Appends one segment; it must start where the schedule ends.
  void append(const Segment& s);
  // Right-continuous lookup; returns segments.size() outside the support.
  size_t find(double t) const;
  // Throws HypothesisViolation on gaps, overlaps or empty segments.
  void validate() const;

  nlohmann::json to_json() const;
  static ControlSchedule from_json(const nlohmann::json& j);
  void write(std::ostream& os) const;  // one segment per line
  static ControlSchedule read(std::istream& is);
  bool operator==(const ControlSchedule& o) const { return sup_cert == o.sup_cert && segments == o.segments; }
};

ControlSchedule concat(const ControlSchedule& u1, const ControlSchedule& u2);

using ControlFn = std::function<Vec(double, const Vec&)>;

// u(sigma, x) for one descriptor. When the first field of a field difference
// is a pushforward, the inner control sees Phi(x) and is transported by
// (DPhi)^{-1}.
ControlFn make_control(const Descriptor& d, const FieldRegistry& reg, int dim);
// V(x) + u(sigma, x). When d is a field difference whose subtracted field is
// base_id, the right-hand side is A(x) + inner(sigma, x): design and replay
// then evaluate identical floating-point expressions.
Rhs make_segment_rhs(const VectorField& V, const std::string& base_id, const Descriptor& d, const FieldRegistry& reg);

struct SegmentRun {
  Vec x_end;
  double sup_u = 0.0;  // max |u| at accepted steps
  long steps = 0;
  double budget = 0.0;
};

// Integrates one segment in local time from x0. The optional trajectory
// receives accepted steps (or only the end point) at global times.
SegmentRun run_segment(const VectorField& V, const std::string& base_id, const Segment& seg,
                       const FieldRegistry& reg, const Vec& x0, const Settings& s, Trajectory* traj = nullptr,
                       bool sample_u = true, bool boundaries_only = false);

struct ControlledOptions {
  bool boundaries_only = false;  // store segment end points only
  std::string base_id = "V";
};

struct ControlledRun {
  Trajectory traj;
  double sup_u = 0.0;
  long steps = 0;
};

// x' = V(x) + u(t) over [t0, t1]; zero control outside the schedule's support.
ControlledRun integrate_controlled(const VectorField& V, const ControlSchedule& u, const FieldRegistry& reg,
                                   const Vec& x0, double t0, double t1, const Settings& s,
                                   const ControlledOptions& opt = {});

// max of sampled |u| and the descriptors' analytic bounds. Field differences
// are sampled along traj when given, otherwise only their bound counts.
double sup_norm(const ControlSchedule& u, const FieldRegistry& reg, int dim, int samples_per_segment,
                const Trajectory* traj = nullptr);

}  // namespace steerkit
