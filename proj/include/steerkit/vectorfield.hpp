#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerkit/vec.hpp"

namespace steerkit {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Provenance { analytic, stream2d, potential3d, corrected, pushforward, sampled_grid };

const char* provenance_name(Provenance p);

struct Box {
  Vec lo, hi;
  int dim() const { return static_cast<int>(lo.size()); }
  Vec center() const { return 0.5 * (lo + hi); }
  double diameter() const { return (hi - lo).norm(); }
  bool contains(const Vec& x) const;
};

// Stream function (d=2, V=(h_y,-h_x)) or vector potential (d=3, V=curl A)
// kept alongside a field built from one.
struct Potential {
  int dim = 2;
  std::function<double(const Vec&)> h;
  std::function<Vec(const Vec&)> A;
  std::function<Mat(const Vec&)> dA;
  double sup = kInf;       // sup |h| or sup |A|
  double grad_sup = kInf;  // sup |grad h| or sup |DA|
  // Optional fused evaluation returning V(x) and writing h(x).
  std::function<Vec(const Vec&, double&)> eval_with_h;
};

class VectorField {
 public:
  using EvalFn = std::function<Vec(const Vec&)>;
  using JacFn = std::function<Mat(const Vec&)>;

  VectorField() = default;
  VectorField(int dim, EvalFn f, JacFn jac, double sup_bound, double lip_bound, Provenance prov,
              std::string name = "");

  int dim() const { return dim_; }
  Vec operator()(const Vec& x) const { return f_(x); }
  bool has_jacobian() const { return static_cast<bool>(jac_); }
  // Analytic Jacobian when present, central differences otherwise.
  Mat jacobian(const Vec& x, double h = 1e-6) const;

  double sup_bound = kInf;
  double lip_bound = kInf;
  Provenance provenance = Provenance::analytic;
  std::string name;
  // Flat cube torus of this period when set; states are identified modulo it.
  std::optional<double> period;
  std::shared_ptr<const Potential> potential;
  // Pushforward fields carry y -> (DPhi(y))^{-1} and y -> Phi(y) so additive
  // controls designed for the original field can be transported.
  std::function<Mat(const Vec&)> transport;
  std::function<Vec(const Vec&)> chart;

  const EvalFn& eval_fn() const { return f_; }
  const JacFn& jac_fn() const { return jac_; }

 private:
  int dim_ = 0;
  EvalFn f_;
  JacFn jac_;
};

struct ScalarField {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
  double sup = kInf;
};

struct VectorPotential {
  std::function<Vec(const Vec&)> value;
  std::function<Mat(const Vec&)> jacobian;
  double sup = kInf;
  double jac_sup = kInf;
};

VectorField from_stream_function_2d(const ScalarField& h, double sup_bound, double lip_bound,
                                    const std::string& name = "stream2d");
VectorField from_vector_potential_3d(const VectorPotential& A, double sup_bound, double lip_bound,
                                     const std::string& name = "potential3d");

// Builtin fields: cellular, rotation, constant, shear, abc. Parameters are
// listed in the README.
VectorField builtin_field(const std::string& name, const std::map<std::string, double>& params, int dim = 2);

VectorField expression_field(const std::vector<std::string>& components, const std::map<std::string, double>& params,
                             double sup_bound = kInf, double lip_bound = kInf);

struct GridData {
  Box box;
  std::vector<int> n;               // nodes per axis
  std::vector<double> values;       // component-major: values[c * nodes + flat(i)]
};
VectorField grid_field(const GridData& g, double sup_bound = kInf, double lip_bound = kInf);

struct FieldSpec {
  enum class Kind { builtin, expression, grid } kind = Kind::builtin;
  std::string name = "cellular";
  std::map<std::string, double> params;
  std::vector<std::string> expressions;
  std::optional<GridData> grid;
  std::optional<Box> domain_box;
  std::optional<double> period;
  std::optional<double> sup_bound;
  std::optional<double> lip_bound;
  int dim = 2;
};

VectorField build_field(const FieldSpec& spec);
FieldSpec field_spec_from_json(const nlohmann::json& j);
nlohmann::json field_spec_to_json(const FieldSpec& spec);

// ---------------------------------------------------------------- estimators

double estimate_divergence(const VectorField& V, const Vec& x, double h);

struct NormEstimate {
  double sup = 0.0;
  double lip = 0.0;
};
NormEstimate estimate_norms(const VectorField& V, const Box& region, int n_samples, std::uint64_t seed);

// Aborts with HypothesisViolation when a sampled estimate exceeds the
// declared bound.
void audit_declared_bounds(const VectorField& V, const Box& region, int n_samples, std::uint64_t seed);

double mean_drift(const VectorField& V, double ell, const std::vector<Vec>& anchors, int resolution = 64);

enum class DriftVerdict { vanishing, nonvanishing, inconclusive };
const char* verdict_name(DriftVerdict v);

struct DriftReport {
  std::vector<double> box_sizes;
  std::vector<double> drifts;
  int anchors_used = 0;
  double threshold = 0.0;
  DriftVerdict verdict = DriftVerdict::inconclusive;
  nlohmann::json to_json() const;
};

std::vector<Vec> default_anchors(int dim);
DriftReport check_vmd(const VectorField& V, const std::vector<double>& ell_schedule, double threshold,
                      const std::vector<Vec>& anchors = {}, int resolution = 64, double slack = 0.1);

// Low-discrepancy points (Halton, first d primes) in [0,1)^d.
double halton(std::uint64_t index, int base);
Vec halton_point(std::uint64_t index, int dim);
// Deterministic point of the open ball B_r(c) from a Halton index.
Vec halton_in_ball(std::uint64_t index, const Vec& c, double r);

}  // namespace steerkit
