#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/vectorfield.hpp"

namespace steerkit {

// psi(x) = (|x|^2 + alpha^2)^(-p) with (d-1)/2 < p < d/2.
class PsiWeight {
 public:
  PsiWeight(int dim, double p, double alpha);
  // p at the midpoint of the admissible interval.
  static PsiWeight midpoint(int dim, double alpha);

  int dim() const { return dim_; }
  double p() const { return p_; }
  double alpha() const { return alpha_; }
  double operator()(const Vec& x) const;
  Vec grad(const Vec& x) const;
  // grad log psi = -2p x / (|x|^2 + alpha^2)
  Vec grad_log(const Vec& x) const;
  nlohmann::json to_json() const;

 private:
  int dim_;
  double p_, alpha_;
};

double psi_eval(const PsiWeight& w, const Vec& x);
Vec grad_psi(const PsiWeight& w, const Vec& x);

enum class CorrectionMethod { poisson, stream };
const char* correction_method_name(CorrectionMethod m);
CorrectionMethod correction_method_from_name(const std::string& s);

struct CorrectionSettings {
  CorrectionMethod method = CorrectionMethod::poisson;
  Box roi;                 // region of interest (required)
  int resolution = 256;    // grid intervals per axis (poisson)
  double p = 0.0;          // 0: midpoint
  double alpha0 = 0.0;     // 0: ROI diameter
  int max_doublings = 10;
  double residual_tol = 1e-6;
  int audit_resolution = 64;  // per axis, interior ROI grid
  int audit_samples = 4096;
  double fd_step = 1e-4;
  std::uint64_t seed = 11;
  // Return failures inside the result instead of throwing.
  bool strict = true;
};

struct CorrectionResult {
  VectorField field;
  PsiWeight weight{2, 0.75, 1.0};
  CorrectionMethod method = CorrectionMethod::poisson;
  double sup_delta = 0.0;      // sampled ||Vt - V||_inf
  double sup_delta_bound = kInf;  // analytic bound (stream method)
  double div_residual = 0.0;   // max |div(psi Vt)| on the audit grid
  double div_tilde_sup = 0.0;  // sampled ||div Vt||_inf
  double lip_estimate = 0.0;   // sampled Lip of Vt - V
  double alpha_used = 0.0;
  std::vector<double> alpha_history, sup_delta_history;
  nlohmann::json grid_meta;
  std::optional<ErrorCode> failure;
  nlohmann::json to_json() const;
};

// Builds Vt near V with div(psi Vt) = 0, doubling alpha until the sampled
// deviation drops below eps.
CorrectionResult correct(const VectorField& V, double eps, const CorrectionSettings& s);

// max over points of |div(psi F)| by central differences.
double check_weighted_divfree(const VectorField& F, const PsiWeight& w, const std::vector<Vec>& points, double h);

struct CertifyOptions {
  std::optional<Box> box;  // defaults to the correction ROI
  int n_points = 200;
  double radius = 1e-2;
  double T_max = 200.0;
  std::uint64_t seed = 3;
};

nlohmann::json certify_proposition(const VectorField& V, const CorrectionResult& r, double eps, const Box& roi,
                                   const CertifyOptions& opt = {});

// Interior audit grid of the ROI (n per axis, 5% inset).
std::vector<Vec> audit_grid(const Box& roi, int n);

}  // namespace steerkit
