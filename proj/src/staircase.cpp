#include <csba/staircase.hpp>

#include <csba/geometry.hpp>

#include <Eigen/SVD>

#include <json.hpp>

#include <cmath>
#include <limits>

namespace csba {

void write_trace_line(std::ostream& out, const TraceRecord& r) {
  nlohmann::json j = {{"kind", r.kind}, {"rank", r.rank}, {"iteration", r.iteration},
                      {"objective", r.objective}};
  if (r.kind == "iteration") {
    j["grad_norm"] = r.grad_norm;
    j["radius"] = r.radius;
    j["rho"] = r.rho;
    j["inner"] = r.inner;
    j["accepted"] = r.accepted;
  } else if (r.kind == "certificate") {
    j["min_eigenvalue"] = r.min_eigenvalue;
    j["grad_norm"] = r.grad_norm;
  } else if (r.kind == "escape") {
    j["alpha"] = r.alpha;
    j["min_eigenvalue"] = r.min_eigenvalue;
  }
  out << j.dump() << '\n';
}

void TrustRegionOptions::validate() const {
  if (!(acceptance_threshold > 0.0 && acceptance_threshold <= 0.25)) {
    throw Error("acceptance threshold must lie in (0, 1/4]");
  }
  if (max_outer_iterations <= 0 || tcg_max_inner <= 0) throw Error("iteration caps must be positive");
  if (!(gradient_tolerance > 0.0 && tcg_kappa > 0.0 && tcg_theta > 0.0)) {
    throw Error("tolerances must be positive");
  }
}

namespace {

struct InnerResult {
  TangentVector eta;
  TangentVector h_eta;
  int iterations = 0;
  bool hit_boundary = false;
};

// Steihaug-Toint truncated CG on the trust-region subproblem.
InnerResult truncated_cg(const Cost& cost, const FactorPoint& x, const PointCache& cache,
                         double radius, const TrustRegionOptions& o) {
  InnerResult out{TangentVector::zero(x), TangentVector::zero(x)};
  TangentVector r = cache.grad;
  double rr = inner(r, r);
  const double r0 = std::sqrt(rr);
  TangentVector delta = -1.0 * r;
  double ee = 0.0;  // <eta, eta>
  const double target = r0 * std::min(std::pow(r0, o.tcg_theta), o.tcg_kappa);

  for (int j = 0; j < o.tcg_max_inner; ++j) {
    out.iterations = j + 1;
    const TangentVector hd = hessian_vector_product(cost, x, cache, delta);
    const double dhd = inner(delta, hd);
    const double ed = inner(out.eta, delta);
    const double dd = inner(delta, delta);
    const double alpha = rr / dhd;
    const double ee_next = ee + 2.0 * alpha * ed + alpha * alpha * dd;
    if (dhd <= 0.0 || ee_next >= radius * radius) {
      // Step to the boundary along delta.
      const double tau = (-ed + std::sqrt(std::max(0.0, ed * ed + dd * (radius * radius - ee)))) / dd;
      out.eta += tau * delta;
      out.h_eta += tau * hd;
      out.hit_boundary = true;
      return out;
    }
    out.eta += alpha * delta;
    out.h_eta += alpha * hd;
    ee = ee_next;
    r += alpha * hd;
    const double rr_next = inner(r, r);
    if (std::sqrt(rr_next) <= target) return out;
    const double beta = rr_next / rr;
    rr = rr_next;
    delta = beta * delta - r;
  }
  return out;
}

}  // namespace

TrustRegionResult rtr_minimize(const Cost& cost, const FactorPoint& start,
                               const TrustRegionOptions& options, const TraceCallback& trace) {
  options.validate();
  start.validate(1e-8);
  const int n = start.num_frames();
  if (n != cost.num_frames()) throw Error("start point does not match Q");
  const double q_scale = std::max(1.0, cost.q().norm());
  const double tol = options.gradient_tolerance * q_scale;
  const double initial = options.initial_radius > 0 ? options.initial_radius : 0.1 * std::sqrt(3.0 * n);
  const double max_radius = options.max_radius > 0 ? options.max_radius : 10.0 * initial;
  double radius = std::min(initial, max_radius);

  TrustRegionResult res;
  res.point = start;
  PointCache cache = evaluate(cost, res.point);
  const double eps = std::numeric_limits<double>::epsilon();

  for (int it = 1;; ++it) {
    res.iterations = it;
    res.objective = cache.value;
    res.grad_norm = norm(cache.grad);
    res.grad_history.push_back(res.grad_norm);
    if (res.grad_norm <= tol) {
      res.converged = true;
      break;
    }
    if (it >= options.max_outer_iterations || radius < 1e-15 * initial) break;

    const InnerResult step = truncated_cg(cost, res.point, cache, radius, options);
    FactorPoint candidate;
    PointCache next;
    double rho = -std::numeric_limits<double>::infinity();
    try {
      candidate = retract(res.point, step.eta, 1.0);
      next = evaluate(cost, candidate);
      const double model_decrease = -inner(cache.grad, step.eta) - 0.5 * inner(step.eta, step.h_eta);
      // Guard the ratio against roundoff when both decreases are tiny.
      const double reg = 1e3 * eps * std::max(1.0, std::abs(cache.value));
      rho = (cache.value - next.value + reg) / (model_decrease + reg);
    } catch (const Error&) {
      // A step that collapses a block counts as a failed step.
    }
    if (!std::isfinite(rho)) rho = -std::numeric_limits<double>::infinity();

    if (rho < 0.25) {
      radius /= 4.0;
    } else if (rho > 0.75 && step.hit_boundary) {
      radius = std::min(2.0 * radius, max_radius);
    }
    const bool accept = rho > options.acceptance_threshold && next.value <= cache.value;
    if (trace) {
      TraceRecord t;
      t.kind = "iteration";
      t.rank = start.rank();
      t.iteration = it;
      t.objective = cache.value;
      t.grad_norm = res.grad_norm;
      t.radius = radius;
      t.rho = rho;
      t.inner = step.iterations;
      t.accepted = accept;
      trace(t);
    }
    if (accept) {
      res.point = candidate;
      cache = next;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

namespace {

// Restores U_i^T U_i = s_i^2 I block by block; the first scale is 1.
FactorPoint refeasibilize(const Matrix& u) {
  FactorPoint x = FactorPoint::from_factor(u);
  x.scales(0) = 1.0;
  return x;
}

}  // namespace

EscapeResult escape_direction(const Cost& cost, const FactorPoint& x, double eigenvalue,
                              const Vector& v) {
  if (!(eigenvalue < 0.0)) throw Error("escape requires a negative eigenvalue");
  if (v.size() != 3 * x.num_frames()) throw Error("eigenvector length mismatch");
  const Vector dir = v / v.norm();

  EscapeResult out;
  const Matrix u = x.assemble();
  out.objective_before = cost.value(u);
  Matrix lifted(u.rows() + 1, u.cols());
  lifted.topRows(u.rows()) = u;

  double alpha = u.norm();
  for (int halving = 0; halving <= 60; ++halving) {
    lifted.row(u.rows()) = alpha * dir.transpose();
    try {
      FactorPoint y = refeasibilize(lifted);
      const double value = cost.value(y);
      if (value < out.objective_before) {
        out.point = std::move(y);
        out.alpha = alpha;
        out.objective_after = value;
        out.halvings = halving;
        return out;
      }
    } catch (const Error&) {
      // A degenerate block at this alpha; keep shrinking.
    }
    alpha /= 2.0;
  }
  throw Error("escape failed");
}

StaircaseResult staircase(const Cost& cost, const StaircaseOptions& options) {
  const int n = cost.num_frames();
  if (options.max_rank < 3) throw Error("rank cap must be at least 3");
  FactorPoint x;
  if (options.start) {
    x = *options.start;
  } else if (options.random_start) {
    std::mt19937_64 rng(options.seed);
    x = FactorPoint::random(n, 3, rng);
  } else {
    x = FactorPoint::identity(n, 3);
  }

  StaircaseResult res;
  for (;;) {
    const int r = x.rank();
    const TrustRegionResult local = rtr_minimize(cost, x, options.trust_region, options.trace);
    res.rank_trajectory.push_back(r);
    res.iterations.push_back(local.iterations);
    res.factor = local.point;
    res.objective = local.objective;
    res.converged = local.converged;
    res.certificate = certify(cost, local.point, options.certificate);
    res.certified = res.certificate.certified;
    if (options.trace) {
      TraceRecord t;
      t.kind = "certificate";
      t.rank = r;
      t.iteration = local.iterations;
      t.objective = local.objective;
      t.grad_norm = local.grad_norm;
      t.min_eigenvalue = res.certificate.min_eigenvalue;
      options.trace(t);
    }
    if (res.certified || r + 1 > options.max_rank) break;

    EscapeResult esc = escape_direction(cost, local.point, res.certificate.min_eigenvalue,
                                        res.certificate.min_eigenvector);
    if (options.trace) {
      TraceRecord t;
      t.kind = "escape";
      t.rank = r + 1;
      t.objective = esc.objective_after;
      t.alpha = esc.alpha;
      t.min_eigenvalue = res.certificate.min_eigenvalue;
      options.trace(t);
    }
    x = esc.point;
    res.escapes.push_back(std::move(esc));
  }
  return res;
}

FactorPoint adversarial_two_frame_start(const Matrix& q) {
  if (q.rows() != 6 || q.cols() != 6) throw Error("adversarial start needs two frames");
  Eigen::JacobiSVD<Matrix3> svd(q.block<3, 3>(0, 3), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix3 g = svd.matrixU() * Vector3(-1, -1, 1).asDiagonal() * svd.matrixV().transpose();
  const double t = q.block<3, 3>(3, 3).trace();
  const double s = -q.block<3, 3>(0, 3).cwiseProduct(g).sum() / t;
  if (!(t > 0.0 && s > 0.0)) throw Error("adversarial start undefined for this Q");
  FactorPoint x = FactorPoint::identity(2, 3);
  x.frame(1) = g;
  x.scales(1) = s;
  return x;
}

}  // namespace csba
