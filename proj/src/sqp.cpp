#include "race/sqp.hpp"

#include <cmath>

namespace race {

namespace {

constexpr int NX = 10;
constexpr int NU = 3;

struct Iterate {
  std::vector<ModelState> zx;
  std::vector<ModelInput> zu;
};

// barrier gradient/Hessian contribution for one scalar with bounds
inline void barrier_scalar(double z, double lo, double hi, double mu,
                           double& grad, double& hess) {
  if (lo > -kUnbounded) {
    const double g = z - lo;
    grad -= mu / g;
    hess += mu / (g * g);
  }
  if (hi < kUnbounded) {
    const double g = hi - z;
    grad += mu / g;
    hess += mu / (g * g);
  }
}

// largest step keeping z + a*step strictly inside the box
inline double max_step_scalar(double z, double step, double lo, double hi,
                              double a) {
  const double margin = 0.995;
  if (step > 0.0 && hi < kUnbounded) {
    const double room = (hi - z) * margin;
    if (step * a > room) a = room / step;
  } else if (step < 0.0 && lo > -kUnbounded) {
    const double room = (z - lo) * margin;
    if (-step * a > room) a = room / (-step);
  }
  return a;
}

}  // namespace

QpSolution solve_box_qp(const std::vector<QpStage>& stages) {
  const int N = static_cast<int>(stages.size()) - 1;
  QpSolution sol;
  sol.dx.assign(N + 1, ModelState::Zero());
  sol.du.assign(N, ModelInput::Zero());

  Iterate it;
  it.zx.assign(N + 1, ModelState::Zero());
  it.zu.assign(N, ModelInput::Zero());

  // start strictly inside the box
  for (int k = 0; k <= N; ++k)
    for (int i = 0; i < NX; ++i) {
      const double lo = stages[k].x_rel_lo[i], hi = stages[k].x_rel_hi[i];
      if (lo > -kUnbounded || hi < kUnbounded) {
        const double pad = 1e-9 * std::max(1.0, hi - lo);
        it.zx[k][i] = clamp(0.0, lo + pad, hi - pad);
      }
    }
  it.zx[0].setZero();  // initial state is fixed
  for (int k = 0; k < N; ++k)
    for (int i = 0; i < NU; ++i) {
      const double lo = stages[k].u_rel_lo[i], hi = stages[k].u_rel_hi[i];
      const double pad = 1e-9 * std::max(1.0, hi - lo);
      it.zu[k][i] = clamp(0.0, lo + pad, hi - pad);
    }

  std::vector<ModelMatA> P(N + 1);
  std::vector<ModelState> p(N + 1);
  std::vector<Eigen::Matrix<double, NU, NX>> K(N);
  std::vector<ModelInput> kff(N);

  const double mus[] = {1e-2, 1e-4, 1e-6, 1e-8};
  for (double mu : mus) {
    for (int newton = 0; newton < 6; ++newton) {
      ++sol.newton_iters;

      // barrier-augmented stage data at the current iterate
      std::vector<ModelMatA> Qb(N + 1);
      std::vector<ModelState> qb(N + 1);
      std::vector<Eigen::Matrix3d> Rb(N);
      std::vector<ModelInput> rb(N);
      for (int k = 0; k <= N; ++k) {
        Qb[k] = stages[k].Q;
        qb[k] = stages[k].q + stages[k].Q * it.zx[k];
        for (int i = 0; i < NX; ++i) {
          double g = 0.0, h = 0.0;
          barrier_scalar(it.zx[k][i], stages[k].x_rel_lo[i],
                         stages[k].x_rel_hi[i], mu, g, h);
          qb[k][i] += g;
          Qb[k](i, i) += h;
        }
        Qb[k].diagonal().array() += 1e-9;
      }
      for (int k = 0; k < N; ++k) {
        Rb[k] = stages[k].R;
        rb[k] = stages[k].r + stages[k].R * it.zu[k];
        for (int i = 0; i < NU; ++i) {
          double g = 0.0, h = 0.0;
          barrier_scalar(it.zu[k][i], stages[k].u_rel_lo[i],
                         stages[k].u_rel_hi[i], mu, g, h);
          rb[k][i] += g;
          Rb[k](i, i) += h;
        }
        Rb[k].diagonal().array() += 1e-9;
      }

      // residual defects at the iterate
      std::vector<ModelState> dres(N);
      double defect_inf = 0.0;
      for (int k = 0; k < N; ++k) {
        dres[k] = stages[k].d + stages[k].A * it.zx[k] +
                  stages[k].B * it.zu[k] - it.zx[k + 1];
        defect_inf =
            std::max(defect_inf, dres[k].lpNorm<Eigen::Infinity>());
      }

      // backward Riccati sweep
      P[N] = Qb[N];
      p[N] = qb[N];
      bool fail = false;
      for (int k = N - 1; k >= 0; --k) {
        const ModelMatA& A = stages[k].A;
        const ModelMatB& B = stages[k].B;
        const ModelState px = p[k + 1] + P[k + 1] * dres[k];
        const Eigen::Matrix3d Huu =
            Rb[k] + B.transpose() * P[k + 1] * B;
        const Eigen::Matrix<double, NU, NX> Hux =
            B.transpose() * P[k + 1] * A;
        const ModelInput hu = rb[k] + B.transpose() * px;
        Eigen::LLT<Eigen::Matrix3d> llt(Huu);
        if (llt.info() != Eigen::Success) {
          fail = true;
          break;
        }
        K[k] = -llt.solve(Hux);
        kff[k] = -llt.solve(hu);
        P[k] = Qb[k] + A.transpose() * P[k + 1] * A +
               Hux.transpose() * K[k];
        P[k] = 0.5 * (P[k] + P[k].transpose()).eval();
        p[k] = qb[k] + A.transpose() * px + Hux.transpose() * kff[k];
      }
      if (fail) return sol;

      // forward pass for the Newton direction
      std::vector<ModelState> sx(N + 1, ModelState::Zero());
      std::vector<ModelInput> su(N);
      double step_inf = 0.0;
      for (int k = 0; k < N; ++k) {
        su[k] = K[k] * sx[k] + kff[k];
        sx[k + 1] =
            stages[k].A * sx[k] + stages[k].B * su[k] + dres[k];
        step_inf = std::max(step_inf, su[k].lpNorm<Eigen::Infinity>());
      }

      // fraction to the boundary
      double alpha = 1.0;
      for (int k = 0; k <= N; ++k)
        for (int i = 0; i < NX; ++i)
          alpha = max_step_scalar(it.zx[k][i], sx[k][i],
                                  stages[k].x_rel_lo[i],
                                  stages[k].x_rel_hi[i], alpha);
      for (int k = 0; k < N; ++k)
        for (int i = 0; i < NU; ++i)
          alpha = max_step_scalar(it.zu[k][i], su[k][i],
                                  stages[k].u_rel_lo[i],
                                  stages[k].u_rel_hi[i], alpha);

      for (int k = 0; k <= N; ++k) it.zx[k] += alpha * sx[k];
      it.zx[0].setZero();
      for (int k = 0; k < N; ++k) it.zu[k] += alpha * su[k];

      if (step_inf * alpha < 1e-10 && defect_inf < 1e-10) break;
    }
  }

  sol.dx = it.zx;
  sol.du = it.zu;
  sol.ok = true;
  for (const ModelState& x : sol.dx)
    if (!x.allFinite()) sol.ok = false;
  for (const ModelInput& u : sol.du)
    if (!u.allFinite()) sol.ok = false;
  return sol;
}

}  // namespace race
