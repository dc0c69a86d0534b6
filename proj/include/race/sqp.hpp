#pragma once

#include <vector>

#include "race/vehicle.hpp"

namespace race {

// One stage of the structured quadratic subproblem
//   min  sum_k 0.5 dx'Q dx + q'dx + 0.5 du'R du + r'du
//   s.t. dx_{k+1} = A dx_k + B du_k + d_k
//        x_lo <= x_k + dx_k <= x_hi   (selected components)
//        u_lo <= u_k + du_k <= u_hi
// Bounds with |value| >= kUnbounded are inactive.
struct QpStage {
  ModelMatA A = ModelMatA::Zero();
  ModelMatB B = ModelMatB::Zero();
  ModelState d = ModelState::Zero();  // defect: f(x_k, u_k) - x_{k+1}

  ModelMatA Q = ModelMatA::Zero();
  ModelState q = ModelState::Zero();
  Eigen::Matrix3d R = Eigen::Matrix3d::Zero();
  ModelInput r = ModelInput::Zero();

  ModelState x_rel_lo = ModelState::Constant(-1e19);  // bounds on dx
  ModelState x_rel_hi = ModelState::Constant(1e19);
  ModelInput u_rel_lo = ModelInput::Constant(-1e19);
  ModelInput u_rel_hi = ModelInput::Constant(1e19);
};

constexpr double kUnbounded = 1e18;

struct QpSolution {
  std::vector<ModelState> dx;
  std::vector<ModelInput> du;
  bool ok = false;
  int newton_iters = 0;
};

// Riccati-structured primal barrier solve of the box-constrained LQ
// problem. stages.size() == N+1; the terminal stage uses only Q/q and the
// state bounds. dx[0] is fixed to zero.
QpSolution solve_box_qp(const std::vector<QpStage>& stages);

}  // namespace race
