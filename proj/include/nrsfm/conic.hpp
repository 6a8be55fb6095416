#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <string>
#include <vector>

namespace nrsfm {

/// One block of the cone product: either an equality block (slack pinned to
/// zero) or a second-order cone ||tail|| <= head.
struct ConeSpec {
  enum Kind { Zero, SecondOrder };
  Kind kind;
  int dim;
};

/// Sparse standard-form cone program
///   minimize    c'x
///   subject to  A x + s = b,   s in K,
/// where K is the ordered product of the cone blocks.
struct ConicProgram {
  Eigen::VectorXd c;
  Eigen::SparseMatrix<double> A;  // m x n, row-major order of cone blocks
  Eigen::VectorXd b;
  std::vector<ConeSpec> cones;

  int numVars() const { return static_cast<int>(c.size()); }
  int numRows() const { return static_cast<int>(b.size()); }

  /// Throws DataError when the cone dims do not tile the rows, a cone has
  /// dim < 1, A has an all-zero row, or any entry is non-finite.
  void validate() const;

  /// Debug dump (c, b dense; A as COO triplets; cone list) for cross-checks
  /// against external solvers.
  void dumpJson(const std::string& path) const;
};

enum class SolveStatus { Optimal, PrimalInfeasible, DualInfeasible, MaxIterations };

struct SolverResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // dual, in K*
  SolveStatus status = SolveStatus::MaxIterations;
  double primalResidual = 0.0;
  double dualResidual = 0.0;
  double gap = 0.0;
  int iterations = 0;
  double solveSeconds = 0.0;

  double objective(const ConicProgram& p) const { return p.c.dot(x); }
};

struct SolveOptions {
  double tol = 1e-7;
  int maxIter = 100000;
  double rho = 1.0;
  double rhoEqualityScale = 1e3;  // extra weight on Zero-cone rows
  double sigma = 1e-6;
  double relaxation = 1.6;
  bool adaptiveRho = true;
  int checkInterval = 25;
  double infeasibilityTol = 1e-7;
  /// Once the iterates reach polishStartTol, attempt an active-set Newton
  /// refinement: active cones become smooth equalities and the reduced KKT
  /// system is solved to high accuracy. Falls back to iterating on failure.
  bool polish = true;
  double polishStartTol = 1e-4;
  int polishMaxNewton = 30;
  /// Anderson acceleration memory for the fixed-point iteration; 0 disables.
  /// Extrapolated steps are safeguarded: one that does not shrink the
  /// fixed-point residual is rejected and the memory restarted.
  int accelMemory = 10;
  /// Stall acceptance: when no residual check improves the worst residual by
  /// 10% for `stallWindow` iterations and the best iterate seen is already
  /// within `stallAcceptFactor * tol`, that iterate is returned as optimal
  /// (its true residuals stay reported). 0 disables.
  int stallWindow = 5000;
  double stallAcceptFactor = 50.0;
  Eigen::VectorXd warmX;  // empty = cold start
  Eigen::VectorXd warmY;
};

/// First-order operator-splitting solve: alternating projections onto the
/// affine set and the cone product with dual updates, after Ruiz diagonal
/// equilibration of A (undone on output). Deterministic for fixed inputs.
SolverResult solve(const ConicProgram& program, const SolveOptions& opts = {});

const char* statusName(SolveStatus s);

using SolveBackend =
    std::function<SolverResult(const ConicProgram&, const SolveOptions&)>;

void registerBackend(const std::string& name, SolveBackend fn);
std::vector<std::string> backendNames();

/// Dispatch by backend name; "reference" is the built-in method. Unknown
/// names raise ConfigError.
SolverResult solveBackend(const ConicProgram& program, const std::string& name,
                          const SolveOptions& opts = {});

}  // namespace nrsfm
