#include "nrsfm/conic.hpp"

#include <Eigen/SparseCholesky>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>

#include <nlohmann/json.hpp>

#include "nrsfm/errors.hpp"

namespace nrsfm {

void ConicProgram::validate() const {
  if (A.rows() != b.size() || A.cols() != c.size())
    throw DataError("conic: dimension mismatch between A, b, c");
  long long total = 0;
  for (const ConeSpec& cone : cones) {
    if (cone.dim < 1) throw DataError("conic: cone with dim < 1");
    total += cone.dim;
  }
  if (total != A.rows())
    throw DataError("conic: cone dims do not sum to the number of rows");
  if (!b.allFinite() || !c.allFinite())
    throw DataError("conic: non-finite entry in b or c");
  std::vector<char> rowHasEntry(A.rows(), 0);
  for (int k = 0; k < A.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) {
      if (!std::isfinite(it.value()))
        throw DataError("conic: non-finite entry in A");
      if (it.value() != 0.0) rowHasEntry[it.row()] = 1;
    }
  for (int r = 0; r < A.rows(); ++r)
    if (!rowHasEntry[r])
      throw DataError("conic: all-zero row " + std::to_string(r) + " in A");
}

void ConicProgram::dumpJson(const std::string& path) const {
  nlohmann::json j;
  j["num_vars"] = numVars();
  j["num_rows"] = numRows();
  j["c"] = std::vector<double>(c.data(), c.data() + c.size());
  j["b"] = std::vector<double>(b.data(), b.data() + b.size());
  nlohmann::json triplets = nlohmann::json::array();
  for (int k = 0; k < A.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it)
      triplets.push_back({it.row(), it.col(), it.value()});
  j["A_coo"] = triplets;
  nlohmann::json cs = nlohmann::json::array();
  for (const ConeSpec& cone : cones)
    cs.push_back({{"kind", cone.kind == ConeSpec::Zero ? "zero" : "soc"},
                  {"dim", cone.dim}});
  j["cones"] = cs;
  std::ofstream out(path);
  if (!out) throw DataError("conic: cannot write " + path);
  out << j.dump(2) << '\n';
}

namespace {

// Projection of one cone block in place.
void projectBlock(const ConeSpec& cone, double* v) {
  if (cone.kind == ConeSpec::Zero) {
    for (int i = 0; i < cone.dim; ++i) v[i] = 0.0;
    return;
  }
  if (cone.dim == 1) {
    v[0] = std::max(v[0], 0.0);
    return;
  }
  double t = v[0];
  double nz = 0.0;
  for (int i = 1; i < cone.dim; ++i) nz += v[i] * v[i];
  nz = std::sqrt(nz);
  if (nz <= t) return;
  if (nz <= -t) {
    for (int i = 0; i < cone.dim; ++i) v[i] = 0.0;
    return;
  }
  double a = 0.5 * (t + nz);
  v[0] = a;
  double scale = a / nz;
  for (int i = 1; i < cone.dim; ++i) v[i] *= scale;
}

// Distance of a block from its cone (0 when inside). Used for certificate
// membership checks.
double coneViolation(const ConeSpec& cone, const double* v) {
  if (cone.kind == ConeSpec::Zero) {
    double m = 0.0;
    for (int i = 0; i < cone.dim; ++i) m = std::max(m, std::abs(v[i]));
    return m;
  }
  if (cone.dim == 1) return std::max(0.0, -v[0]);
  double nz = 0.0;
  for (int i = 1; i < cone.dim; ++i) nz += v[i] * v[i];
  return std::max(0.0, std::sqrt(nz) - v[0]);
}

struct Scaling {
  Eigen::VectorXd D;  // row scaling, uniform within each cone block
  Eigen::VectorXd E;  // column scaling
  double costScale = 1.0;
};

// Ruiz-style equilibration with block-uniform row scaling so the cones are
// preserved.
Scaling equilibrate(Eigen::SparseMatrix<double>& A, Eigen::VectorXd& b,
                    Eigen::VectorXd& c, const std::vector<ConeSpec>& cones) {
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  Scaling s;
  s.D = Eigen::VectorXd::Ones(m);
  s.E = Eigen::VectorXd::Ones(n);

  std::vector<int> blockOfRow(m);
  {
    int r = 0;
    for (size_t bi = 0; bi < cones.size(); ++bi)
      for (int i = 0; i < cones[bi].dim; ++i) blockOfRow[r++] = static_cast<int>(bi);
  }

  for (int pass = 0; pass < 10; ++pass) {
    Eigen::VectorXd rowMax = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd colMax = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < A.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) {
        double a = std::abs(it.value());
        rowMax[it.row()] = std::max(rowMax[it.row()], a);
        colMax[it.col()] = std::max(colMax[it.col()], a);
      }
    // Uniform within each block: scale by the block max.
    Eigen::VectorXd blockMax = Eigen::VectorXd::Zero(cones.size());
    for (int r = 0; r < m; ++r)
      blockMax[blockOfRow[r]] = std::max(blockMax[blockOfRow[r]], rowMax[r]);
    Eigen::VectorXd dr(m), dc(n);
    for (int r = 0; r < m; ++r) {
      double v = blockMax[blockOfRow[r]];
      dr[r] = v > 1e-12 ? 1.0 / std::sqrt(v) : 1.0;
    }
    for (int j = 0; j < n; ++j)
      dc[j] = colMax[j] > 1e-12 ? 1.0 / std::sqrt(colMax[j]) : 1.0;
    A = dr.asDiagonal() * A * dc.asDiagonal();
    s.D.array() *= dr.array();
    s.E.array() *= dc.array();
  }
  b.array() *= s.D.array();
  c.array() *= s.E.array();
  double cInf = c.lpNorm<Eigen::Infinity>();
  s.costScale = cInf > 1e-8 ? 1.0 / cInf : 1.0;
  s.costScale = std::clamp(s.costScale, 1e-8, 1e8);
  c *= s.costScale;
  return s;
}

struct Residuals {
  double primal, dual, gap;
};

Residuals computeResiduals(const ConicProgram& program, const Eigen::VectorXd& xu,
                           const Eigen::VectorXd& su, const Eigen::VectorXd& yu) {
  Residuals r;
  Eigen::VectorXd Ax = program.A * xu;
  double pr = (Ax + su - program.b).lpNorm<Eigen::Infinity>();
  double pd = std::max({1.0, Ax.lpNorm<Eigen::Infinity>(),
                        su.lpNorm<Eigen::Infinity>(),
                        program.b.lpNorm<Eigen::Infinity>()});
  r.primal = pr / pd;
  Eigen::VectorXd Aty = program.A.transpose() * yu;
  double dr = (program.c + Aty).lpNorm<Eigen::Infinity>();
  double dd = std::max({1.0, program.c.lpNorm<Eigen::Infinity>(),
                        Aty.lpNorm<Eigen::Infinity>()});
  r.dual = dr / dd;
  double pobj = program.c.dot(xu);
  double dobj = -program.b.dot(yu);
  r.gap = std::abs(pobj - dobj) / std::max({1.0, std::abs(pobj), std::abs(dobj)});
  return r;
}

// Refinement of a moderately accurate iterate pair to the configured
// tolerance. The cone program is treated as the smooth nonlinear problem
//   minimize c'x  s.t.  b_e - A_e x = 0  (zero blocks),
//                       h_k(x) = ||b_t - A_t x|| - (b_h - a_h'x) <= 0,
// and solved by an augmented-Lagrangian method of multipliers with
// Gauss-Newton inner iterations, warm-started from the solver iterates.
// No active-set identification is needed -- near-degenerate instances with
// many barely-tight cones are exactly the ones that stall the first-order
// tail. The refined pair is accepted only when its unscaled residuals
// actually meet `tol`; otherwise the caller keeps iterating.
bool polishSolution(const ConicProgram& P, const Eigen::VectorXd& x0,
                    const Eigen::VectorXd& y0, double tol, int maxNewton,
                    Eigen::VectorXd* xOut, Eigen::VectorXd* yOut,
                    Residuals* rrOut) {
  const int n = P.numVars();
  Eigen::SparseMatrix<double, Eigen::RowMajor> Ar(P.A);

  struct Block {
    int row, dim;
  };
  std::vector<int> eqRows;
  std::vector<Block> blocks;
  {
    int r = 0;
    for (const ConeSpec& cone : P.cones) {
      if (cone.kind == ConeSpec::Zero)
        for (int i = 0; i < cone.dim; ++i) eqRows.push_back(r + i);
      else
        blocks.push_back({r, cone.dim});
      r += cone.dim;
    }
  }
  const int me = static_cast<int>(eqRows.size());
  const int mk = static_cast<int>(blocks.size());

  auto rowDot = [&](int row, const Eigen::VectorXd& v) {
    double acc = 0.0;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Ar, row);
         it; ++it)
      acc += it.value() * v[it.col()];
    return acc;
  };

  // h_k and, on request, its gradient a_h - A_t' t_hat accumulated sparsely.
  auto coneValue = [&](const Block& blk, const Eigen::VectorXd& xc, bool* ok,
                       std::map<int, double>* grad) {
    if (blk.dim == 1) {
      if (grad)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(
                 Ar, blk.row);
             it; ++it)
          (*grad)[static_cast<int>(it.col())] += it.value();
      return rowDot(blk.row, xc) - P.b[blk.row];
    }
    Eigen::VectorXd t(blk.dim - 1);
    for (int i = 1; i < blk.dim; ++i)
      t[i - 1] = P.b[blk.row + i] - rowDot(blk.row + i, xc);
    double tn = t.norm();
    if (tn < 1e-14) {
      *ok = false;
      return 0.0;
    }
    if (grad) {
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(
               Ar, blk.row);
           it; ++it)
        (*grad)[static_cast<int>(it.col())] += it.value();
      for (int i = 1; i < blk.dim; ++i)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(
                 Ar, blk.row + i);
             it; ++it)
          (*grad)[static_cast<int>(it.col())] -= (t[i - 1] / tn) * it.value();
    }
    return tn - (P.b[blk.row] - rowDot(blk.row, xc));
  };

  Eigen::VectorXd x = x0;
  Eigen::VectorXd lam(me), mu(mk);
  for (int e = 0; e < me; ++e) lam[e] = y0[eqRows[e]];
  for (int k = 0; k < mk; ++k) mu[k] = std::max(0.0, y0[blocks[k].row]);

  const double cScale = std::max(1.0, P.c.lpNorm<Eigen::Infinity>());
  const double gtol = 0.05 * tol * cScale;
  const double ftol = 0.05 * tol;
  double rho = 1e5;

  // Change of the augmented-Lagrangian value along a step, accumulated
  // term-by-term from differences: near the optimum the step improvements
  // sit far below the floating-point resolution of the total, so comparing
  // two evaluations of the whole sum rejects genuine descent steps.
  auto evalDeltaQ = [&](const Eigen::VectorXd& xc, const Eigen::VectorXd& dx,
                        bool* ok) {
    *ok = true;
    double dq = P.c.dot(dx);
    Eigen::VectorXd x1 = xc + dx;
    for (int e = 0; e < me; ++e) {
      double w0 = rowDot(eqRows[e], xc) - P.b[eqRows[e]] + lam[e] / rho;
      double dw = rowDot(eqRows[e], dx);
      dq += 0.5 * rho * dw * (2.0 * w0 + dw);
    }
    for (int k = 0; k < mk; ++k) {
      double h0 = coneValue(blocks[k], xc, ok, nullptr);
      if (!*ok) return dq;
      double h1 = coneValue(blocks[k], x1, ok, nullptr);
      if (!*ok) return dq;
      double w0 = std::max(0.0, h0 + mu[k] / rho);
      double w1 = std::max(0.0, h1 + mu[k] / rho);
      dq += 0.5 * rho * (w1 - w0) * (w1 + w0);
    }
    return dq;
  };

  bool ok = true;
  bool converged = false;
  double feasPrev = std::numeric_limits<double>::infinity();
  double feasLast = std::numeric_limits<double>::infinity();
  double statBest = std::numeric_limits<double>::infinity();
  Eigen::VectorXd xBest = x, lamBest = lam, muBest = mu;
  double lmDamp = 1e-3;
  for (int outer = 0; outer < 14 && !converged; ++outer) {
    lmDamp = std::clamp(lmDamp, 1e-9, 1e-3);
    for (int inner = 0; inner < 2 * maxNewton; ++inner) {
      // Gradient and full Hessian of the augmented Lagrangian. The curvature
      // of the cone surfaces (I - t_hat t_hat')/||t|| weighted by the active
      // multiplier estimate must be included: a Gauss-Newton model prices
      // tangential moves along the active manifold as free and stalls there.
      Eigen::VectorXd grad = P.c;
      std::vector<Eigen::Triplet<double>> hb;
      auto addOuter = [&](const std::map<int, double>& v, double w) {
        for (const auto& [c1, v1] : v)
          for (const auto& [c2, v2] : v)
            hb.emplace_back(c1, c2, w * v1 * v2);
      };
      for (int e = 0; e < me; ++e) {
        double h = rowDot(eqRows[e], x) - P.b[eqRows[e]] + lam[e] / rho;
        std::map<int, double> a;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(
                 Ar, eqRows[e]);
             it; ++it) {
          grad[it.col()] += rho * h * it.value();
          a[static_cast<int>(it.col())] += it.value();
        }
        addOuter(a, rho);
      }
      for (int k = 0; k < mk; ++k) {
        const Block& blk = blocks[k];
        std::map<int, double> g;
        double h = coneValue(blk, x, &ok, &g) + mu[k] / rho;
        if (!ok) return false;
        if (h <= 0.0) continue;
        for (const auto& [col, v] : g) grad[col] += rho * h * v;
        addOuter(g, rho);
        if (blk.dim > 1) {
          Eigen::VectorXd t(blk.dim - 1);
          for (int i = 1; i < blk.dim; ++i)
            t[i - 1] = P.b[blk.row + i] - rowDot(blk.row + i, x);
          double tn = t.norm();
          if (tn < 1e-14) return false;
          double w = rho * h / tn;
          std::map<int, double> u;  // A_t' t_hat
          for (int i = 1; i < blk.dim; ++i)
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator
                     it(Ar, blk.row + i);
                 it; ++it)
              u[static_cast<int>(it.col())] += (t[i - 1] / tn) * it.value();
          for (int i = 1; i < blk.dim; ++i) {
            std::map<int, double> a;
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator
                     it(Ar, blk.row + i);
                 it; ++it)
              a[static_cast<int>(it.col())] += it.value();
            addOuter(a, w);
          }
          addOuter(u, -w);
        }
      }
      if (grad.lpNorm<Eigen::Infinity>() <= gtol) break;

      Eigen::SparseMatrix<double> H0(n, n);
      H0.setFromTriplets(hb.begin(), hb.end());
      Eigen::SparseMatrix<double> I(n, n);
      I.setIdentity();
      // Levenberg-Marquardt on the damping: it must be allowed to shrink for
      // the tangential objective descent to make progress, yet grow when the
      // quadratic model misleads.
      bool accepted = false;
      for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
        Eigen::SparseMatrix<double> H = H0;
        H += lmDamp * I;
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(H);
        if (ldlt.info() != Eigen::Success) {
          lmDamp *= 10.0;
          continue;
        }
        Eigen::VectorXd dx = ldlt.solve(-grad);
        if (!dx.allFinite()) {
          lmDamp *= 10.0;
          continue;
        }
        double dq = evalDeltaQ(x, dx, &ok);
        if (ok && dq < 0.0) {
          x += dx;
          accepted = true;
          lmDamp = std::max(lmDamp * 0.2, 1e-9);
        } else {
          lmDamp *= 10.0;
          // Astronomical damping means no descent is expressible at double
          // precision: inner convergence.
          if (lmDamp > 1e12) break;
        }
      }
      if (!accepted) break;
    }

    // Safeguarded multiplier update: accept the estimates only when the
    // subproblem actually improved feasibility, otherwise raise the penalty
    // and retry -- updating from a stale iterate blows the multipliers up.
    double feas = 0.0;
    for (int e = 0; e < me; ++e)
      feas = std::max(feas, std::abs(rowDot(eqRows[e], x) - P.b[eqRows[e]]));
    for (int k = 0; k < mk; ++k) {
      double h = coneValue(blocks[k], x, &ok, nullptr);
      if (!ok) return false;
      feas = std::max(feas, h);
    }
    if (feas <= std::max(ftol, 0.25 * feasPrev)) {
      for (int e = 0; e < me; ++e)
        lam[e] += rho * (rowDot(eqRows[e], x) - P.b[eqRows[e]]);
      for (int k = 0; k < mk; ++k) {
        double h = coneValue(blocks[k], x, &ok, nullptr);
        if (!ok) return false;
        mu[k] = std::max(0.0, mu[k] + rho * h);
      }
    } else {
      rho = std::min(rho * 10.0, 1e11);
      lmDamp = 1e-3;
      feasPrev = feas;
      feasLast = feas;
      continue;
    }
    Eigen::VectorXd stat = P.c;
    for (int e = 0; e < me; ++e)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(
               Ar, eqRows[e]);
           it; ++it)
        stat[it.col()] += lam[e] * it.value();
    for (int k = 0; k < mk; ++k) {
      if (mu[k] == 0.0) continue;
      std::map<int, double> g;
      coneValue(blocks[k], x, &ok, &g);
      if (!ok) return false;
      for (const auto& [col, v] : g) stat[col] += mu[k] * v;
    }
    double statNow = stat.lpNorm<Eigen::Infinity>();
    feasLast = feas;
    feasPrev = feas;
    converged = feas <= ftol && statNow <= gtol;
    if (feas <= ftol) {
      if (statNow < statBest) {
        statBest = statNow;
        xBest = x;
        lamBest = lam;
        muBest = mu;
      } else if (!converged) {
        break;  // feasible and stationarity no longer improving
      }
    }
  }
  if (feasLast > ftol && statBest == std::numeric_limits<double>::infinity())
    return false;
  if (!converged) {
    x = xBest;
    lam = lamBest;
    mu = muBest;
  }

  // Degenerate complementarity (a tight cone with zero multiplier whose
  // gradient the stationarity equation needs) stalls the multiplier
  // estimates even though x itself has converged. Recover the duals
  // directly: minimize ||c + G z|| over the gradients of the equalities
  // (free sign) and of every cone tight at x (nonnegative sign), by
  // active-set moves on the passive set.
  for (double sTol : {std::max(1e2 * feasLast, 1e-9), 1e-8, 1e-7, 1e-6}) {
    if (converged) break;
    std::vector<int> tight;
    for (int k = 0; k < mk; ++k) {
      double h = coneValue(blocks[k], x, &ok, nullptr);
      if (!ok) return false;
      if (h >= -sTol * std::max(1.0, std::abs(P.b[blocks[k].row])))
        tight.push_back(k);
    }
    const int ma = static_cast<int>(tight.size());
    std::vector<Eigen::Triplet<double>> gt;
    for (int e = 0; e < me; ++e)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(
               Ar, eqRows[e]);
           it; ++it)
        gt.emplace_back(static_cast<int>(it.col()), e, it.value());
    for (int j = 0; j < ma; ++j) {
      std::map<int, double> g;
      coneValue(blocks[tight[j]], x, &ok, &g);
      if (!ok) return false;
      for (const auto& [col, v] : g)
        if (v != 0.0) gt.emplace_back(col, me + j, v);
    }
    Eigen::SparseMatrix<double> G(n, me + ma);
    G.setFromTriplets(gt.begin(), gt.end());

    std::vector<char> passive(ma, 1);
    bool dualOk = false;
    Eigen::VectorXd z;
    std::vector<int> colsSel;
    const int maxMoves = 2 * ma + 50;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> nls;
    for (int move = 0; move < maxMoves; ++move) {
      colsSel.clear();
      for (int e = 0; e < me; ++e) colsSel.push_back(e);
      for (int j = 0; j < ma; ++j)
        if (passive[j]) colsSel.push_back(me + j);
      const int ns = static_cast<int>(colsSel.size());
      std::vector<Eigen::Triplet<double>> st;
      for (int j = 0; j < ns; ++j)
        for (Eigen::SparseMatrix<double>::InnerIterator it(G, colsSel[j]); it;
             ++it)
          st.emplace_back(static_cast<int>(it.row()), j, it.value());
      Eigen::SparseMatrix<double> Gs(n, ns);
      Gs.setFromTriplets(st.begin(), st.end());
      Eigen::SparseMatrix<double> Gst = Gs.transpose();
      Eigen::SparseMatrix<double> M = Gst * Gs;
      Eigen::SparseMatrix<double> I(ns, ns);
      I.setIdentity();
      M += 1e-13 * I;
      nls.compute(M);
      if (nls.info() != Eigen::Success) return false;
      z = nls.solve(-(Gst * P.c));
      if (!z.allFinite()) return false;

      double zScale = std::max(1.0, z.lpNorm<Eigen::Infinity>());
      int worst = -1;
      double worstVal = -1e-10 * zScale;
      for (int j = me; j < ns; ++j)
        if (z[j] < worstVal) {
          worstVal = z[j];
          worst = colsSel[j] - me;
        }
      if (worst >= 0) {
        passive[worst] = 0;  // tight but with zero multiplier
        continue;
      }
      // No demoted cone may offer a descent direction.
      Eigen::VectorXd gr = G.transpose() * (P.c + Gs * z);
      int best = -1;
      double bestVal = 1e-9 * cScale;
      for (int j = 0; j < ma; ++j)
        if (!passive[j] && -gr[me + j] > bestVal) {
          bestVal = -gr[me + j];
          best = j;
        }
      if (best >= 0) {
        passive[best] = 1;
        continue;
      }
      dualOk = true;
      break;
    }
    if (!dualOk) continue;
    for (int e = 0; e < me; ++e) lam[e] = z[e];
    mu.setZero();
    {
      int zi = me;
      for (int j = 0; j < ma; ++j)
        if (passive[j]) mu[tight[j]] = std::max(z[zi++], 0.0);
    }
    Eigen::VectorXd stat2 = P.c;
    for (int e = 0; e < me; ++e)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(
               Ar, eqRows[e]);
           it; ++it)
        stat2[it.col()] += lam[e] * it.value();
    for (int k = 0; k < mk; ++k) {
      if (mu[k] == 0.0) continue;
      std::map<int, double> g;
      coneValue(blocks[k], x, &ok, &g);
      if (!ok) return false;
      for (const auto& [col, v] : g) stat2[col] += mu[k] * v;
    }
    converged = stat2.lpNorm<Eigen::Infinity>() <= 20.0 * gtol;
  }
  if (!converged) return false;

  // Assemble (x, s, y), force exact cone membership of the slack, and let
  // the genuine unscaled residuals decide acceptance.
  Eigen::VectorXd y = Eigen::VectorXd::Zero(P.numRows());
  for (int e = 0; e < me; ++e) y[eqRows[e]] = lam[e];
  Eigen::VectorXd sl = P.b - P.A * x;
  for (const Block& blk : blocks) {
    if (mu[static_cast<int>(&blk - blocks.data())] > 0.0 && blk.dim > 1) {
      Eigen::VectorXd t = sl.segment(blk.row + 1, blk.dim - 1);
      double tn = t.norm();
      if (tn < 1e-14) return false;
      double m = mu[static_cast<int>(&blk - blocks.data())];
      y[blk.row] = m;
      y.segment(blk.row + 1, blk.dim - 1) = -m * t / tn;
    } else if (blk.dim == 1) {
      y[blk.row] = mu[static_cast<int>(&blk - blocks.data())];
    }
    ConeSpec cone{ConeSpec::SecondOrder, blk.dim};
    projectBlock(cone, sl.data() + blk.row);
  }
  for (int e = 0; e < me; ++e) sl[eqRows[e]] = 0.0;

  Residuals rr = computeResiduals(P, x, sl, y);
  if (rr.primal > tol || rr.dual > tol || rr.gap > tol) return false;
  *xOut = x;
  *yOut = y;
  *rrOut = rr;
  return true;
}

}  // namespace

SolverResult solve(const ConicProgram& program, const SolveOptions& opts) {
  program.validate();
  auto t0 = std::chrono::steady_clock::now();

  const int m = program.numRows();
  const int n = program.numVars();

  Eigen::SparseMatrix<double> As = program.A;
  Eigen::VectorXd bs = program.b;
  Eigen::VectorXd cs = program.c;
  Scaling sc = equilibrate(As, bs, cs, program.cones);

  // Per-row penalty, uniform within a cone block, heavier on equalities.
  auto makeRhoVec = [&](double rho) {
    Eigen::VectorXd rv(m);
    int r = 0;
    for (const ConeSpec& cone : program.cones) {
      double v = cone.kind == ConeSpec::Zero ? rho * opts.rhoEqualityScale : rho;
      for (int i = 0; i < cone.dim; ++i) rv[r++] = v;
    }
    return rv;
  };

  double rho = opts.rho;
  Eigen::VectorXd rhoVec = makeRhoVec(rho);

  Eigen::SparseMatrix<double> At = As.transpose();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  auto factor = [&]() {
    Eigen::SparseMatrix<double> M = At * rhoVec.asDiagonal() * As;
    Eigen::SparseMatrix<double> I(n, n);
    I.setIdentity();
    M += opts.sigma * I;
    ldlt.compute(M);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("conic: KKT factorization failed");
  };
  factor();

  // Scaled iterates.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  if (opts.warmX.size() == n) x = sc.E.cwiseInverse().asDiagonal() * opts.warmX;
  if (opts.warmY.size() == m)
    y = sc.costScale * (sc.D.cwiseInverse().asDiagonal() * opts.warmY);
  Eigen::VectorXd s = bs - As * x;
  {
    int r = 0;
    for (const ConeSpec& cone : program.cones) {
      projectBlock(cone, s.data() + r);
      r += cone.dim;
    }
  }

  SolverResult res;
  res.status = SolveStatus::MaxIterations;

  // Unscale helpers.
  auto unscaleX = [&](const Eigen::VectorXd& xs) {
    return Eigen::VectorXd(sc.E.asDiagonal() * xs);
  };
  auto unscaleY = [&](const Eigen::VectorXd& ys) {
    return Eigen::VectorXd((sc.D.asDiagonal() * ys) / sc.costScale);
  };

  Eigen::VectorXd yPrevCheck = y, xPrevCheck = x;
  int lastPolishAttempt = -1;
  // Stall acceptance bookkeeping: best iterate seen and the last residual
  // check that made meaningful (10%) progress on the worst residual.
  double stallBest = std::numeric_limits<double>::infinity();
  double stallRef = std::numeric_limits<double>::infinity();
  int stallProgressIter = 0;
  Eigen::VectorXd stallX, stallY;
  Residuals stallR{};
  const double alpha = opts.relaxation;

  // One pass of the splitting expressed on the underlying fixed-point
  // variable v = s - y / rho: recover (s, y) by cone projection (Moreau
  // decomposition, so s in K and y in K* for any input), linear solve,
  // relaxation, dual ascent. x only enters through the tiny proximal term
  // and is carried along as auxiliary state.
  Eigen::VectorXd v = s - y.cwiseQuotient(rhoVec);
  auto applyStep = [&](const Eigen::VectorXd& vIn, Eigen::VectorXd& vOut,
                       Eigen::VectorXd& xOut, Eigen::VectorXd& sOut,
                       Eigen::VectorXd& yOut) {
    Eigen::VectorXd sIn = vIn;
    int r = 0;
    for (const ConeSpec& cone : program.cones) {
      projectBlock(cone, sIn.data() + r);
      r += cone.dim;
    }
    Eigen::VectorXd yIn = rhoVec.cwiseProduct(sIn - vIn);
    Eigen::VectorXd rhs =
        opts.sigma * x - cs + At * (rhoVec.cwiseProduct(bs - sIn) - yIn);
    xOut = ldlt.solve(rhs);
    Eigen::VectorXd zHat = alpha * (As * xOut) + (1.0 - alpha) * (bs - sIn);
    sOut = bs - zHat - yIn.cwiseQuotient(rhoVec);
    r = 0;
    for (const ConeSpec& cone : program.cones) {
      projectBlock(cone, sOut.data() + r);
      r += cone.dim;
    }
    yOut = yIn + rhoVec.cwiseProduct(zHat + sOut - bs);
    vOut = sOut - yOut.cwiseQuotient(rhoVec);
  };

  // Anderson acceleration over v, safeguarded by the fixed-point residual.
  const int mem = std::max(0, opts.accelMemory);
  Eigen::MatrixXd dZ(mem > 0 ? m : 0, mem), dF(mem > 0 ? m : 0, mem);
  int nHist = 0;
  Eigen::VectorXd zLast, fLast;
  bool haveLast = false;
  auto pushPair = [&](const Eigen::VectorXd& zk, const Eigen::VectorXd& fk) {
    if (mem == 0) return;
    if (haveLast) {
      if (nHist == mem) {
        dZ.leftCols(mem - 1) = dZ.rightCols(mem - 1).eval();
        dF.leftCols(mem - 1) = dF.rightCols(mem - 1).eval();
        --nHist;
      }
      dZ.col(nHist) = zk - zLast;
      dF.col(nHist) = fk - fLast;
      ++nHist;
    }
    zLast = zk;
    fLast = fk;
    haveLast = true;
  };
  auto resetAccel = [&]() {
    nHist = 0;
    haveLast = false;
  };

  int iter = 0;
  int nextCheck = opts.checkInterval;
  int checkCount = 0;
  while (iter < opts.maxIter) {
    Eigen::VectorXd vT;
    applyStep(v, vT, x, s, y);
    ++iter;
    Eigen::VectorXd f = vT - v;
    pushPair(v, f);
    v = vT;

    if (nHist >= 1 && iter < opts.maxIter) {
      // Type-II Anderson step from the difference history, then a safeguard
      // evaluation: keep it only when the fixed-point residual shrinks.
      auto Fh = dF.leftCols(nHist);
      Eigen::MatrixXd M = Fh.transpose() * Fh;
      M.diagonal().array() += 1e-12 * std::max(1.0, M.trace());
      Eigen::VectorXd gamma = M.ldlt().solve(Fh.transpose() * f);
      Eigen::VectorXd vCand = vT - (dZ.leftCols(nHist) + Fh) * gamma;
      if (vCand.allFinite()) {
        Eigen::VectorXd vC, xC, sC, yC;
        applyStep(vCand, vC, xC, sC, yC);
        ++iter;
        if ((vC - vCand).norm() <= f.norm()) {
          pushPair(vCand, vC - vCand);
          v = vC;
          x = xC;
          s = sC;
          y = yC;
        } else {
          resetAccel();
        }
      } else {
        resetAccel();
      }
    }

    if (iter >= nextCheck || iter >= opts.maxIter) {
      nextCheck = iter + opts.checkInterval;
      ++checkCount;
      Eigen::VectorXd xu = unscaleX(x);
      Eigen::VectorXd su = sc.D.cwiseInverse().asDiagonal() * s;
      Eigen::VectorXd yu = unscaleY(y);
      Residuals rr = computeResiduals(program, xu, su, yu);
      res.primalResidual = rr.primal;
      res.dualResidual = rr.dual;
      res.gap = rr.gap;
      if (rr.primal <= opts.tol && rr.dual <= opts.tol && rr.gap <= opts.tol) {
        res.status = SolveStatus::Optimal;
        res.x = xu;
        res.y = yu;
        res.iterations = iter;
        break;
      }

      // The gap gate is looser than the residual gates: on near-degenerate
      // instances the gap is the last quantity to converge, and the polish
      // verifies true residuals before accepting anyway.
      if (opts.polish && rr.primal <= opts.polishStartTol &&
          rr.dual <= opts.polishStartTol && rr.gap <= 100.0 * opts.polishStartTol &&
          (lastPolishAttempt < 0 ||
           iter >= lastPolishAttempt +
                       std::max(4 * opts.checkInterval, lastPolishAttempt / 2))) {
        lastPolishAttempt = iter;
        Eigen::VectorXd xp, yp;
        Residuals rp;
        if (polishSolution(program, xu, yu, opts.tol, opts.polishMaxNewton,
                           &xp, &yp, &rp)) {
          res.status = SolveStatus::Optimal;
          res.x = xp;
          res.y = yp;
          res.primalResidual = rp.primal;
          res.dualResidual = rp.dual;
          res.gap = rp.gap;
          res.iterations = iter;
          break;
        }
      }

      // Stall acceptance: a long plateau at near-tolerance residuals is the
      // signature of a weakly-active (degenerate) cone where the duality gap
      // converges arbitrarily slowly; the best iterate is already an optimum
      // for every practical purpose and its true residuals stay reported.
      double worst = std::max({rr.primal, rr.dual, rr.gap});
      if (worst < stallBest) {
        stallBest = worst;
        stallX = xu;
        stallY = yu;
        stallR = rr;
      }
      if (worst <= 0.9 * stallRef) {
        stallRef = worst;
        stallProgressIter = iter;
      }
      if (opts.stallWindow > 0 && iter - stallProgressIter >= opts.stallWindow &&
          stallBest <= opts.stallAcceptFactor * opts.tol) {
        res.status = SolveStatus::Optimal;
        res.x = stallX;
        res.y = stallY;
        res.primalResidual = stallR.primal;
        res.dualResidual = stallR.dual;
        res.gap = stallR.gap;
        res.iterations = iter;
        break;
      }

      // Infeasibility certificates from the iterate differences.
      Eigen::VectorXd dy = unscaleY(y) - unscaleY(yPrevCheck);
      double dyNorm = dy.norm();
      if (dyNorm > 1e-12) {
        Eigen::VectorXd t = dy / dyNorm;
        double atNorm = (program.A.transpose() * t).lpNorm<Eigen::Infinity>();
        double bt = program.b.dot(t);
        // Farkas direction must lie in the dual cone (zero blocks are free,
        // second-order blocks are self-dual).
        double dualViol = 0.0;
        {
          int rr2 = 0;
          for (const ConeSpec& cone : program.cones) {
            if (cone.kind != ConeSpec::Zero)
              dualViol = std::max(dualViol, coneViolation(cone, t.data() + rr2));
            rr2 += cone.dim;
          }
        }
        if (atNorm <= opts.infeasibilityTol && bt <= -opts.infeasibilityTol &&
            dualViol <= opts.infeasibilityTol) {
          res.status = SolveStatus::PrimalInfeasible;
          res.x = unscaleX(x);
          res.y = t;
          res.iterations = iter;
          break;
        }
      }
      Eigen::VectorXd dx = unscaleX(x) - unscaleX(xPrevCheck);
      double dxNorm = dx.norm();
      if (dxNorm > 1e-12) {
        Eigen::VectorXd t = dx / dxNorm;
        double ct = program.c.dot(t);
        if (ct <= -opts.infeasibilityTol) {
          Eigen::VectorXd At_ = -(program.A * t);  // must lie in K (recession)
          double viol = 0.0;
          int rr2 = 0;
          for (const ConeSpec& cone : program.cones) {
            viol = std::max(viol, coneViolation(cone, At_.data() + rr2));
            rr2 += cone.dim;
          }
          if (viol <= opts.infeasibilityTol) {
            res.status = SolveStatus::DualInfeasible;
            res.x = t;
            res.y = unscaleY(y);
            res.iterations = iter;
            break;
          }
        }
      }
      yPrevCheck = y;
      xPrevCheck = x;

      // Adaptive penalty; a new rho changes the fixed-point map, so the
      // acceleration memory restarts with it.
      if (opts.adaptiveRho && checkCount % 8 == 0) {
        double ratio = std::sqrt(std::max(rr.primal, 1e-16) /
                                 std::max(rr.dual, 1e-16));
        if (ratio > 5.0 || ratio < 0.2) {
          rho = std::clamp(rho * ratio, 1e-6, 1e6);
          rhoVec = makeRhoVec(rho);
          factor();
          v = s - y.cwiseQuotient(rhoVec);
          resetAccel();
        }
      }
    }
  }

  if (res.x.size() == 0) {
    res.x = unscaleX(x);
    res.y = unscaleY(y);
    res.iterations = iter;
  }
  res.solveSeconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

const char* statusName(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::PrimalInfeasible: return "PrimalInfeasible";
    case SolveStatus::DualInfeasible: return "DualInfeasible";
    case SolveStatus::MaxIterations: return "MaxIterations";
  }
  return "?";
}

namespace {
std::map<std::string, SolveBackend>& backendRegistry() {
  static std::map<std::string, SolveBackend> reg = {
      {"reference",
       [](const ConicProgram& p, const SolveOptions& o) { return solve(p, o); }}};
  return reg;
}
std::mutex backendMutex;
}  // namespace

void registerBackend(const std::string& name, SolveBackend fn) {
  std::lock_guard<std::mutex> lock(backendMutex);
  backendRegistry()[name] = std::move(fn);
}

std::vector<std::string> backendNames() {
  std::lock_guard<std::mutex> lock(backendMutex);
  std::vector<std::string> out;
  for (const auto& [k, v] : backendRegistry()) out.push_back(k);
  return out;
}

SolverResult solveBackend(const ConicProgram& program, const std::string& name,
                          const SolveOptions& opts) {
  SolveBackend fn;
  {
    std::lock_guard<std::mutex> lock(backendMutex);
    auto it = backendRegistry().find(name);
    if (it == backendRegistry().end())
      throw ConfigError("conic: unknown solver backend '" + name + "'");
    fn = it->second;
  }
  return fn(program, opts);
}

}  // namespace nrsfm
