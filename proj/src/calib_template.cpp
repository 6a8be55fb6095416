#include "nrsfm/calib_template.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <random>

#include "nrsfm/upgrade.hpp"

namespace nrsfm {

double gammaFromPair(double ai, double aj, double d) {
  if (ai <= 0.0 || aj <= 0.0)
    throw DataError("gammaFromPair: ranges must be positive");
  double den = ai * ai + aj * aj - d * d;
  if (std::abs(den) <= 1e-12 * (ai * ai + aj * aj))
    throw DataError("gammaFromPair: right-angle sightlines (zero denominator)");
  double g = 2.0 * ai * aj / den;
  return g * g;
}

RigidPair RigidPair::make(int i, int j, const Eigen::Vector3d& ui,
                          const Eigen::Vector3d& uj, double ai, double aj,
                          double d) {
  RigidPair p;
  p.i = i;
  p.j = j;
  p.ui = ui;
  p.uj = uj;
  p.ai = ai;
  p.aj = aj;
  p.d = d;
  p.gamma = gammaFromPair(ai, aj, d);
  return p;
}

namespace {

Eigen::Matrix3d symFromParams(const Eigen::Matrix<double, 5, 1>& w) {
  Eigen::Matrix3d m;
  m << w[0], w[1], w[3], w[1], w[2], w[4], w[3], w[4], 1.0;
  return m;
}

// d(u' W v)/dw for the five free entries of the symmetric W (w33 fixed).
Eigen::Matrix<double, 5, 1> quadGrad(const Eigen::Vector3d& u,
                                     const Eigen::Vector3d& v) {
  Eigen::Matrix<double, 5, 1> g;
  g[0] = u[0] * v[0];
  g[1] = u[0] * v[1] + u[1] * v[0];
  g[2] = u[1] * v[1];
  g[3] = u[0] * v[2] + u[2] * v[0];
  g[4] = u[1] * v[2] + u[2] * v[1];
  return g;
}

struct IACSystem {
  std::vector<Eigen::Vector3d> ui, uj;  // unit-normalized, pixel-scaled
  std::vector<double> gamma;

  Eigen::Matrix<double, 5, 1> residual(
      const Eigen::Matrix<double, 5, 1>& w) const {
    Eigen::Matrix3d W = symFromParams(w);
    Eigen::Matrix<double, 5, 1> r;
    for (int p = 0; p < 5; ++p) {
      double qii = ui[p].dot(W * ui[p]);
      double qjj = uj[p].dot(W * uj[p]);
      double qij = ui[p].dot(W * uj[p]);
      r[p] = qii * qjj - gamma[p] * qij * qij;
    }
    return r;
  }

  Eigen::Matrix<double, 5, 5> jacobian(
      const Eigen::Matrix<double, 5, 1>& w) const {
    Eigen::Matrix3d W = symFromParams(w);
    Eigen::Matrix<double, 5, 5> J;
    for (int p = 0; p < 5; ++p) {
      double qii = ui[p].dot(W * ui[p]);
      double qjj = uj[p].dot(W * uj[p]);
      double qij = ui[p].dot(W * uj[p]);
      J.row(p) = (quadGrad(ui[p], ui[p]) * qjj + quadGrad(uj[p], uj[p]) * qii -
                  2.0 * gamma[p] * qij * quadGrad(ui[p], uj[p]))
                     .transpose();
    }
    return J;
  }
};

}  // namespace

std::vector<IACCandidate> solveIACMinimal(const std::vector<RigidPair>& pairs,
                                          std::uint64_t seed, int starts) {
  if (pairs.size() != 5)
    throw DataError("solveIACMinimal: exactly 5 pairs required");

  // The equation is homogeneous in each pixel, so rescaling coordinates is
  // free; solve for W in coordinates where pixel magnitudes are O(1), which
  // keeps all five free entries on a common scale against the fixed w33.
  double s = 0.0;
  for (const auto& p : pairs)
    s += p.ui.head<2>().norm() + p.uj.head<2>().norm();
  s = std::max(1.0, s / 10.0);
  Eigen::Vector3d dInv(1.0 / s, 1.0 / s, 1.0);

  IACSystem sys;
  for (const auto& p : pairs) {
    sys.ui.push_back((dInv.asDiagonal() * p.ui).normalized());
    sys.uj.push_back((dInv.asDiagonal() * p.uj).normalized());
    sys.gamma.push_back(p.gamma);
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> logDiag(std::log(0.05), std::log(2.0));
  std::uniform_real_distribution<double> off(-0.5, 0.5);

  std::vector<IACCandidate> out;
  for (int attempt = 0; attempt < starts; ++attempt) {
    // Random positive definite start W = L L', normalized to w33 = 1.
    Eigen::Matrix3d L = Eigen::Matrix3d::Zero();
    L(0, 0) = std::exp(logDiag(rng));
    L(1, 1) = std::exp(logDiag(rng));
    L(2, 2) = 1.0;
    L(1, 0) = off(rng) * L(0, 0);
    L(2, 0) = off(rng);
    L(2, 1) = off(rng);
    Eigen::Matrix3d W0 = L * L.transpose();
    W0 /= W0(2, 2);
    Eigen::Matrix<double, 5, 1> w;
    w << W0(0, 0), W0(0, 1), W0(1, 1), W0(0, 2), W0(1, 2);

    double lm = 1e-4;
    Eigen::Matrix<double, 5, 1> r = sys.residual(w);
    for (int it = 0; it < 200; ++it) {
      Eigen::Matrix<double, 5, 5> J = sys.jacobian(w);
      Eigen::Matrix<double, 5, 5> H = J.transpose() * J;
      Eigen::Matrix<double, 5, 1> g = J.transpose() * r;
      bool stepped = false;
      for (int t = 0; t < 30; ++t) {
        Eigen::Matrix<double, 5, 5> Hd = H;
        Hd.diagonal() += lm * H.diagonal().cwiseMax(1e-12);
        Eigen::Matrix<double, 5, 1> dw = Hd.ldlt().solve(-g);
        Eigen::Matrix<double, 5, 1> rNew = sys.residual(w + dw);
        if (rNew.squaredNorm() < r.squaredNorm()) {
          w += dw;
          r = rNew;
          lm = std::max(lm * 0.3, 1e-12);
          stepped = true;
          break;
        }
        lm *= 10.0;
      }
      if (!stepped || r.lpNorm<Eigen::Infinity>() < 1e-14) break;
    }

    double res = r.lpNorm<Eigen::Infinity>();
    if (!(res <= 1e-8) || !w.allFinite()) continue;

    bool duplicate = false;
    for (const auto& c : out) {
      Eigen::Matrix3d Wc = dInv.cwiseInverse().asDiagonal() * c.omega.omega *
                           dInv.cwiseInverse().asDiagonal();
      Eigen::Matrix<double, 5, 1> wc;
      wc << Wc(0, 0), Wc(0, 1), Wc(1, 1), Wc(0, 2), Wc(1, 2);
      if ((wc - w).norm() < 1e-4 * std::max(1.0, w.norm())) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) continue;

    IACCandidate cand;
    // Back to pixel coordinates; w33 stays 1 under this congruence.
    cand.omega = IAC::fromMatrix(dInv.asDiagonal() * symFromParams(w) *
                                 dInv.asDiagonal());
    cand.residual = res;
    cand.positiveDefinite = cand.omega.isPositiveDefinite();
    Eigen::JacobiSVD<Eigen::Matrix<double, 5, 5>> svd(sys.jacobian(w));
    cand.rankDeficient =
        svd.singularValues()[4] < 1e-8 * svd.singularValues()[0];
    out.push_back(std::move(cand));
  }
  return out;
}

Intrinsics intrinsicsFromIAC(const IAC& omega, double imageWidth,
                             double imageHeight) {
  if (!omega.isPositiveDefinite())
    throw DataError("intrinsicsFromIAC: IAC is not positive definite");
  Eigen::LLT<Eigen::Matrix3d> llt(omega.omega);
  if (llt.info() != Eigen::Success)
    throw DataError("intrinsicsFromIAC: Cholesky factorization failed");
  // Omega = L L'  =>  K^-1 = L' up to scale  =>  K = L^-T, then k33 = 1.
  Eigen::Matrix3d L = llt.matrixL();
  Eigen::Matrix3d K = L.transpose()
                          .triangularView<Eigen::Upper>()
                          .solve(Eigen::Matrix3d::Identity());
  return Intrinsics::fromMatrix(K / K(2, 2), imageWidth, imageHeight);
}

double templateResidual(const Intrinsics& K, const TrackSet& tracks,
                        const NeighborGraph& graph, const DepthField& field,
                        const EdgeLengths& templateLengths) {
  Eigen::Matrix3d Kinv = K.inverse();
  double phi = 0.0;
  for (int l = 0; l < field.numViews(); ++l)
    for (const auto& [i, j] : graph.edges()) {
      if (!field.defined(l, i) || !field.defined(l, j)) continue;
      if (!tracks.visible(l, i) || !tracks.visible(l, j)) continue;
      double dhat = upgradedDistance<double>(Kinv, field.range(l, i),
                                             field.range(l, j),
                                             tracks.homogeneous(l, i),
                                             tracks.homogeneous(l, j));
      double e = templateLengths.at(i, j) - dhat;
      phi += 2.0 * e * e;  // both directed orientations of the edge
    }
  return phi;
}

namespace {

// Center and half-diagonal of the normalization frame for the structural
// prior; falls back to the track bounding box when the intrinsics carry no
// image size.
void normFrame(const Intrinsics& K, const TrackSet& tracks, double* cx,
               double* cy, double* halfDiag) {
  if (K.imageWidth > 0.0 && K.imageHeight > 0.0) {
    *cx = 0.5 * K.imageWidth;
    *cy = 0.5 * K.imageHeight;
    *halfDiag = 0.5 * std::hypot(K.imageWidth, K.imageHeight);
    return;
  }
  double lox = 1e300, hix = -1e300, loy = 1e300, hiy = -1e300;
  for (int l = 0; l < tracks.numViews(); ++l)
    for (int i = 0; i < tracks.numPoints(); ++i)
      if (tracks.visible(l, i)) {
        Eigen::Vector2d p = tracks.pixel(l, i);
        lox = std::min(lox, p.x());
        hix = std::max(hix, p.x());
        loy = std::min(loy, p.y());
        hiy = std::max(hiy, p.y());
      }
  *cx = 0.5 * (lox + hix);
  *cy = 0.5 * (loy + hiy);
  *halfDiag = std::max(1.0, 0.5 * std::hypot(hix - lox, hiy - loy));
}

struct RefineObjective {
  const TrackSet& tracks;
  const NeighborGraph& graph;
  const DepthField& field;
  const EdgeLengths& templ;
  double cx0, cy0, halfDiag;
  double budget;  // directed sum of template lengths
  Intrinsics base;

  Intrinsics at(const Eigen::Matrix<double, 5, 1>& p) const {
    Intrinsics K = base;
    K.fx = p[0];
    K.fy = p[1];
    K.skew = p[2];
    K.cx = p[3];
    K.cy = p[4];
    return K;
  }

  // Unit-budget misfit: every view's measured distances and the template are
  // both rescaled to a unit directed sum, so the comparison sees the shape
  // of the distance distribution rather than its overall scale (which a
  // larger focal shrinks uniformly).
  Eigen::VectorXd residuals(const Eigen::Matrix<double, 5, 1>& p) const {
    Intrinsics K = at(p);
    Eigen::Matrix3d Kinv = K.inverse();
    std::vector<double> r;
    auto edges = graph.edges();
    std::vector<double> dhat(edges.size());
    for (int l = 0; l < field.numViews(); ++l) {
      double viewBudget = 0.0;
      int usable = 0;
      for (size_t e = 0; e < edges.size(); ++e) {
        auto [i, j] = edges[e];
        dhat[e] = -1.0;
        if (!field.defined(l, i) || !field.defined(l, j)) continue;
        if (!tracks.visible(l, i) || !tracks.visible(l, j)) continue;
        dhat[e] = upgradedDistance<double>(Kinv, field.range(l, i),
                                           field.range(l, j),
                                           tracks.homogeneous(l, i),
                                           tracks.homogeneous(l, j));
        viewBudget += 2.0 * dhat[e];
        ++usable;
      }
      if (usable == 0 || viewBudget <= 0.0) continue;
      for (size_t e = 0; e < edges.size(); ++e) {
        if (dhat[e] < 0.0) continue;
        // sqrt(2): the template fit counts both directed orientations.
        r.push_back(std::sqrt(2.0) * (templ.at(edges[e].first,
                                               edges[e].second) /
                                          budget -
                                      dhat[e] / viewBudget));
      }
    }
    r.push_back((p[3] - cx0) / halfDiag);
    r.push_back((p[4] - cy0) / halfDiag);
    r.push_back(1.0 - p[0] / p[1]);
    return Eigen::Map<Eigen::VectorXd>(r.data(), r.size());
  }

  double value(const Eigen::Matrix<double, 5, 1>& p) const {
    return residuals(p).squaredNorm();
  }

  // Distance misfit only, without the structural prior.
  double fit(const Intrinsics& K) const {
    Eigen::Matrix<double, 5, 1> p;
    p << K.fx, K.fy, K.skew, K.cx, K.cy;
    Eigen::VectorXd r = residuals(p);
    return r.head(r.size() - 3).squaredNorm();
  }
};

}  // namespace

RefineResult refineIntrinsics(const Intrinsics& K0, const TrackSet& tracks,
                              const NeighborGraph& graph,
                              const DepthField& field,
                              const EdgeLengths& templateLengths,
                              std::vector<std::string>* warnings) {
  K0.validate();
  double budget = templateLengths.directedSum();
  if (budget <= 0.0)
    throw DataError("refineIntrinsics: template has no positive length");

  RefineObjective obj{tracks,  graph, field, templateLengths, 0.0,
                      0.0,     1.0,   budget, K0};
  normFrame(K0, tracks, &obj.cx0, &obj.cy0, &obj.halfDiag);

  Eigen::Matrix<double, 5, 1> p;
  p << K0.fx, K0.fy, K0.skew, K0.cx, K0.cy;

  RefineResult result;
  Eigen::VectorXd r = obj.residuals(p);
  double E = r.squaredNorm();
  result.objectiveTrace.push_back(E);

  double lm = 1e-3;
  bool stalled = false;
  for (int it = 0; it < 100; ++it) {
    // Numerical Jacobian, central differences.
    Eigen::MatrixXd J(r.size(), 5);
    for (int k = 0; k < 5; ++k) {
      double h = (k < 2) ? 1e-5 * std::abs(p[k]) + 1e-7
                         : 1e-5 * obj.halfDiag + 1e-7;
      Eigen::Matrix<double, 5, 1> pp = p, pm = p;
      pp[k] += h;
      pm[k] -= h;
      J.col(k) = (obj.residuals(pp) - obj.residuals(pm)) / (2.0 * h);
    }
    Eigen::Matrix<double, 5, 5> H = J.transpose() * J;
    Eigen::Matrix<double, 5, 1> g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < 1e-14 * std::max(1.0, E)) break;

    bool accepted = false;
    for (int t = 0; t < 40; ++t) {
      Eigen::Matrix<double, 5, 5> Hd = H;
      Hd.diagonal() += lm * H.diagonal().cwiseMax(1e-12);
      Eigen::Matrix<double, 5, 1> dp = Hd.ldlt().solve(-g);
      Eigen::Matrix<double, 5, 1> pNew = p + dp;
      if (pNew[0] > 0.0 && pNew[1] > 0.0) {
        Eigen::VectorXd rNew = obj.residuals(pNew);
        double ENew = rNew.squaredNorm();
        if (ENew <= E) {
          bool tiny = E - ENew <= 1e-14 * std::max(1.0, E);
          p = pNew;
          r = std::move(rNew);
          E = ENew;
          result.objectiveTrace.push_back(E);
          lm = std::max(lm * 0.3, 1e-12);
          accepted = true;
          if (tiny) stalled = true;
          break;
        }
      }
      lm *= 10.0;
    }
    if (!accepted) {
      if (result.objectiveTrace.size() <= 1 && warnings)
        warnings->push_back(
            "refineIntrinsics: no descent step found; returning the start");
      stalled = true;
    }
    if (stalled) break;
  }

  result.K = obj.at(p);
  result.converged = true;
  return result;
}

TemplateCalibResult calibrateWithTemplate(const TrackSet& tracks,
                                          const NeighborGraph& graph,
                                          const EdgeLengths& templateLengths,
                                          const Intrinsics& Khat,
                                          const TemplateCalibOptions& opts) {
  Khat.validate();
  TemplateCalibResult result;
  Intrinsics current = Khat;

  auto reconstruct = [&](const Intrinsics& K) {
    SfTProblem prob{tracks, graph, templateLengths, K};
    return reconstructSfT(prob, opts.reconstruct);
  };

  for (int outer = 0; outer < opts.maxOuterIterations; ++outer) {
    ++result.outerIterations;
    SfTResult recon = reconstruct(current);
    const DepthField& field = recon.depths;

    // Candidate pairs: graph edges visible in the reference view, ranked by
    // pixel distance; minimal sets come from the closest quartile, where the
    // close-neighbor assumption behind the gamma equation is strongest.
    int ref = graph.refView;
    std::vector<std::pair<double, std::pair<int, int>>> ranked;
    for (const auto& [i, j] : graph.edges()) {
      if (!tracks.visible(ref, i) || !tracks.visible(ref, j)) continue;
      if (!field.defined(ref, i) || !field.defined(ref, j)) continue;
      if (!templateLengths.has(i, j)) continue;
      ranked.push_back(
          {(tracks.pixel(ref, i) - tracks.pixel(ref, j)).norm(), {i, j}});
    }
    std::sort(ranked.begin(), ranked.end());
    int poolSize = std::max<int>(5, static_cast<int>(ranked.size()) / 4);
    poolSize = std::min<int>(poolSize, static_cast<int>(ranked.size()));

    RefineObjective scorer{tracks, graph, field,  templateLengths, 0.0,
                           0.0,    1.0,   templateLengths.directedSum(),
                           current};
    normFrame(current, tracks, &scorer.cx0, &scorer.cy0, &scorer.halfDiag);

    result.hypotheses.clear();
    if (poolSize >= 5) {
      std::mt19937_64 rng(opts.seed + static_cast<std::uint64_t>(outer));
      std::vector<int> pool(poolSize);
      for (int t = 0; t < poolSize; ++t) pool[t] = t;
      for (int set = 0; set < opts.hypothesisSets; ++set) {
        std::vector<int> pick;
        std::sample(pool.begin(), pool.end(), std::back_inserter(pick), 5,
                    rng);
        std::vector<RigidPair> pairs;
        try {
          for (int t : pick) {
            auto [i, j] = ranked[t].second;
            pairs.push_back(RigidPair::make(
                i, j, tracks.homogeneous(ref, i), tracks.homogeneous(ref, j),
                field.range(ref, i), field.range(ref, j),
                templateLengths.at(i, j)));
          }
        } catch (const DataError&) {
          continue;  // rejected pair in this set
        }
        for (const IACCandidate& cand : solveIACMinimal(
                 pairs, opts.seed ^ (0x9e3779b97f4a7c15ULL * (set + 1)))) {
          if (!cand.positiveDefinite || cand.rankDeficient) continue;
          Intrinsics Kt;
          try {
            Kt = intrinsicsFromIAC(cand.omega, current.imageWidth,
                                   current.imageHeight);
          } catch (const DataError&) {
            continue;
          }
          if (!(Kt.fx > 1e-6) || !(Kt.fy > 1e-6) || Kt.fx > 1e9 || Kt.fy > 1e9)
            continue;
          double score = scorer.fit(Kt);
          if (!std::isfinite(score)) continue;
          result.hypotheses.push_back(
              {Kt, cand.residual, score, cand.positiveDefinite});
        }
      }
    }

    Intrinsics best = current;
    if (result.hypotheses.empty()) {
      if (opts.warnings)
        opts.warnings->push_back(
            "calibrateWithTemplate: no usable hypothesis; refining the "
            "current guess directly");
    } else {
      const HypothesisRecord* bestRec = &result.hypotheses[0];
      for (const auto& h : result.hypotheses)
        if (h.score < bestRec->score) bestRec = &h;
      best = bestRec->K;
    }

    RefineResult refined = refineIntrinsics(best, tracks, graph, field,
                                            templateLengths, opts.warnings);
    result.refineTrace = refined.objectiveTrace;
    double prevFocal = current.focal();
    current = refined.K;
    current.imageWidth = Khat.imageWidth;
    current.imageHeight = Khat.imageHeight;
    result.focalHistory.push_back(current.focal());
    if (std::abs(current.focal() - prevFocal) <= opts.focalTol * prevFocal)
      break;
  }

  // Re-reconstruction polish of the focal scale. The hypothesis/refinement
  // stage works from one reconstruction per outer pass, and on tight,
  // exactly isometric data that reconstruction explains its own producing
  // intrinsics almost perfectly, leaving the overall focal scale weakly
  // observable. A fresh reconstruction per focal exposes it: the template
  // misfit of the re-solved reconstruction dips at the true scale.
  {
    auto selfFit = [&](double scale) {
      Intrinsics K = current;
      K.fx *= scale;
      K.fy *= scale;
      try {
        SfTResult r = reconstruct(K);
        return templateResidual(K, tracks, graph, r.depths, templateLengths);
      } catch (const NumericalError&) {
        return std::numeric_limits<double>::infinity();
      }
    };
    double bestT = 0.0, bestV = selfFit(1.0);
    for (double t : {-0.6, -0.4, -0.2, 0.2, 0.4, 0.6}) {
      double v = selfFit(std::exp(t));
      if (v < bestV) {
        bestV = v;
        bestT = t;
      }
    }
    double lo = bestT - 0.2, hi = bestT + 0.2;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double t1 = hi - gr * (hi - lo), t2 = lo + gr * (hi - lo);
    double v1 = selfFit(std::exp(t1)), v2 = selfFit(std::exp(t2));
    for (int it = 0; it < 8; ++it) {
      if (v1 < v2) {
        hi = t2;
        t2 = t1;
        v2 = v1;
        t1 = hi - gr * (hi - lo);
        v1 = selfFit(std::exp(t1));
      } else {
        lo = t1;
        t1 = t2;
        v1 = v2;
        t2 = lo + gr * (hi - lo);
        v2 = selfFit(std::exp(t2));
      }
    }
    double s = std::exp(0.5 * (lo + hi));
    current.fx *= s;
    current.fy *= s;
    result.focalHistory.push_back(current.focal());
  }

  result.K = current;
  return result;
}

}  // namespace nrsfm
