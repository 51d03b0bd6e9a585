#include "vmap/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace vmap {

namespace {

constexpr double kProbEps = 1e-12;
constexpr double kEdgeEps = 1e-8;

std::vector<double> softmax(const double* logits, int n) {
  std::vector<double> p(logits, logits + n);
  double mx = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

Polyline pred_points_of(const Prediction& pred, int j) {
  int ne = pred.points.dim(1);
  Polyline pts(ne);
  for (int k = 0; k < ne; ++k) {
    pts[k].x = pred.points.v[(static_cast<size_t>(j) * ne + k) * 2 + 0];
    pts[k].y = pred.points.v[(static_cast<size_t>(j) * ne + k) * 2 + 1];
  }
  return pts;
}

}  // namespace

double focal_loss(const std::vector<double>& probs, int target_class, double alpha, double gamma) {
  double sum = 0.0;
  for (double p : probs) sum += p;
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("focal_loss: probabilities must sum to 1");
  double pt = std::max(probs.at(static_cast<size_t>(target_class)), kProbEps);
  return -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
}

double manhattan_set_distance(const Polyline& pred, const Polyline& gt,
                              const std::vector<int>& perm) {
  if (pred.size() != gt.size() || perm.size() != pred.size())
    throw std::invalid_argument("manhattan_set_distance: size mismatch");
  double d = 0.0;
  for (size_t k = 0; k < pred.size(); ++k) {
    const Vec2& g = gt[static_cast<size_t>(perm[k])];
    d += std::abs(pred[k].x - g.x) + std::abs(pred[k].y - g.y);
  }
  return d;
}

std::pair<int, double> best_permutation(const Polyline& pred_points, const MapElement& gt) {
  PermutationGroup group = permutation_group(static_cast<int>(gt.points.size()), gt.is_closed);
  int best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int k = 0; k < group.size(); ++k) {
    double c = manhattan_set_distance(pred_points, gt.points, group.permutations[static_cast<size_t>(k)]);
    if (c < best_cost) {
      best_cost = c;
      best = k;
    }
  }
  return {best, best_cost};
}

double instance_match_cost(const std::vector<double>& class_probs, const Polyline& pred_points,
                           const MapElement& gt, const LossWeights& w) {
  double cls = focal_loss(class_probs, static_cast<int>(gt.cls), w.focal_alpha, w.focal_gamma);
  return cls + best_permutation(pred_points, gt).second;
}

std::vector<int> hungarian_min(const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  int m = static_cast<int>(cost[0].size());
  if (n > m) throw std::invalid_argument("hungarian_min: more rows than columns");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials-based shortest augmenting path, 1-indexed.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

MatchResult assign_instances(const Prediction& pred, const std::vector<MapElement>& gts,
                             const LossWeights& w, bool literal_argmin) {
  int m = pred.class_logits.dim(0);
  int nc = pred.class_logits.dim(1);
  int n = static_cast<int>(gts.size());
  if (n > m) throw std::invalid_argument("assign_instances: more GT elements than predictions");

  std::vector<std::vector<double>> cls_cost(n, std::vector<double>(m));
  std::vector<std::vector<double>> pos_cost(n, std::vector<double>(m));
  std::vector<std::vector<int>> gamma(n, std::vector<int>(m));
  for (int j = 0; j < m; ++j) {
    std::vector<double> probs = softmax(&pred.class_logits.v[static_cast<size_t>(j) * nc], nc);
    Polyline pts = pred_points_of(pred, j);
    for (int i = 0; i < n; ++i) {
      cls_cost[i][j] = focal_loss(probs, static_cast<int>(gts[static_cast<size_t>(i)].cls),
                                  w.focal_alpha, w.focal_gamma);
      auto [g, c] = best_permutation(pts, gts[static_cast<size_t>(i)]);
      gamma[i][j] = g;
      pos_cost[i][j] = c;
    }
  }

  MatchResult r;
  r.pred_for_gt.resize(n);
  if (literal_argmin) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bc = std::numeric_limits<double>::infinity();
      for (int j = 0; j < m; ++j) {
        double c = cls_cost[i][j] + pos_cost[i][j];
        if (c < bc) {
          bc = c;
          best = j;
        }
      }
      r.pred_for_gt[static_cast<size_t>(i)] = best;
    }
  } else {
    std::vector<std::vector<double>> total(n, std::vector<double>(m));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) total[i][j] = cls_cost[i][j] + pos_cost[i][j];
    r.pred_for_gt = hungarian_min(total);
  }
  for (int i = 0; i < n; ++i) {
    int j = r.pred_for_gt[static_cast<size_t>(i)];
    r.perm_for_gt.push_back(gamma[i][j]);
    r.class_cost.push_back(cls_cost[i][j]);
    r.position_cost.push_back(pos_cost[i][j]);
  }
  return r;
}

namespace {

std::vector<int> query_targets(int m, const std::vector<MapElement>& gts, const MatchResult& match) {
  std::vector<int> t(static_cast<size_t>(m), kNumClasses);  // no-object
  for (size_t i = 0; i < gts.size(); ++i)
    t[static_cast<size_t>(match.pred_for_gt[i])] = static_cast<int>(gts[i].cls);
  return t;
}

}  // namespace

double loss_cls_value(const Prediction& pred, const std::vector<MapElement>& gts,
                      const MatchResult& match, const LossWeights& w) {
  int m = pred.class_logits.dim(0), nc = pred.class_logits.dim(1);
  std::vector<int> targets = query_targets(m, gts, match);
  double sum = 0.0;
  for (int j = 0; j < m; ++j) {
    std::vector<double> probs = softmax(&pred.class_logits.v[static_cast<size_t>(j) * nc], nc);
    sum += focal_loss(probs, targets[static_cast<size_t>(j)], w.focal_alpha, w.focal_gamma);
  }
  return sum / std::max<size_t>(gts.size(), 1);
}

double loss_p2p_value(const Prediction& pred, const std::vector<MapElement>& gts,
                      const MatchResult& match) {
  int ne = pred.points.dim(1);
  double sum = 0.0;
  for (size_t i = 0; i < gts.size(); ++i) {
    const MapElement& gt = gts[i];
    auto group = permutation_group(static_cast<int>(gt.points.size()), gt.is_closed);
    sum += manhattan_set_distance(pred_points_of(pred, match.pred_for_gt[i]), gt.points,
                                  group.permutations[static_cast<size_t>(match.perm_for_gt[i])]);
  }
  return sum / (std::max<size_t>(gts.size(), 1) * ne);
}

double loss_dir_value(const Prediction& pred, const std::vector<MapElement>& gts,
                      const MatchResult& match) {
  double sum = 0.0;
  int64_t edges = 0;
  for (size_t i = 0; i < gts.size(); ++i) {
    const MapElement& gt = gts[i];
    int ne = static_cast<int>(gt.points.size());
    auto group = permutation_group(ne, gt.is_closed);
    const auto& perm = group.permutations[static_cast<size_t>(match.perm_for_gt[i])];
    Polyline pp = pred_points_of(pred, match.pred_for_gt[i]);
    int n_edges = gt.is_closed ? ne : ne - 1;
    for (int k = 0; k < n_edges; ++k) {
      int k1 = (k + 1) % ne;
      Vec2 pe = pp[static_cast<size_t>(k1)] - pp[static_cast<size_t>(k)];
      Vec2 ge = gt.points[static_cast<size_t>(perm[k1])] - gt.points[static_cast<size_t>(perm[k])];
      double np = pe.norm(), ng = ge.norm();
      if (np < kEdgeEps || ng < kEdgeEps) continue;  // zero-length edge contributes 0
      sum += 1.0 - pe.dot(ge) / (np * ng);
    }
    edges += n_edges;
  }
  return edges > 0 ? sum / static_cast<double>(edges) : 0.0;
}

// ---- differentiable loss graph nodes ----

namespace {

using ad::Node;
using ad::Tape;
using ad::Var;

// Focal loss from logits summed over queries, normalized by 1/norm.
Var focal_from_logits(Tape& tape, const Var& logits, const std::vector<int>& targets, double alpha,
                      double gamma, double norm) {
  int m = logits->val.dim(0), nc = logits->val.dim(1);
  double total = 0.0;
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * nc);
  for (int j = 0; j < m; ++j) {
    std::vector<double> p = softmax(&logits->val.v[static_cast<size_t>(j) * nc], nc);
    std::copy(p.begin(), p.end(), probs->begin() + static_cast<size_t>(j) * nc);
    double pt = std::max(p[static_cast<size_t>(targets[static_cast<size_t>(j)])], kProbEps);
    total += -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  total /= norm;
  Var pl = logits;
  auto tgt = std::make_shared<std::vector<int>>(targets);
  return tape.make(Tensor({1}, {total}), [pl, probs, tgt, alpha, gamma, norm, m, nc](Node& n) {
    if (!pl->needs_grad) return;
    double g0 = n.grad.v[0] / norm;
    for (int j = 0; j < m; ++j) {
      const double* p = &(*probs)[static_cast<size_t>(j) * nc];
      int t = (*tgt)[static_cast<size_t>(j)];
      double pt = std::max(p[t], kProbEps);
      // dL/dp_t of the focal term.
      double dldp = -alpha * (-gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt) +
                              std::pow(1.0 - pt, gamma) / pt);
      for (int c = 0; c < nc; ++c) {
        double dp_dz = pt * ((c == t ? 1.0 : 0.0) - p[c]);
        pl->grad.v[static_cast<size_t>(j) * nc + c] += g0 * dldp * dp_dz;
      }
    }
  });
}

struct MatchedPair {
  int pred_index;
  Polyline gt_permuted;  // gt points reordered by gamma
  bool closed;
};

// L1 distance between matched prediction points and permuted GT points,
// normalized by 1/norm. `points` is [M*Ne, 2].
Var l1_matched(Tape& tape, const Var& points, const std::vector<MatchedPair>& pairs, int ne,
               double norm) {
  double total = 0.0;
  for (const auto& pr : pairs) {
    for (int k = 0; k < ne; ++k) {
      size_t base = (static_cast<size_t>(pr.pred_index) * ne + k) * 2;
      total += std::abs(points->val.v[base] - pr.gt_permuted[static_cast<size_t>(k)].x) +
               std::abs(points->val.v[base + 1] - pr.gt_permuted[static_cast<size_t>(k)].y);
    }
  }
  total /= norm;
  Var pp = points;
  auto prs = std::make_shared<std::vector<MatchedPair>>(pairs);
  return tape.make(Tensor({1}, {total}), [pp, prs, ne, norm](Node& n) {
    if (!pp->needs_grad) return;
    double g0 = n.grad.v[0] / norm;
    for (const auto& pr : *prs) {
      for (int k = 0; k < ne; ++k) {
        size_t base = (static_cast<size_t>(pr.pred_index) * ne + k) * 2;
        double dx = pp->val.v[base] - pr.gt_permuted[static_cast<size_t>(k)].x;
        double dy = pp->val.v[base + 1] - pr.gt_permuted[static_cast<size_t>(k)].y;
        pp->grad.v[base] += g0 * (dx > 0 ? 1.0 : (dx < 0 ? -1.0 : 0.0));
        pp->grad.v[base + 1] += g0 * (dy > 0 ? 1.0 : (dy < 0 ? -1.0 : 0.0));
      }
    }
  });
}

// Mean (1 - cos angle) between prediction and GT edges, over all matched
// pairs; `norm` is the total edge count.
Var dir_matched(Tape& tape, const Var& points, const std::vector<MatchedPair>& pairs, int ne,
                double norm) {
  double total = 0.0;
  for (const auto& pr : pairs) {
    int n_edges = pr.closed ? ne : ne - 1;
    for (int k = 0; k < n_edges; ++k) {
      int k1 = (k + 1) % ne;
      size_t b0 = (static_cast<size_t>(pr.pred_index) * ne + k) * 2;
      size_t b1 = (static_cast<size_t>(pr.pred_index) * ne + k1) * 2;
      Vec2 pe{points->val.v[b1] - points->val.v[b0], points->val.v[b1 + 1] - points->val.v[b0 + 1]};
      Vec2 ge = pr.gt_permuted[static_cast<size_t>(k1)] - pr.gt_permuted[static_cast<size_t>(k)];
      double np = pe.norm(), ng = ge.norm();
      if (np < kEdgeEps || ng < kEdgeEps) continue;
      total += 1.0 - pe.dot(ge) / (np * ng);
    }
  }
  total /= norm;
  Var pp = points;
  auto prs = std::make_shared<std::vector<MatchedPair>>(pairs);
  return tape.make(Tensor({1}, {total}), [pp, prs, ne, norm](Node& n) {
    if (!pp->needs_grad) return;
    double g0 = n.grad.v[0] / norm;
    for (const auto& pr : *prs) {
      int n_edges = pr.closed ? ne : ne - 1;
      for (int k = 0; k < n_edges; ++k) {
        int k1 = (k + 1) % ne;
        size_t b0 = (static_cast<size_t>(pr.pred_index) * ne + k) * 2;
        size_t b1 = (static_cast<size_t>(pr.pred_index) * ne + k1) * 2;
        Vec2 pe{pp->val.v[b1] - pp->val.v[b0], pp->val.v[b1 + 1] - pp->val.v[b0 + 1]};
        Vec2 ge = pr.gt_permuted[static_cast<size_t>(k1)] - pr.gt_permuted[static_cast<size_t>(k)];
        double np = pe.norm(), ng = ge.norm();
        if (np < kEdgeEps || ng < kEdgeEps) continue;
        double inv = 1.0 / (np * ng);
        double cosv = pe.dot(ge) * inv;
        // d(1 - cos)/d pe
        Vec2 dpe{-(ge.x * inv - cosv * pe.x / (np * np)), -(ge.y * inv - cosv * pe.y / (np * np))};
        pp->grad.v[b1] += g0 * dpe.x;
        pp->grad.v[b1 + 1] += g0 * dpe.y;
        pp->grad.v[b0] -= g0 * dpe.x;
        pp->grad.v[b0 + 1] -= g0 * dpe.y;
      }
    }
  });
}

Var add_scaled(Tape& tape, const std::vector<Var>& xs, const std::vector<double>& cs) {
  double total = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) total += cs[i] * xs[i]->val.v[0];
  auto px = std::make_shared<std::vector<Var>>(xs);
  auto pc = std::make_shared<std::vector<double>>(cs);
  return tape.make(Tensor({1}, {total}), [px, pc](Node& n) {
    for (size_t i = 0; i < px->size(); ++i)
      if ((*px)[i]->needs_grad) (*px)[i]->grad.v[0] += n.grad.v[0] * (*pc)[i];
  });
}

}  // namespace

Prediction prediction_values(const PredictionVars& vars, const ModelConfig& config) {
  Prediction p;
  p.class_logits = vars.logits->val;
  p.points = Tensor({config.num_queries, config.points_per_element, 2}, vars.points->val.v);
  return p;
}

ad::Var total_loss(ad::Tape& tape, const ModelOutput& output, const std::vector<MapElement>& gts,
                   const LossWeights& w, const ModelConfig& config, LossReport* report,
                   std::string* match_signature, bool literal_argmin) {
  if (w.alpha_c < 0 || w.alpha_p < 0 || w.alpha_d < 0)
    throw std::invalid_argument("total_loss: negative loss weights");
  if (output.layers.empty()) throw std::invalid_argument("total_loss: no decoder layer outputs");
  int ne = config.points_per_element;
  int m = config.num_queries;

  std::vector<Var> terms;
  std::vector<double> coeffs;
  LossReport rep;
  std::string sig;

  for (const PredictionVars& layer : output.layers) {
    Prediction pred = prediction_values(layer, config);
    MatchResult match = assign_instances(pred, gts, w, literal_argmin);

    std::vector<int> targets = query_targets(m, gts, match);
    std::vector<MatchedPair> pairs;
    int64_t edge_count = 0;
    for (size_t i = 0; i < gts.size(); ++i) {
      const MapElement& gt = gts[i];
      auto group = permutation_group(static_cast<int>(gt.points.size()), gt.is_closed);
      const auto& perm = group.permutations[static_cast<size_t>(match.perm_for_gt[i])];
      MatchedPair pr;
      pr.pred_index = match.pred_for_gt[i];
      pr.closed = gt.is_closed;
      pr.gt_permuted.resize(gt.points.size());
      for (size_t k = 0; k < gt.points.size(); ++k)
        pr.gt_permuted[k] = gt.points[static_cast<size_t>(perm[k])];
      pairs.push_back(std::move(pr));
      edge_count += gt.is_closed ? ne : ne - 1;
      sig += std::to_string(match.pred_for_gt[i]) + ":" + std::to_string(match.perm_for_gt[i]) + ",";
    }
    sig += ";";

    double n_norm = std::max<double>(static_cast<double>(gts.size()), 1.0);
    Var cls = focal_from_logits(tape, layer.logits, targets, w.focal_alpha, w.focal_gamma, n_norm);
    Var p2p = l1_matched(tape, layer.points, pairs, ne, n_norm * ne);
    Var dir = dir_matched(tape, layer.points, pairs, ne,
                          std::max<double>(static_cast<double>(edge_count), 1.0));

    terms.insert(terms.end(), {cls, p2p, dir});
    coeffs.insert(coeffs.end(), {w.alpha_c, w.alpha_p, w.alpha_d});

    LayerLoss ll;
    ll.cls = cls->val.v[0];
    ll.p2p = p2p->val.v[0];
    ll.dir = dir->val.v[0];
    ll.total = w.alpha_c * ll.cls + w.alpha_p * ll.p2p + w.alpha_d * ll.dir;
    rep.cls += ll.cls;
    rep.p2p += ll.p2p;
    rep.dir += ll.dir;
    rep.total += ll.total;
    rep.per_layer.push_back(ll);
  }

  if (report) *report = rep;
  if (match_signature) *match_signature = sig;
  return add_scaled(tape, terms, coeffs);
}

std::vector<MapElement> normalize_elements(const VectorizedMap& map) {
  std::vector<MapElement> out;
  out.reserve(map.elements.size());
  for (const MapElement& el : map.elements) {
    MapElement e = el;
    e.points = normalize_points(el.points, map.range);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace vmap
