#include "seqbed/belief.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>

namespace seqbed {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

ParticleSet::ParticleSet(Eigen::MatrixXd thetas, ParamBounds bounds, int iteration)
    : ParticleSet(thetas, Eigen::VectorXd::Zero(thetas.rows()), std::move(bounds), iteration) {}

ParticleSet::ParticleSet(Eigen::MatrixXd thetas, Eigen::VectorXd log_weights, ParamBounds bounds,
                         int iteration)
    : thetas_(std::move(thetas)),
      log_weights_(std::move(log_weights)),
      bounds_(std::move(bounds)),
      iteration_(iteration) {
  if (thetas_.rows() != log_weights_.size()) {
    throw std::invalid_argument("ParticleSet: theta and weight counts differ");
  }
  if (thetas_.rows() > 0 && !(log_weights_.maxCoeff() > kNegInf)) {
    throw std::invalid_argument("ParticleSet: all weights are zero");
  }
}

Eigen::VectorXd ParticleSet::weights() const {
  const double top = log_weights_.maxCoeff();
  // std::exp keeps exp(-inf) exactly zero, which the vectorized path does not
  return (log_weights_.array() - top).unaryExpr([](double v) { return std::exp(v); }).matrix();
}

Eigen::VectorXd ParticleSet::normalized_weights() const {
  Eigen::VectorXd w = weights();
  return w / w.sum();
}

double ParticleSet::ess() const { return seqbed::ess(weights()); }

bool ParticleSet::uniform() const {
  return size() == 0 || (log_weights_.array() == log_weights_[0]).all();
}

ParticleSet update_weights(const ParticleSet& particles, std::span<const RatioModel> ratios,
                           const Eigen::Ref<const Eigen::VectorXd>& observed_summary,
                           WeightUpdateReport* report) {
  if (static_cast<int>(ratios.size()) != particles.size()) {
    throw std::invalid_argument("update_weights: need one ratio model per particle");
  }
  Eigen::VectorXd logw = particles.log_weights();
  int zeroed = 0;
  for (int i = 0; i < particles.size(); ++i) {
    const double lr = log_ratio(ratios[static_cast<std::size_t>(i)], observed_summary);
    if (std::isfinite(lr)) {
      logw[i] += lr;
    } else {
      logw[i] = kNegInf;
      ++zeroed;
    }
  }
  if (report) report->zeroed = zeroed;
  return ParticleSet(particles.thetas(), std::move(logw), particles.bounds(),
                     particles.iteration());
}

std::vector<int> sample_belief_indices(const ParticleSet& particles, int n, Rng& rng) {
  const Eigen::VectorXd w = particles.weights();
  std::discrete_distribution<int> cat(w.data(), w.data() + w.size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int& i : idx) i = cat(rng);
  return idx;
}

Eigen::MatrixXd sample_belief(const ParticleSet& particles, int n, Rng& rng) {
  const std::vector<int> idx = sample_belief_indices(particles, n, rng);
  Eigen::MatrixXd out(n, particles.dim());
  for (int i = 0; i < n; ++i) out.row(i) = particles.thetas().row(idx[static_cast<std::size_t>(i)]);
  return out;
}

UnitTransform transform_unit(const Eigen::MatrixXd& thetas, const ParamBounds& bounds) {
  const Eigen::Index dim = thetas.cols();
  UnitTransform t;
  t.scaler.min = thetas.colwise().minCoeff().transpose();
  t.scaler.range = (thetas.colwise().maxCoeff() - thetas.colwise().minCoeff()).transpose();
  t.scaler.passthrough.assign(static_cast<std::size_t>(dim), false);
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (!(t.scaler.range[j] > 0.0)) {
      t.scaler.passthrough[static_cast<std::size_t>(j)] = true;
      t.scaler.min[j] = 0.0;
      t.scaler.range[j] = 1.0;
    }
  }
  t.thetas = (thetas.rowwise() - t.scaler.min.transpose()).array().rowwise() /
             t.scaler.range.transpose().array();
  t.bounds.lower = ((bounds.lower - t.scaler.min).array() / t.scaler.range.array()).matrix();
  t.bounds.upper = ((bounds.upper - t.scaler.min).array() / t.scaler.range.array()).matrix();
  return t;
}

Eigen::MatrixXd inverse_transform(const UnitScaler& scaler, const Eigen::MatrixXd& thetas) {
  return (thetas.array().rowwise() * scaler.range.transpose().array()).matrix().rowwise() +
         scaler.min.transpose();
}

namespace {

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double upper = v[mid];
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

class KdTree {
 public:
  explicit KdTree(const Eigen::MatrixXd& points) : pts_(points) {
    std::vector<int> idx(static_cast<std::size_t>(points.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
  }

  // Distance from point `self` to its nearest other point.
  double nearest_other(int self) const {
    double best = std::numeric_limits<double>::infinity();
    search(root_.get(), self, best);
    return std::sqrt(best);
  }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    std::unique_ptr<Node> left;
    std::unique_ptr<Node> right;
  };

  std::unique_ptr<Node> build(std::vector<int>& idx, int begin, int end, int depth) {
    if (begin >= end) return nullptr;
    const int axis = depth % static_cast<int>(pts_.cols());
    const int mid = begin + (end - begin) / 2;
    std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                     [&](int a, int b) { return pts_(a, axis) < pts_(b, axis); });
    auto node = std::make_unique<Node>();
    node->point = idx[static_cast<std::size_t>(mid)];
    node->axis = axis;
    node->left = build(idx, begin, mid, depth + 1);
    node->right = build(idx, mid + 1, end, depth + 1);
    return node;
  }

  void search(const Node* node, int self, double& best) const {
    if (!node) return;
    if (node->point != self) {
      best = std::min(best, (pts_.row(node->point) - pts_.row(self)).squaredNorm());
    }
    const double diff = pts_(self, node->axis) - pts_(node->point, node->axis);
    const Node* near = diff < 0 ? node->left.get() : node->right.get();
    const Node* far = diff < 0 ? node->right.get() : node->left.get();
    search(near, self, best);
    if (diff * diff < best) search(far, self, best);
  }

  const Eigen::MatrixXd& pts_;
  std::unique_ptr<Node> root_;
};

}  // namespace

double nn_median_distance_kdtree(const Eigen::MatrixXd& points) {
  if (points.rows() < 2) throw std::invalid_argument("nn_median_distance: need >= 2 points");
  const KdTree tree(points);
  std::vector<double> d(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    d[static_cast<std::size_t>(i)] = tree.nearest_other(static_cast<int>(i));
  }
  return median(std::move(d));
}

double nn_median_distance(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  if (n < 2) throw std::invalid_argument("nn_median_distance: need >= 2 points");
  if (n > 2000) return nn_median_distance_kdtree(points);
  std::vector<double> best(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d2 = (points.row(i) - points.row(j)).squaredNorm();
      best[static_cast<std::size_t>(i)] = std::min(best[static_cast<std::size_t>(i)], d2);
      best[static_cast<std::size_t>(j)] = std::min(best[static_cast<std::size_t>(j)], d2);
    }
  }
  for (double& b : best) b = std::sqrt(b);
  return median(std::move(best));
}

ParticleSet resample(const ParticleSet& particles, Rng& rng, const ResampleOptions& options,
                     ResampleReport* report) {
  const int n = particles.size();
  if (n < 2) throw std::invalid_argument("resample: need at least 2 particles");
  const UnitTransform unit = transform_unit(particles.thetas(), particles.bounds());
  const double delta = nn_median_distance(unit.thetas);
  const double sigma = delta > 0.0 ? std::sqrt(delta) : options.degenerate_sigma;

  const Eigen::VectorXd w = particles.weights();
  std::discrete_distribution<int> cat(w.data(), w.data() + w.size());
  std::normal_distribution<double> normal(0.0, sigma);

  Eigen::MatrixXd fresh(n, particles.dim());
  Eigen::VectorXd candidate(particles.dim());
  int fallbacks = 0;
  int rejections = 0;
  for (int i = 0; i < n; ++i) {
    const int centre = cat(rng);
    bool accepted = false;
    for (int attempt = 0; attempt < options.max_attempts && !accepted; ++attempt) {
      for (int j = 0; j < particles.dim(); ++j) candidate[j] = unit.thetas(centre, j) + normal(rng);
      accepted = unit.bounds.contains(candidate);
      if (!accepted) ++rejections;
    }
    if (!accepted) {
      candidate = unit.thetas.row(centre).transpose();
      ++fallbacks;
    }
    fresh.row(i) = candidate.transpose();
  }

  Eigen::MatrixXd thetas = inverse_transform(unit.scaler, fresh);
  // Undo round-off from the affine round trip so the support is never violated.
  const ParamBounds& b = particles.bounds();
  for (int j = 0; j < thetas.cols(); ++j) {
    thetas.col(j) = thetas.col(j).cwiseMax(b.lower[j]).cwiseMin(b.upper[j]);
  }
  if (report) *report = {delta, sigma, fallbacks, rejections};
  return ParticleSet(std::move(thetas), b, particles.iteration());
}

double silverman_bandwidth(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  const double h = std::pow(4.0 / (3.0 * n), 0.2) * sd;
  // point masses still get a positive kernel width
  return std::max(h, 1e-9 * (1.0 + std::abs(mean)));
}

Kde1d gaussian_kde(std::span<const double> samples, int points, double bandwidth) {
  if (samples.empty()) throw std::invalid_argument("gaussian_kde: no samples");
  Kde1d kde;
  kde.bandwidth = bandwidth > 0 ? bandwidth : silverman_bandwidth(samples);
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it - 3.0 * kde.bandwidth;
  const double hi = *hi_it + 3.0 * kde.bandwidth;
  kde.grid = Eigen::VectorXd::LinSpaced(points, lo, hi);
  kde.density = Eigen::VectorXd::Zero(points);
  const double inv_h = 1.0 / kde.bandwidth;
  for (double x : samples) {
    kde.density.array() += (-0.5 * ((kde.grid.array() - x) * inv_h).square()).exp();
  }
  kde.density /= static_cast<double>(samples.size()) * kde.bandwidth *
                 std::sqrt(2.0 * std::numbers::pi);
  return kde;
}

Interval hpdi(const Kde1d& kde, double mass) {
  const Eigen::Index n = kde.density.size();
  const double target = mass * kde.density.sum();
  Eigen::Index best_lo = 0;
  Eigen::Index best_hi = n - 1;
  double window = 0.0;
  Eigen::Index lo = 0;
  for (Eigen::Index hi = 0; hi < n; ++hi) {
    window += kde.density[hi];
    while (lo < hi && window - kde.density[lo] >= target) window -= kde.density[lo++];
    if (window >= target && hi - lo < best_hi - best_lo) {
      best_lo = lo;
      best_hi = hi;
    }
  }
  return {kde.grid[best_lo], kde.grid[best_hi]};
}

std::vector<Interval> hpd_region(const Kde1d& kde, double mass) {
  const Eigen::Index n = kde.density.size();
  std::vector<double> sorted(kde.density.data(), kde.density.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double target = mass * kde.density.sum();
  double acc = 0.0;
  double threshold = sorted.back();
  for (double d : sorted) {
    acc += d;
    if (acc >= target) {
      threshold = d;
      break;
    }
  }
  std::vector<Interval> region;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (kde.density[i] < threshold) continue;
    const Eigen::Index start = i;
    while (i + 1 < n && kde.density[i + 1] >= threshold) ++i;
    region.push_back({kde.grid[start], kde.grid[i]});
  }
  return region;
}

std::vector<int> kde_modes(const Kde1d& kde, double fraction) {
  const Eigen::Index n = kde.density.size();
  const double floor = fraction * kde.density.maxCoeff();
  std::vector<int> modes;
  Eigen::Index i = 0;
  while (i < n) {
    // a plateau [i, j] counts once
    Eigen::Index j = i;
    while (j + 1 < n && kde.density[j + 1] == kde.density[i]) ++j;
    const double d = kde.density[i];
    const bool left = i == 0 || kde.density[i - 1] < d;
    const bool right = j == n - 1 || kde.density[j + 1] < d;
    if (left && right && d >= floor && d > 0.0) modes.push_back(static_cast<int>((i + j) / 2));
    i = j + 1;
  }
  return modes;
}

}  // namespace seqbed
