#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include <Eigen/Dense>

#include "flare/error.hpp"
#include "flare/manifold.hpp"
#include "flare/rng.hpp"

namespace flare {

namespace {

constexpr double kGradientClip = 4.0;
constexpr double kInitNoise = 1e-4;
constexpr double kInitExtent = 10.0;

// Spectral solver settings.
constexpr int kFilterDegree = 16;
constexpr int kMaxFilterRounds = 300;
constexpr double kEigenTolerance = 1e-6;
constexpr std::uint64_t kSpectralStartSeed = 0x5eedf1a2e;

double clip(double v) { return std::clamp(v, -kGradientClip, kGradientClip); }

// Sparse D^{-1/2} W D^{-1/2} in CSR form built from the (head, tail)-sorted union edges.
struct NormalizedAdjacency {
  std::size_t n = 0;
  std::vector<std::size_t> row_start;
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;

  explicit NormalizedAdjacency(const FuzzyGraph& g) : n(g.n), row_start(g.n + 1, 0) {
    std::vector<double> degree(n, 0.0);
    for (const auto& e : g.edges) degree[e.head] += e.weight;
    for (const auto& e : g.edges) ++row_start[e.head + 1];
    for (std::size_t i = 0; i < n; ++i) row_start[i + 1] += row_start[i];
    cols.reserve(g.edges.size());
    vals.reserve(g.edges.size());
    for (const auto& e : g.edges) {
      cols.push_back(e.tail);
      vals.push_back(e.weight / std::sqrt(degree[e.head] * degree[e.tail]));
    }
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = row_start[i]; p < row_start[i + 1]; ++p)
        y.row(static_cast<Eigen::Index>(i)) += vals[p] * x.row(cols[p]);
    return y;
  }
};

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& y) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
  return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

// Chebyshev filter damping the spectrum on [lower, upper] and amplifying above it.
Eigen::MatrixXd chebyshev_filter(const NormalizedAdjacency& a, const Eigen::MatrixXd& x,
                                 double lower, double upper) {
  const double e = (upper - lower) / 2.0;
  const double c = (upper + lower) / 2.0;
  Eigen::MatrixXd prev = x;
  Eigen::MatrixXd cur = (a.apply(x) - c * x) / e;
  for (int i = 2; i <= kFilterDegree; ++i) {
    Eigen::MatrixXd next = 2.0 * (a.apply(cur) - c * cur) / e - prev;
    prev = std::move(cur);
    cur = std::move(next);
  }
  return cur;
}

void random_init(Matrix& coords, Rng& rng) {
  for (double& v : coords.data()) v = rng.uniform(-kInitExtent, kInitExtent);
}

struct EdgeSchedule {
  std::vector<std::uint32_t> head, tail;
  std::vector<double> epochs_per_sample;
};

EdgeSchedule make_schedule(const FuzzyGraph& graph, std::size_t epochs) {
  EdgeSchedule s;
  double max_w = 0.0;
  for (const auto& e : graph.edges) max_w = std::max(max_w, e.weight);
  const double floor_w = max_w / static_cast<double>(epochs);
  for (const auto& e : graph.edges) {
    if (e.weight < floor_w) continue;
    s.head.push_back(e.head);
    s.tail.push_back(e.tail);
    s.epochs_per_sample.push_back(max_w / e.weight);
  }
  return s;
}

struct Gradients {
  double a, b, gamma;

  double attractive(double dist2) const {
    if (dist2 <= 0.0) return 0.0;
    const double pd2b = std::pow(dist2, b);
    return (-2.0 * a * b * pd2b / dist2) / (a * pd2b + 1.0);
  }
  double repulsive(double dist2) const {
    return 2.0 * gamma * b / ((0.001 + dist2) * (a * std::pow(dist2, b) + 1.0));
  }
};

// Plain loads/stores for the deterministic path; relaxed atomics when several
// workers share the coordinate array.
struct PlainAccess {
  static double load(double& v) { return v; }
  static void store(double& v, double x) { v = x; }
};
struct AtomicAccess {
  static double load(double& v) { return std::atomic_ref<double>(v).load(std::memory_order_relaxed); }
  static void store(double& v, double x) { std::atomic_ref<double>(v).store(x, std::memory_order_relaxed); }
};

template <typename Access>
void run_epoch_range(Matrix& y, const EdgeSchedule& s, std::vector<double>& next_sample,
                     std::vector<double>& next_negative, std::size_t begin, std::size_t end,
                     std::size_t epoch, double alpha, double negative_rate, const Gradients& grad,
                     Rng& rng) {
  const std::size_t dims = y.cols();
  const std::size_t n = y.rows();
  std::vector<double> cur(dims), oth(dims);
  for (std::size_t e = begin; e < end; ++e) {
    if (next_sample[e] > static_cast<double>(epoch)) continue;
    const std::uint32_t j = s.head[e];
    const std::uint32_t k = s.tail[e];
    auto yj = y.row(j);
    auto yk = y.row(k);
    double dist2 = 0.0;
    for (std::size_t d = 0; d < dims; ++d) {
      cur[d] = Access::load(yj[d]);
      oth[d] = Access::load(yk[d]);
      dist2 += (cur[d] - oth[d]) * (cur[d] - oth[d]);
    }
    const double coeff = grad.attractive(dist2);
    for (std::size_t d = 0; d < dims; ++d) {
      const double g = clip(coeff * (cur[d] - oth[d])) * alpha;
      cur[d] += g;
      Access::store(yj[d], cur[d]);
      Access::store(yk[d], oth[d] - g);
    }
    next_sample[e] += s.epochs_per_sample[e];

    const double per_negative = s.epochs_per_sample[e] / negative_rate;
    const auto negatives =
        static_cast<long>((static_cast<double>(epoch) - next_negative[e]) / per_negative);
    for (long p = 0; p < negatives; ++p) {
      const auto other = static_cast<std::uint32_t>(rng.below(n));
      auto yo = y.row(other);
      double d2 = 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        oth[d] = Access::load(yo[d]);
        d2 += (cur[d] - oth[d]) * (cur[d] - oth[d]);
      }
      if (d2 <= 0.0 && other == j) continue;
      const double rc = d2 > 0.0 ? grad.repulsive(d2) : 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        const double g = rc > 0.0 ? clip(rc * (cur[d] - oth[d])) : kGradientClip;
        cur[d] += g * alpha;
        Access::store(yj[d], cur[d]);
      }
    }
    next_negative[e] += static_cast<double>(negatives) * per_negative;
  }
}

} // namespace

CurveParams fit_curve(double spread, double min_dist) {
  if (!(spread > 0.0) || !(min_dist >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "spread must be positive and min_dist non-negative");
  constexpr int samples = 300;
  std::vector<double> xs(samples), ys(samples);
  for (int i = 0; i < samples; ++i) {
    xs[i] = 3.0 * spread * i / (samples - 1);
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }

  // Levenberg-Marquardt from (1, 1).
  auto residuals = [&](double a, double b, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r.resize(samples);
    if (jac) jac->resize(samples, 2);
    for (int i = 0; i < samples; ++i) {
      const double x = xs[i];
      const double p = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
      const double denom = 1.0 + a * p;
      r[i] = 1.0 / denom - ys[i];
      if (jac) {
        (*jac)(i, 0) = -p / (denom * denom);
        (*jac)(i, 1) = x > 0.0 ? -a * p * 2.0 * std::log(x) / (denom * denom) : 0.0;
      }
    }
    return r.squaredNorm();
  };

  double a = 1.0, b = 1.0, damping = 1e-3;
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  double cost = residuals(a, b, r, &jac);
  for (int it = 0; it < 500; ++it) {
    const Eigen::Matrix2d jtj = jac.transpose() * jac;
    const Eigen::Vector2d jtr = jac.transpose() * r;
    Eigen::Matrix2d lhs = jtj;
    lhs.diagonal() += damping * jtj.diagonal();
    const Eigen::Vector2d step = lhs.ldlt().solve(-jtr);
    Eigen::VectorXd trial_r;
    const double trial = residuals(a + step[0], b + step[1], trial_r, nullptr);
    if (trial < cost) {
      a += step[0];
      b += step[1];
      const double improvement = cost - trial;
      cost = residuals(a, b, r, &jac);
      damping = std::max(damping / 10.0, 1e-12);
      if (improvement < 1e-15 * std::max(cost, 1e-300) || step.norm() < 1e-14) break;
    } else {
      damping *= 10.0;
      if (damping > 1e12) break;
    }
  }
  return {a, b};
}

std::optional<Matrix> spectral_layout(const FuzzyGraph& graph, std::size_t dims) {
  const std::size_t n = graph.n;
  const std::size_t wanted = dims + 1;
  if (n <= wanted || graph.edges.empty()) return std::nullopt;

  const NormalizedAdjacency adj(graph);
  const std::size_t block = std::min(n, wanted + std::max<std::size_t>(wanted, 8));
  const auto nb = static_cast<Eigen::Index>(block);
  const auto nn = static_cast<Eigen::Index>(n);

  Rng rng(kSpectralStartSeed);
  Eigen::MatrixXd x(nn, nb);
  for (Eigen::Index i = 0; i < nn; ++i)
    for (Eigen::Index j = 0; j < nb; ++j) x(i, j) = rng.normal();
  x = orthonormalize(x);

  for (int round = 0; round < kMaxFilterRounds; ++round) {
    // Rayleigh-Ritz on the current block.
    const Eigen::MatrixXd ax = adj.apply(x);
    const Eigen::MatrixXd h = x.transpose() * ax;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (h + h.transpose()));
    if (eig.info() != Eigen::Success) return std::nullopt;
    // Eigen sorts ascending; we want the largest first.
    const Eigen::MatrixXd u = eig.eigenvectors().rowwise().reverse();
    const Eigen::VectorXd theta = eig.eigenvalues().reverse();
    x = x * u;
    const Eigen::MatrixXd ritz_ax = ax * u;

    bool converged = true;
    for (std::size_t j = 0; j < wanted; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double res = (ritz_ax.col(jj) - theta[jj] * x.col(jj)).norm();
      if (!(res <= kEigenTolerance)) {
        converged = false;
        break;
      }
    }
    if (converged) {
      Matrix coords(n, dims);
      double extent = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dims; ++d) {
          coords(i, d) = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d + 1));
          extent = std::max(extent, std::abs(coords(i, d)));
        }
      if (!(extent > 0.0) || !std::isfinite(extent)) return std::nullopt;
      for (double& v : coords.data()) v *= kInitExtent / extent;
      return coords;
    }
    const double cut = theta[nb - 1];
    if (!(cut > -1.0)) return std::nullopt;
    x = orthonormalize(chebyshev_filter(adj, x, -1.0, cut));
  }
  return std::nullopt;
}

Embedding embed(const FuzzyGraph& graph, const EmbedParams& params, std::uint64_t seed) {
  if (params.dims < 1) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be >= 1");
  if (params.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");

  Embedding out;
  out.seed = seed;
  Rng rng(seed);
  const std::size_t n = graph.n;

  if (auto spectral = spectral_layout(graph, params.dims)) {
    out.coords = std::move(*spectral);
    out.spectral_init = true;
    for (double& v : out.coords.data()) v += kInitNoise * rng.normal();
  } else {
    out.coords = Matrix(n, params.dims);
    random_init(out.coords, rng);
  }

  const auto schedule = make_schedule(graph, params.epochs);
  if (schedule.head.empty()) return out;

  const auto [a, b] = fit_curve(params.spread, params.min_dist);
  const Gradients grad{a, b, params.repulsion_strength};
  const std::size_t edges = schedule.head.size();
  std::vector<double> next_sample = schedule.epochs_per_sample;
  std::vector<double> next_negative(edges);
  for (std::size_t e = 0; e < edges; ++e)
    next_negative[e] = schedule.epochs_per_sample[e] / params.negative_sample_rate;

  const unsigned workers = params.deterministic ? 1u : std::max(1u, params.threads);
  std::vector<Rng> worker_rngs;
  for (unsigned w = 1; w < workers; ++w) worker_rngs.emplace_back(rng.next());

  double alpha = params.learning_rate;
  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    if (workers == 1) {
      run_epoch_range<PlainAccess>(out.coords, schedule, next_sample, next_negative, 0, edges,
                                   epoch, alpha, params.negative_sample_rate, grad, rng);
    } else {
      // Hogwild-style: results depend on thread interleaving.
      const std::size_t chunk = (edges + workers - 1) / workers;
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(edges, begin + chunk);
        Rng& wrng = w == 0 ? rng : worker_rngs[w - 1];
        pool.emplace_back([&, begin, end, &wrng = wrng] {
          run_epoch_range<AtomicAccess>(out.coords, schedule, next_sample, next_negative, begin,
                                        end, epoch, alpha, params.negative_sample_rate, grad,
                                        wrng);
        });
      }
    }
    alpha = params.learning_rate * (1.0 - static_cast<double>(epoch) / static_cast<double>(params.epochs));
  }
  return out;
}

} // namespace flare
