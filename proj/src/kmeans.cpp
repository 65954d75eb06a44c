#include "iod/kmeans.hpp"

#include <limits>

#include "iod/errors.hpp"
#include "iod/rng.hpp"

namespace iod {

namespace {

int nearest_centroid(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, int i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < centroids.rows(); ++c) {
        const double d = (points.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {  // ties keep the lower centroid index
            best_d = d;
            best = c;
        }
    }
    return best;
}

}  // namespace

double weighted_kmeans_objective(const Eigen::MatrixXd& points,
                                 const std::vector<double>& weights,
                                 const Eigen::MatrixXd& centroids,
                                 const std::vector<int>& assignment) {
    double obj = 0.0;
    for (int i = 0; i < points.rows(); ++i)
        obj += weights[i] * (points.row(i) - centroids.row(assignment[i])).squaredNorm();
    return obj;
}

WeightedKMeansResult weighted_kmeans(const Eigen::MatrixXd& points,
                                     const std::vector<double>& weights, int k,
                                     std::uint64_t seed, int restarts, int max_iters,
                                     double shift_tol) {
    const int n = static_cast<int>(points.rows());
    check_contract(n >= 1, "weighted_kmeans: empty point set");
    check_contract(k >= 1 && k <= n, "weighted_kmeans: k must be in [1, n]");
    check_contract(static_cast<int>(weights.size()) == n,
                   "weighted_kmeans: weight count mismatch");
    for (double w : weights) check_contract(w > 0.0, "weighted_kmeans: weights must be positive");
    check_contract(restarts >= 1, "weighted_kmeans: need at least one restart");

    WeightedKMeansResult best;
    best.objective = std::numeric_limits<double>::infinity();

    for (int r = 0; r < restarts; ++r) {
        Rng rng = Rng::substream(seed, "kmeans-restart", static_cast<std::uint64_t>(r));

        // Weighted farthest-point seeding.
        Eigen::MatrixXd centroids(k, points.cols());
        std::vector<int> chosen;
        chosen.push_back(static_cast<int>(rng.weighted_index(weights)));
        centroids.row(0) = points.row(chosen[0]);
        for (int c = 1; c < k; ++c) {
            int far = -1;
            double far_score = -1.0;
            for (int i = 0; i < n; ++i) {
                double min_d = std::numeric_limits<double>::infinity();
                for (int j = 0; j < c; ++j)
                    min_d = std::min(min_d, (points.row(i) - centroids.row(j)).squaredNorm());
                const double score = weights[i] * min_d;
                if (score > far_score) {
                    far_score = score;
                    far = i;
                }
            }
            centroids.row(c) = points.row(far);
        }

        std::vector<int> assignment(n, 0);
        std::vector<double> history;
        for (int iter = 0; iter < max_iters; ++iter) {
            for (int i = 0; i < n; ++i) assignment[i] = nearest_centroid(points, centroids, i);

            // Any empty cluster steals the point with the largest weighted
            // residual, which strictly reduces the objective.
            std::vector<double> cluster_w(k, 0.0);
            for (int i = 0; i < n; ++i) cluster_w[assignment[i]] += weights[i];
            for (int c = 0; c < k; ++c) {
                if (cluster_w[c] > 0.0) continue;
                int worst = -1;
                double worst_score = -1.0;
                for (int i = 0; i < n; ++i) {
                    if (cluster_w[assignment[i]] <= weights[i]) continue;  // keep clusters nonempty
                    const double score =
                        weights[i] * (points.row(i) - centroids.row(assignment[i])).squaredNorm();
                    if (score > worst_score) {
                        worst_score = score;
                        worst = i;
                    }
                }
                if (worst < 0) break;
                cluster_w[assignment[worst]] -= weights[worst];
                assignment[worst] = c;
                cluster_w[c] += weights[worst];
                centroids.row(c) = points.row(worst);
            }

            Eigen::MatrixXd updated = Eigen::MatrixXd::Zero(k, points.cols());
            std::vector<double> wsum(k, 0.0);
            for (int i = 0; i < n; ++i) {
                updated.row(assignment[i]) += weights[i] * points.row(i);
                wsum[assignment[i]] += weights[i];
            }
            double shift = 0.0;
            for (int c = 0; c < k; ++c) {
                if (wsum[c] > 0.0) updated.row(c) /= wsum[c];
                else updated.row(c) = centroids.row(c);
                shift = std::max(shift, (updated.row(c) - centroids.row(c)).norm());
            }
            centroids = updated;
            history.push_back(weighted_kmeans_objective(points, weights, centroids, assignment));
            if (shift < shift_tol) break;
        }
        for (int i = 0; i < n; ++i) assignment[i] = nearest_centroid(points, centroids, i);

        const double obj = weighted_kmeans_objective(points, weights, centroids, assignment);
        if (obj < best.objective) {
            best.centroids = centroids;
            best.assignment = assignment;
            best.objective_history = history;
            best.objective = obj;
        }
    }
    return best;
}

}  // namespace iod
