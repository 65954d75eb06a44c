#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace iod {

struct WeightedKMeansResult {
    Eigen::MatrixXd centroids;              // K x D
    std::vector<int> assignment;            // per point, nearest-centroid index
    std::vector<double> objective_history;  // objective after each Lloyd iteration
    double objective = 0.0;                 // final weighted within-cluster squared distance
};

// Lloyd iterations with weighted farthest-point seeding (first centroid
// weight-proportional from the seeded stream, the rest greedy). Restarts
// keep the best objective; everything is deterministic per seed. Empty
// clusters steal the point with the largest weighted residual.
WeightedKMeansResult weighted_kmeans(const Eigen::MatrixXd& points,
                                     const std::vector<double>& weights, int k,
                                     std::uint64_t seed, int restarts = 8, int max_iters = 100,
                                     double shift_tol = 1e-9);

double weighted_kmeans_objective(const Eigen::MatrixXd& points,
                                 const std::vector<double>& weights,
                                 const Eigen::MatrixXd& centroids,
                                 const std::vector<int>& assignment);

}  // namespace iod
