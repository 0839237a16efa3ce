#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lwta {

using Index = Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class SimilarityKind { cos, cos3, rank, wpmi, softwpmi };

/// Short names accepted on the command line, in SimilarityKind order.
const std::vector<std::string>& similarity_names();
std::string to_string(SimilarityKind kind);
/// Raises ParameterError listing the accepted names.
SimilarityKind parse_similarity(const std::string& name);

struct SimilarityParams {
  double lambda = 0.3;
  /// WPMI top-set size; defaults to max(1, min(100, N / 10)).
  std::optional<Index> top_k;
  /// SoftWPMI weights are sigmoid(standardized q / temperature).
  double temperature = 1.0;
};

Index default_top_k(Index probes);

/// Row-wise log-softmax of P: log p(t_m | x_i).
MatrixXd concept_log_probs(const MatrixXd& p);
/// log of the mean over probes of p(t_m | x_i), per concept.
VectorXd mean_log_prob(const MatrixXd& log_probs);

/// Indices of q sorted by descending value; equal values keep ascending index order.
std::vector<Index> descending_order(const VectorXd& q);

/// cosine(q, P[:, m]); zero vectors score 0.
VectorXd similarity_cos(const VectorXd& q, const MatrixXd& p);
/// cosine of the element-wise cubes of the mean-centred q and P[:, m].
VectorXd similarity_cos_cubed(const VectorXd& q, const MatrixXd& p);
/// -|| P[order(q), m] - sort_desc(P[:, m]) ||_2.
VectorXd similarity_rank_reorder(const VectorXd& q, const MatrixXd& p);
/// sum over the top-K probes of log p(t_m | x_i) - lambda * K * log mean_i p(t_m | x_i).
VectorXd similarity_wpmi(const VectorXd& q, const MatrixXd& p, Index top_k, double lambda);
/// WPMI with soft membership w_i = sigmoid(standardize(q)_i / temperature) in place of the top-K set.
VectorXd similarity_softwpmi(const VectorXd& q, const MatrixXd& p, double lambda, double temperature = 1.0);

/// A similarity bound to one concept matrix, with the per-matrix work done once.
class SimilarityFunction {
 public:
  SimilarityFunction(SimilarityKind kind, MatrixXd p, SimilarityParams params = {});

  SimilarityKind kind() const { return kind_; }
  std::string name() const { return to_string(kind_); }
  const MatrixXd& matrix() const { return p_; }
  Index top_k() const { return top_k_; }

  /// Length-M score vector for an activation record of length N.
  VectorXd operator()(const VectorXd& q) const;

 private:
  SimilarityKind kind_;
  MatrixXd p_;
  SimilarityParams params_;
  Index top_k_ = 1;
  MatrixXd log_probs_;
  VectorXd log_mean_;
};

}  // namespace lwta
