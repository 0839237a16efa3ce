#include "lwta/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lwta/errors.hpp"

namespace lwta {

namespace {

void check_lengths(const VectorXd& q, const MatrixXd& p) {
  if (q.size() != p.rows()) {
    throw DimensionError("activation record has " + std::to_string(q.size()) + " entries, concept matrix has " +
                         std::to_string(p.rows()) + " probes");
  }
}

double cosine(const VectorXd& a, const VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

VectorXd centred_cube(const VectorXd& v) {
  const VectorXd c = v.array() - v.mean();
  return c.array().cube();
}

VectorXd wpmi_scores(const VectorXd& q, const MatrixXd& log_probs, const VectorXd& log_mean, Index k, double lambda) {
  const auto order = descending_order(q);
  VectorXd scores = -lambda * static_cast<double>(k) * log_mean;
  for (Index i = 0; i < k; ++i) scores += log_probs.row(order[static_cast<std::size_t>(i)]).transpose();
  return scores;
}

VectorXd softwpmi_scores(const VectorXd& q, const MatrixXd& log_probs, const VectorXd& log_mean, double lambda,
                         double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("SoftWPMI temperature must be positive");
  const double mean = q.mean();
  const double sd = std::sqrt((q.array() - mean).square().mean());
  const VectorXd z = sd > 0.0 ? VectorXd((q.array() - mean) / sd) : VectorXd::Zero(q.size());
  const VectorXd w = (1.0 / (1.0 + (-z.array() / temperature).exp())).matrix();
  return log_probs.transpose() * w - lambda * w.sum() * log_mean;
}

}  // namespace

const std::vector<std::string>& similarity_names() {
  static const std::vector<std::string> names{"cos", "cos3", "rank", "wpmi", "softwpmi"};
  return names;
}

std::string to_string(SimilarityKind kind) { return similarity_names()[static_cast<std::size_t>(kind)]; }

SimilarityKind parse_similarity(const std::string& name) {
  const auto& names = similarity_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<SimilarityKind>(i);
  }
  std::string known;
  for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
  throw ParameterError("unknown similarity '" + name + "'; available: " + known);
}

Index default_top_k(Index probes) { return std::max<Index>(1, std::min<Index>(100, probes / 10)); }

MatrixXd concept_log_probs(const MatrixXd& p) {
  MatrixXd out(p.rows(), p.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    const double top = p.row(i).maxCoeff();
    const double lse = top + std::log((p.row(i).array() - top).exp().sum());
    out.row(i) = p.row(i).array() - lse;
  }
  return out;
}

VectorXd mean_log_prob(const MatrixXd& log_probs) {
  VectorXd out(log_probs.cols());
  const double log_n = std::log(static_cast<double>(log_probs.rows()));
  for (Index m = 0; m < log_probs.cols(); ++m) {
    const double top = log_probs.col(m).maxCoeff();
    out(m) = top + std::log((log_probs.col(m).array() - top).exp().sum()) - log_n;
  }
  return out;
}

std::vector<Index> descending_order(const VectorXd& q) {
  std::vector<Index> order(static_cast<std::size_t>(q.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return q(a) > q(b); });
  return order;
}

VectorXd similarity_cos(const VectorXd& q, const MatrixXd& p) {
  check_lengths(q, p);
  VectorXd scores(p.cols());
  for (Index m = 0; m < p.cols(); ++m) scores(m) = cosine(q, p.col(m));
  return scores;
}

VectorXd similarity_cos_cubed(const VectorXd& q, const MatrixXd& p) {
  check_lengths(q, p);
  const VectorXd qc = centred_cube(q);
  VectorXd scores(p.cols());
  for (Index m = 0; m < p.cols(); ++m) scores(m) = cosine(qc, centred_cube(p.col(m)));
  return scores;
}

VectorXd similarity_rank_reorder(const VectorXd& q, const MatrixXd& p) {
  check_lengths(q, p);
  const auto order = descending_order(q);
  VectorXd scores(p.cols());
  for (Index m = 0; m < p.cols(); ++m) {
    VectorXd sorted = p.col(m);
    std::sort(sorted.data(), sorted.data() + sorted.size(), std::greater<>());
    double sq = 0.0;
    for (Index i = 0; i < p.rows(); ++i) {
      const double d = p(order[static_cast<std::size_t>(i)], m) - sorted(i);
      sq += d * d;
    }
    scores(m) = -std::sqrt(sq);
  }
  return scores;
}

VectorXd similarity_wpmi(const VectorXd& q, const MatrixXd& p, Index top_k, double lambda) {
  check_lengths(q, p);
  if (top_k < 1 || top_k > p.rows()) {
    throw ParameterError("WPMI top-K must lie in [1, " + std::to_string(p.rows()) + "], got " + std::to_string(top_k));
  }
  const MatrixXd log_probs = concept_log_probs(p);
  return wpmi_scores(q, log_probs, mean_log_prob(log_probs), top_k, lambda);
}

VectorXd similarity_softwpmi(const VectorXd& q, const MatrixXd& p, double lambda, double temperature) {
  check_lengths(q, p);
  const MatrixXd log_probs = concept_log_probs(p);
  return softwpmi_scores(q, log_probs, mean_log_prob(log_probs), lambda, temperature);
}

SimilarityFunction::SimilarityFunction(SimilarityKind kind, MatrixXd p, SimilarityParams params)
    : kind_(kind), p_(std::move(p)), params_(params) {
  if (p_.rows() < 1 || p_.cols() < 1) throw DimensionError("concept matrix is empty");
  if (kind_ == SimilarityKind::wpmi || kind_ == SimilarityKind::softwpmi) {
    log_probs_ = concept_log_probs(p_);
    log_mean_ = mean_log_prob(log_probs_);
  }
  if (kind_ == SimilarityKind::wpmi) {
    top_k_ = params_.top_k.value_or(default_top_k(p_.rows()));
    if (top_k_ < 1 || top_k_ > p_.rows()) {
      throw ParameterError("WPMI top-K must lie in [1, " + std::to_string(p_.rows()) + "], got " +
                           std::to_string(top_k_));
    }
  }
  if (kind_ == SimilarityKind::softwpmi && !(params_.temperature > 0.0)) {
    throw ParameterError("SoftWPMI temperature must be positive");
  }
}

VectorXd SimilarityFunction::operator()(const VectorXd& q) const {
  switch (kind_) {
    case SimilarityKind::cos: return similarity_cos(q, p_);
    case SimilarityKind::cos3: return similarity_cos_cubed(q, p_);
    case SimilarityKind::rank: return similarity_rank_reorder(q, p_);
    case SimilarityKind::wpmi:
      check_lengths(q, p_);
      return wpmi_scores(q, log_probs_, log_mean_, top_k_, params_.lambda);
    case SimilarityKind::softwpmi:
      check_lengths(q, p_);
      return softwpmi_scores(q, log_probs_, log_mean_, params_.lambda, params_.temperature);
  }
  return {};
}

}  // namespace lwta
