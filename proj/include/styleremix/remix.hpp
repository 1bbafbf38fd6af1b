#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "styleremix/model.hpp"
#include "styleremix/tensor.hpp"

namespace styleremix {

/// alpha * a + (1 - alpha) * b, alpha in [0,1].
Tensor<float> convex_combination(const Tensor<float>& a, const Tensor<float>& b, double alpha);

/// v = w + eps, eps ~ N(mu, sigma^2) per entry, then v / sum(v). A draw whose
/// sum is within 1e-6 of zero is redrawn, at most 5 draws in total.
Tensor<float> perturb_weights(const Tensor<float>& w, double mu, double sigma, std::uint64_t seed);

enum class CstMode { average, uniform };
CstMode parse_cst_mode(const std::string& s);

/// average: mean of the registry's simplex weights; uniform: 1/c everywhere.
Tensor<float> cst_weights(const StyleRegistry<float>& registry, CstMode mode, std::size_t c);

/// Block-uniform simplex point: c/m entries of m/c in block j, zero elsewhere.
Tensor<float> stylebank_onehot_weights(std::size_t j, std::size_t m, std::size_t c);

/// Rows are the softmaxed weights of every registered style, in order.
Eigen::MatrixXd style_weight_matrix(const StyleRegistry<float>& registry);

/// Pearson correlation between rows. Throws naming the row when one is constant.
Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& rows, const std::vector<std::string>& names);

struct PcaResult {
    Eigen::MatrixXd scores;      // N x k
    Eigen::MatrixXd components;  // k x d, orthonormal rows
    Eigen::VectorXd mean;        // d
    Eigen::VectorXd eigenvalues; // all min(N-1... d) covariance eigenvalues, descending
};

/// Principal components of the rows of `data`; covariance normalised by N - 1.
PcaResult pca_reduce(const Eigen::MatrixXd& data, std::size_t k);

struct TsneOptions {
    double perplexity = 5.0;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    std::size_t exaggeration_iters = 100;
    double exaggeration = 4.0;
    std::size_t momentum_switch = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    std::uint64_t seed = 0;
};

struct TsneResult {
    Eigen::MatrixXd coords;  // N x 2
    double initial_kl = 0;
    double final_kl = 0;
    /// Points whose bandwidth search failed and fell back to the minimum beta.
    std::vector<std::size_t> fallback_points;
};

/// Exact O(N^2) t-SNE.
TsneResult tsne_embed(const Eigen::MatrixXd& data, const TsneOptions& opts);

/// Row i of the conditional affinities P(j|i) with bandwidth found by
/// bisection on beta so the entropy matches log(perplexity) within 1e-4.
/// Returns false when the search did not converge.
bool conditional_affinities(const Eigen::VectorXd& sq_dists, std::size_t self, double perplexity,
                            Eigen::VectorXd& row, double& beta);

struct ConvCost {
    std::string name;
    std::size_t c_in, c_out, k, h_out, w_out;
    std::uint64_t macs;
};

struct FlopsReport {
    std::vector<ConvCost> layers;
    std::uint64_t macs = 0;
    std::uint64_t flops() const { return 2 * macs; }
};

std::uint64_t conv_macs(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw, std::size_t h_out,
                        std::size_t w_out);
/// Every convolution of the stylizing branch (encoder, basis, decoder) for one
/// image of size height x width.
FlopsReport flops_count(const ModelConfig& config, std::size_t height, std::size_t width);

/// Scatter plot of 2-D coordinates, one coloured disc per point.
void render_scatter(const Eigen::MatrixXd& coords, const std::filesystem::path& file, std::size_t size = 512);
/// Heatmap of a matrix with values in [-1,1] (blue..white..red), `cell` px per entry.
void render_heatmap(const Eigen::MatrixXd& matrix, const std::filesystem::path& file, std::size_t cell = 24);

}  // namespace styleremix
