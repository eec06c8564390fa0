#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "catid/errors.hpp"

namespace catid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Numerically stable softmax (max-subtraction).
Vec softmax(const Vec& v);

/// Cosine similarity clamped to [-1, 1]. Throws NumericError on zero-norm input.
double cosine_sim(const Vec& a, const Vec& b);

/// d cos(a, b) / d a. Assumes nonzero norms.
Vec cosine_grad_a(const Vec& a, const Vec& b);

// Fully-connected net, rectifier on hidden layers, linear output.
struct MlpParams {
    std::vector<Mat> weights;  // layer i: out_dim x in_dim
    std::vector<Vec> biases;

    int input_dim() const { return static_cast<int>(weights.front().cols()); }
    int output_dim() const { return static_cast<int>(weights.back().rows()); }
    std::size_t layer_count() const { return weights.size(); }

    static MlpParams random(const std::vector<int>& sizes, Rng& rng, double scale = 0.1);
    static MlpParams zeros(const std::vector<int>& sizes);
    bool all_finite() const;
};

// Forward activations cached for the backward pass. Columns are batch samples.
struct Tape {
    Mat input;
    std::vector<Mat> pre;  // pre-activation per layer
};

/// x: in_dim x batch. Returns out_dim x batch.
Mat mlp_forward(const MlpParams& params, const Mat& x, Tape* tape = nullptr);

struct MlpGrads {
    std::vector<Mat> dW;
    std::vector<Vec> db;

    static MlpGrads zeros_like(const MlpParams& p);
    void accumulate(const MlpGrads& other, double scale = 1.0);
};

/// grad_y: out_dim x batch, from the matching forward tape.
/// Optionally returns grad wrt the input batch.
MlpGrads mlp_backward(const MlpParams& params, const Tape& tape, const Mat& grad_y,
                      Mat* grad_x = nullptr);

struct OptimConfig {
    double lr = 1e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// AdamW with decoupled weight decay. Moment slots are keyed by the order in
// which parameter tensors are passed to step(); that order must be stable.
struct OptimState {
    OptimConfig cfg;
    long step_count = 0;
    std::vector<Eigen::ArrayXd> m;
    std::vector<Eigen::ArrayXd> v;
};

struct TensorRef {
    double* data;
    Eigen::Index size;

    TensorRef(Mat& mat) : data(mat.data()), size(mat.size()) {}
    TensorRef(Vec& vec) : data(vec.data()), size(vec.size()) {}
    TensorRef(double* d, Eigen::Index n) : data(d), size(n) {}
};

void adamw_step(std::vector<TensorRef> params, const std::vector<Eigen::ArrayXd>& grads,
                OptimState& state);

/// Collects MLP parameters / gradients into the flat form adamw_step expects.
std::vector<TensorRef> mlp_tensor_refs(MlpParams& p);
std::vector<Eigen::ArrayXd> mlp_grad_arrays(const MlpGrads& g);

}  // namespace catid
