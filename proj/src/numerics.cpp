#include "catid/numerics.hpp"

#include <cmath>

namespace catid {

Vec softmax(const Vec& v) {
    const double mx = v.maxCoeff();
    Vec e = (v.array() - mx).exp();
    return e / e.sum();
}

double cosine_sim(const Vec& a, const Vec& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw NumericError("cosine_sim: zero-norm input");
    }
    const double c = a.dot(b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

Vec cosine_grad_a(const Vec& a, const Vec& b) {
    const double na = a.norm();
    const double nb = b.norm();
    const double c = a.dot(b) / (na * nb);
    return b / (na * nb) - (c / (na * na)) * a;
}

MlpParams MlpParams::random(const std::vector<int>& sizes, Rng& rng, double scale) {
    MlpParams p;
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        Mat w(sizes[i + 1], sizes[i]);
        for (Eigen::Index k = 0; k < w.size(); ++k) {
            w.data()[k] = scale * dist(rng);
        }
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(Vec::Zero(sizes[i + 1]));
    }
    return p;
}

MlpParams MlpParams::zeros(const std::vector<int>& sizes) {
    MlpParams p;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        p.weights.emplace_back(Mat::Zero(sizes[i + 1], sizes[i]));
        p.biases.emplace_back(Vec::Zero(sizes[i + 1]));
    }
    return p;
}

bool MlpParams::all_finite() const {
    for (const auto& w : weights) {
        if (!w.allFinite()) return false;
    }
    for (const auto& b : biases) {
        if (!b.allFinite()) return false;
    }
    return true;
}

Mat mlp_forward(const MlpParams& params, const Mat& x, Tape* tape) {
    if (x.rows() != params.input_dim()) {
        throw DimensionError("mlp_forward: input dim " + std::to_string(x.rows()) +
                             " != " + std::to_string(params.input_dim()));
    }
    if (tape) {
        tape->input = x;
        tape->pre.clear();
    }
    Mat h = x;
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
        Mat pre = (params.weights[i] * h).colwise() + params.biases[i];
        if (tape) tape->pre.push_back(pre);
        if (i + 1 < params.weights.size()) {
            h = pre.cwiseMax(0.0);
        } else {
            h = std::move(pre);
        }
    }
    return h;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& p) {
    MlpGrads g;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        g.dW.emplace_back(Mat::Zero(p.weights[i].rows(), p.weights[i].cols()));
        g.db.emplace_back(Vec::Zero(p.biases[i].size()));
    }
    return g;
}

void MlpGrads::accumulate(const MlpGrads& other, double scale) {
    for (std::size_t i = 0; i < dW.size(); ++i) {
        dW[i] += scale * other.dW[i];
        db[i] += scale * other.db[i];
    }
}

MlpGrads mlp_backward(const MlpParams& params, const Tape& tape, const Mat& grad_y,
                      Mat* grad_x) {
    const std::size_t n = params.weights.size();
    if (grad_y.rows() != params.output_dim() || tape.pre.size() != n) {
        throw DimensionError("mlp_backward: shape mismatch");
    }
    MlpGrads g = MlpGrads::zeros_like(params);
    Mat delta = grad_y;
    for (std::size_t i = n; i-- > 0;) {
        if (i + 1 < n) {
            // rectifier mask of layer i
            delta = delta.cwiseProduct((tape.pre[i].array() > 0.0).cast<double>().matrix());
        }
        const Mat& act_in = (i == 0) ? tape.input : Mat(tape.pre[i - 1].cwiseMax(0.0));
        g.dW[i] = delta * act_in.transpose();
        g.db[i] = delta.rowwise().sum();
        if (i > 0 || grad_x) {
            Mat prev = params.weights[i].transpose() * delta;
            if (i == 0) {
                *grad_x = std::move(prev);
            } else {
                delta = std::move(prev);
            }
        }
    }
    return g;
}

void adamw_step(std::vector<TensorRef> params, const std::vector<Eigen::ArrayXd>& grads,
                OptimState& state) {
    if (params.size() != grads.size()) {
        throw DimensionError("adamw_step: tensor count mismatch");
    }
    if (state.m.empty()) {
        for (const auto& t : params) {
            state.m.emplace_back(Eigen::ArrayXd::Zero(t.size));
            state.v.emplace_back(Eigen::ArrayXd::Zero(t.size));
        }
    }
    if (state.m.size() != params.size()) {
        throw DimensionError("adamw_step: state slot count mismatch");
    }
    state.step_count += 1;
    const auto& c = state.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size != grads[i].size()) {
            throw DimensionError("adamw_step: shape mismatch in slot " + std::to_string(i));
        }
        Eigen::Map<Eigen::ArrayXd> p(params[i].data, params[i].size);
        const Eigen::ArrayXd& g = grads[i];
        p -= c.lr * c.weight_decay * p;  // decoupled decay, not in moments
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g.square();
        p -= c.lr * (state.m[i] / bc1) / ((state.v[i] / bc2).sqrt() + c.eps);
    }
}

std::vector<TensorRef> mlp_tensor_refs(MlpParams& p) {
    std::vector<TensorRef> refs;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        refs.emplace_back(p.weights[i]);
        refs.emplace_back(p.biases[i]);
    }
    return refs;
}

std::vector<Eigen::ArrayXd> mlp_grad_arrays(const MlpGrads& g) {
    std::vector<Eigen::ArrayXd> out;
    for (std::size_t i = 0; i < g.dW.size(); ++i) {
        out.emplace_back(Eigen::Map<const Eigen::ArrayXd>(g.dW[i].data(), g.dW[i].size()));
        out.emplace_back(Eigen::Map<const Eigen::ArrayXd>(g.db[i].data(), g.db[i].size()));
    }
    return out;
}

}  // namespace catid
