#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "utal/errors.hpp"
#include "utal/rng.hpp"
#include "utal/vec.hpp"

namespace utal {

enum class Activation { Tanh, Identity };

inline std::string to_string(Activation a) {
    return a == Activation::Tanh ? "tanh" : "identity";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity") return Activation::Identity;
    throw ConfigError("unknown activation: " + s);
}

struct ModelConfig {
    int raw_dim = 32;
    int hidden_dim = 64;
    int embed_dim = 32;
    Activation activation = Activation::Tanh;
};

/// Camera-shared representation: raw_dim -> hidden_dim -> embed_dim with an
/// element-wise nonlinearity on the hidden layer, plus one linear classifier
/// head per camera. heads[t] stores the class weight vectors as rows, so
/// logits(e, t) = heads[t] * e.
struct EmbeddingModel {
    ModelConfig cfg;
    Matrix w1; // hidden_dim x raw_dim
    Vec b1;    // hidden_dim
    Matrix w2; // embed_dim x hidden_dim
    Vec b2;    // embed_dim
    std::vector<Matrix> heads; // per camera: M_t x embed_dim

    int num_cameras() const { return static_cast<int>(heads.size()); }
    int num_classes(int camera) const { return heads[static_cast<std::size_t>(camera)].rows; }

    double activate(double x) const {
        return cfg.activation == Activation::Tanh ? std::tanh(x) : x;
    }
    double activate_grad(double pre) const {
        if (cfg.activation == Activation::Identity) return 1.0;
        const double th = std::tanh(pre);
        return 1.0 - th * th;
    }

    Vec hidden_pre(const Vec& x) const {
        if (static_cast<int>(x.size()) != cfg.raw_dim)
            throw ShapeError("forward: input size " + std::to_string(x.size()) +
                             " != raw_dim " + std::to_string(cfg.raw_dim));
        Vec h(static_cast<std::size_t>(cfg.hidden_dim));
        for (int r = 0; r < cfg.hidden_dim; ++r) {
            const double* row = w1.row(r);
            double s = b1[static_cast<std::size_t>(r)];
            for (int c = 0; c < cfg.raw_dim; ++c) s += row[c] * x[static_cast<std::size_t>(c)];
            h[static_cast<std::size_t>(r)] = s;
        }
        return h;
    }

    Vec forward(const Vec& x) const {
        Vec h = hidden_pre(x);
        for (auto& v : h) v = activate(v);
        Vec e(static_cast<std::size_t>(cfg.embed_dim));
        for (int r = 0; r < cfg.embed_dim; ++r) {
            const double* row = w2.row(r);
            double s = b2[static_cast<std::size_t>(r)];
            for (int c = 0; c < cfg.hidden_dim; ++c) s += row[c] * h[static_cast<std::size_t>(c)];
            e[static_cast<std::size_t>(r)] = s;
        }
        return e;
    }

    Vec logits(const Vec& embedding, int camera) const {
        if (camera < 0 || camera >= num_cameras())
            throw std::out_of_range("logits: unknown camera " + std::to_string(camera));
        const Matrix& head = heads[static_cast<std::size_t>(camera)];
        if (static_cast<int>(embedding.size()) != head.cols)
            throw ShapeError("logits: embedding size mismatch");
        Vec out(static_cast<std::size_t>(head.rows));
        for (int r = 0; r < head.rows; ++r) {
            const double* row = head.row(r);
            double s = 0.0;
            for (int c = 0; c < head.cols; ++c) s += row[c] * embedding[static_cast<std::size_t>(c)];
            out[static_cast<std::size_t>(r)] = s;
        }
        return out;
    }
};

/// Gradient (or moment) storage with the same shapes as the parameters.
struct ParamTensors {
    Matrix w1;
    Vec b1;
    Matrix w2;
    Vec b2;
    std::vector<Matrix> heads;

    static ParamTensors zeros_like(const EmbeddingModel& m) {
        ParamTensors g;
        g.w1 = Matrix(m.w1.rows, m.w1.cols);
        g.b1.assign(m.b1.size(), 0.0);
        g.w2 = Matrix(m.w2.rows, m.w2.cols);
        g.b2.assign(m.b2.size(), 0.0);
        g.heads.reserve(m.heads.size());
        for (const auto& h : m.heads) g.heads.emplace_back(h.rows, h.cols);
        return g;
    }
};

using Gradients = ParamTensors;

/// Upstream gradients for one batch sample: d(loss)/d(logits) for the
/// sample's camera head (may be empty) and d(loss)/d(embedding) from losses
/// acting directly on the shared space (may be empty).
struct SampleGrad {
    int camera = 0;
    Vec logit_grad;
    Vec embed_grad;
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
inline EmbeddingModel init_model(const ModelConfig& cfg, const std::vector<int>& classes_per_camera,
                                 rng::Engine& eng) {
    if (cfg.raw_dim < 1 || cfg.hidden_dim < 1 || cfg.embed_dim < 1)
        throw ConfigError("model config: dimensions must be positive");
    EmbeddingModel m;
    m.cfg = cfg;
    auto init_matrix = [&eng](Matrix& w, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w.data) v = rng::uniform(eng, -bound, bound);
    };
    m.w1 = Matrix(cfg.hidden_dim, cfg.raw_dim);
    init_matrix(m.w1, cfg.raw_dim);
    m.b1.assign(static_cast<std::size_t>(cfg.hidden_dim), 0.0);
    m.w2 = Matrix(cfg.embed_dim, cfg.hidden_dim);
    init_matrix(m.w2, cfg.hidden_dim);
    m.b2.assign(static_cast<std::size_t>(cfg.embed_dim), 0.0);
    for (int classes : classes_per_camera) {
        if (classes < 1) throw ConfigError("model config: camera with no classes");
        Matrix head(classes, cfg.embed_dim);
        init_matrix(head, cfg.embed_dim);
        m.heads.push_back(std::move(head));
    }
    return m;
}

/// Exact analytic gradient of the batch loss w.r.t. every parameter, given
/// per-sample upstream gradients. Hidden activations are recomputed here.
inline Gradients backward(const EmbeddingModel& m, std::span<const Vec> inputs,
                          std::span<const SampleGrad> grads) {
    if (inputs.size() != grads.size()) throw ShapeError("backward: inputs/grads size mismatch");
    Gradients g = Gradients::zeros_like(m);
    const int d = m.cfg.embed_dim;
    const int hd = m.cfg.hidden_dim;

    for (std::size_t n = 0; n < inputs.size(); ++n) {
        const Vec& x = inputs[n];
        const SampleGrad& sg = grads[n];
        Vec hp = m.hidden_pre(x);
        Vec h(hp.size());
        for (std::size_t i = 0; i < hp.size(); ++i) h[i] = m.activate(hp[i]);
        Vec e(static_cast<std::size_t>(d));
        for (int r = 0; r < d; ++r) {
            const double* row = m.w2.row(r);
            double s = m.b2[static_cast<std::size_t>(r)];
            for (int c = 0; c < hd; ++c) s += row[c] * h[static_cast<std::size_t>(c)];
            e[static_cast<std::size_t>(r)] = s;
        }

        Vec de(static_cast<std::size_t>(d), 0.0);
        if (!sg.embed_grad.empty()) {
            if (static_cast<int>(sg.embed_grad.size()) != d)
                throw ShapeError("backward: embed_grad size mismatch");
            de = sg.embed_grad;
        }
        if (!sg.logit_grad.empty()) {
            if (sg.camera < 0 || sg.camera >= m.num_cameras())
                throw std::out_of_range("backward: unknown camera " + std::to_string(sg.camera));
            const Matrix& head = m.heads[static_cast<std::size_t>(sg.camera)];
            if (static_cast<int>(sg.logit_grad.size()) != head.rows)
                throw ShapeError("backward: logit_grad size mismatch");
            Matrix& dhead = g.heads[static_cast<std::size_t>(sg.camera)];
            for (int j = 0; j < head.rows; ++j) {
                const double gj = sg.logit_grad[static_cast<std::size_t>(j)];
                if (gj == 0.0) continue;
                double* drow = dhead.row(j);
                const double* wrow = head.row(j);
                for (int c = 0; c < d; ++c) {
                    drow[c] += gj * e[static_cast<std::size_t>(c)];
                    de[static_cast<std::size_t>(c)] += gj * wrow[c];
                }
            }
        }

        // Output layer.
        Vec dh(static_cast<std::size_t>(hd), 0.0);
        for (int r = 0; r < d; ++r) {
            const double der = de[static_cast<std::size_t>(r)];
            if (der == 0.0) continue;
            double* drow = g.w2.row(r);
            const double* wrow = m.w2.row(r);
            for (int c = 0; c < hd; ++c) {
                drow[c] += der * h[static_cast<std::size_t>(c)];
                dh[static_cast<std::size_t>(c)] += der * wrow[c];
            }
            g.b2[static_cast<std::size_t>(r)] += der;
        }
        // Hidden layer through the nonlinearity.
        for (int r = 0; r < hd; ++r) {
            const double dpre = dh[static_cast<std::size_t>(r)] * m.activate_grad(hp[static_cast<std::size_t>(r)]);
            if (dpre == 0.0) continue;
            double* drow = g.w1.row(r);
            for (int c = 0; c < m.cfg.raw_dim; ++c) drow[c] += dpre * x[static_cast<std::size_t>(c)];
            g.b1[static_cast<std::size_t>(r)] += dpre;
        }
    }
    return g;
}

inline nlohmann::json model_to_json(const EmbeddingModel& m) {
    nlohmann::json j;
    j["raw_dim"] = m.cfg.raw_dim;
    j["hidden_dim"] = m.cfg.hidden_dim;
    j["embed_dim"] = m.cfg.embed_dim;
    j["activation"] = to_string(m.cfg.activation);
    j["w1"] = m.w1.data;
    j["b1"] = m.b1;
    j["w2"] = m.w2.data;
    j["b2"] = m.b2;
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : m.heads) heads.push_back(h.data);
    j["heads"] = heads;
    return j;
}

inline EmbeddingModel model_from_json(const nlohmann::json& j) {
    EmbeddingModel m;
    m.cfg.raw_dim = j.at("raw_dim").get<int>();
    m.cfg.hidden_dim = j.at("hidden_dim").get<int>();
    m.cfg.embed_dim = j.at("embed_dim").get<int>();
    m.cfg.activation = activation_from_string(j.at("activation").get<std::string>());
    m.w1 = Matrix(m.cfg.hidden_dim, m.cfg.raw_dim);
    m.w1.data = j.at("w1").get<Vec>();
    m.b1 = j.at("b1").get<Vec>();
    m.w2 = Matrix(m.cfg.embed_dim, m.cfg.hidden_dim);
    m.w2.data = j.at("w2").get<Vec>();
    m.b2 = j.at("b2").get<Vec>();
    for (const auto& hj : j.at("heads")) {
        Vec data = hj.get<Vec>();
        if (data.size() % static_cast<std::size_t>(m.cfg.embed_dim) != 0)
            throw IoError("checkpoint: head tensor size not divisible by embed_dim");
        Matrix head(static_cast<int>(data.size()) / m.cfg.embed_dim, m.cfg.embed_dim);
        head.data = std::move(data);
        m.heads.push_back(std::move(head));
    }
    if (m.w1.data.size() != static_cast<std::size_t>(m.cfg.hidden_dim) * m.cfg.raw_dim ||
        m.w2.data.size() != static_cast<std::size_t>(m.cfg.embed_dim) * m.cfg.hidden_dim ||
        m.b1.size() != static_cast<std::size_t>(m.cfg.hidden_dim) ||
        m.b2.size() != static_cast<std::size_t>(m.cfg.embed_dim))
        throw IoError("checkpoint: tensor shape mismatch");
    return m;
}

} // namespace utal
