#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "utal/errors.hpp"
#include "utal/model.hpp"

namespace utal {

/// Adam with bias correction. Moments mirror the parameter shapes.
struct AdamState {
    double learning_rate = 3.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    ParamTensors m;
    ParamTensors v;

    static AdamState create(const EmbeddingModel& model, double learning_rate) {
        AdamState s;
        s.learning_rate = learning_rate;
        s.m = ParamTensors::zeros_like(model);
        s.v = ParamTensors::zeros_like(model);
        return s;
    }
};

namespace detail {

inline void adam_update_block(Vec& param, Vec& m, Vec& v, const Vec& grad, const AdamState& s,
                              double bc1, double bc2, const std::string& block) {
    if (param.size() != grad.size()) throw ShapeError("adam_step: gradient shape mismatch in " + block);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + block);
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

} // namespace detail

/// One bias-corrected update applied in place; increments the step counter.
inline void adam_step(EmbeddingModel& model, AdamState& state, const Gradients& grads) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    detail::adam_update_block(model.w1.data, state.m.w1.data, state.v.w1.data, grads.w1.data, state, bc1, bc2, "w1");
    detail::adam_update_block(model.b1, state.m.b1, state.v.b1, grads.b1, state, bc1, bc2, "b1");
    detail::adam_update_block(model.w2.data, state.m.w2.data, state.v.w2.data, grads.w2.data, state, bc1, bc2, "w2");
    detail::adam_update_block(model.b2, state.m.b2, state.v.b2, grads.b2, state, bc1, bc2, "b2");
    if (grads.heads.size() != model.heads.size())
        throw ShapeError("adam_step: head count mismatch");
    for (std::size_t t = 0; t < model.heads.size(); ++t)
        detail::adam_update_block(model.heads[t].data, state.m.heads[t].data, state.v.heads[t].data,
                                  grads.heads[t].data, state, bc1, bc2, "heads[" + std::to_string(t) + "]");
}

inline nlohmann::json adam_to_json(const AdamState& s) {
    auto tensors = [](const ParamTensors& p) {
        nlohmann::json j;
        j["w1"] = p.w1.data;
        j["b1"] = p.b1;
        j["w2"] = p.w2.data;
        j["b2"] = p.b2;
        nlohmann::json heads = nlohmann::json::array();
        for (const auto& h : p.heads) heads.push_back(h.data);
        j["heads"] = heads;
        return j;
    };
    nlohmann::json j;
    j["learning_rate"] = s.learning_rate;
    j["beta1"] = s.beta1;
    j["beta2"] = s.beta2;
    j["epsilon"] = s.epsilon;
    j["step"] = s.step;
    j["m"] = tensors(s.m);
    j["v"] = tensors(s.v);
    return j;
}

inline AdamState adam_from_json(const nlohmann::json& j, const EmbeddingModel& model) {
    AdamState s = AdamState::create(model, j.at("learning_rate").get<double>());
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    s.step = j.at("step").get<std::int64_t>();
    auto load = [](ParamTensors& p, const nlohmann::json& tj) {
        p.w1.data = tj.at("w1").get<Vec>();
        p.b1 = tj.at("b1").get<Vec>();
        p.w2.data = tj.at("w2").get<Vec>();
        p.b2 = tj.at("b2").get<Vec>();
        const auto& heads = tj.at("heads");
        if (heads.size() != p.heads.size()) throw IoError("checkpoint: optimizer head count mismatch");
        for (std::size_t t = 0; t < p.heads.size(); ++t) p.heads[t].data = heads[t].get<Vec>();
    };
    load(s.m, j.at("m"));
    load(s.v, j.at("v"));
    return s;
}

} // namespace utal
