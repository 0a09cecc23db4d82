#include "featviz/reconstruct.hpp"

#include <cmath>

#include "featviz/rng.hpp"

namespace featviz {

std::pair<double, Tensor> lp_penalty(const Tensor& x, float p) {
  if (!(p >= 1.0f)) throw ConfigError("lp_penalty: p must be >= 1");
  double value = 0.0;
  Tensor grad(x.shape());
  const double pd = static_cast<double>(p);
  for (index_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    const double mag = std::abs(v);
    value += std::pow(mag, pd);
    if (v == 0.0) {
      grad[i] = 0.0f;  // subgradient choice at the kink (exact for p > 1)
    } else {
      grad[i] = static_cast<float>(pd * std::pow(mag, pd - 1.0) * (v > 0.0 ? 1.0 : -1.0));
    }
  }
  return {value, std::move(grad)};
}

std::pair<double, Tensor> tv_penalty(const Tensor& x) {
  constexpr double kDelta = 1e-8;
  const Shape4 s = x.shape();
  if (s.h < 1 || s.w < 1) throw ShapeError("tv_penalty: empty spatial plane");

  double value = 0.0;
  std::vector<double> grad(static_cast<std::size_t>(x.size()), 0.0);
  for (index_t n = 0; n < s.n; ++n) {
    for (index_t c = 0; c < s.c; ++c) {
      for (index_t y = 0; y < s.h; ++y) {
        for (index_t xx = 0; xx < s.w; ++xx) {
          const double here = x(n, c, y, xx);
          const double dy = (y + 1 < s.h) ? static_cast<double>(x(n, c, y + 1, xx)) - here : 0.0;
          const double dx = (xx + 1 < s.w) ? static_cast<double>(x(n, c, y, xx + 1)) - here : 0.0;
          const double m = std::sqrt(dy * dy + dx * dx + kDelta * kDelta);
          value += m;
          const std::size_t base = static_cast<std::size_t>(x.offset(n, c, y, xx));
          grad[base] -= (dy + dx) / m;
          if (y + 1 < s.h) grad[static_cast<std::size_t>(x.offset(n, c, y + 1, xx))] += dy / m;
          if (xx + 1 < s.w) grad[static_cast<std::size_t>(x.offset(n, c, y, xx + 1))] += dx / m;
        }
      }
    }
  }
  Tensor g(s);
  for (index_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(grad[static_cast<std::size_t>(i)]);
  return {value, std::move(g)};
}

namespace {

Tensor make_init(const InitSpec& init, Shape4 shape) {
  if (std::holds_alternative<ZeroInit>(init)) return Tensor(shape);
  if (const auto* constant = std::get_if<ConstantInit>(&init)) return Tensor(shape, constant->value);
  const auto& random = std::get<RandomUniformInit>(init);
  if (!(random.low < random.high)) throw ConfigError("reconstruct: random init needs low < high");
  Tensor t(shape);
  std::mt19937_64 eng(mix64(random.seed));
  for (index_t i = 0; i < t.size(); ++i) t[i] = uniform_float(eng, random.low, random.high);
  return t;
}

struct Evaluation {
  double objective = 0.0;  // before regularizers
  index_t seed_layer = 0;
  Tensor seed;             // gradient of the objective w.r.t. that layer's output
};

Evaluation evaluate_objective(const Network& net, const ForwardTape& tape,
                              const Objective& objective) {
  Evaluation ev;
  if (const auto* max_unit = std::get_if<MaximizeUnit>(&objective)) {
    // Reuse the attribution target machinery: seed 1 at the unit.
    ev.objective = target_activation(net, tape, max_unit->target);
    if (const auto* cls = std::get_if<ClassUnit>(&max_unit->target)) {
      index_t layer = static_cast<index_t>(net.layers.size()) - 1;
      if (std::holds_alternative<SoftmaxLayer>(net.layers.back())) --layer;
      ev.seed_layer = layer;
      const Tensor& out = tape.entries[static_cast<std::size_t>(layer)].output;
      ev.seed = Tensor(out.shape());
      ev.seed[cls->class_index] = 1.0f;
    } else {
      const auto& unit = std::get<InternalUnit>(max_unit->target);
      ev.seed_layer = unit.layer;
      const Tensor& out = tape.entries[static_cast<std::size_t>(unit.layer)].output;
      ev.seed = Tensor(out.shape());
      ev.seed[out.offset(0, unit.channel, unit.y, unit.x)] = 1.0f;
    }
    return ev;
  }

  const auto& match = std::get<MatchRepresentation>(objective);
  if (match.layer < 0 || match.layer >= static_cast<index_t>(net.layers.size())) {
    throw ConfigError("reconstruct: representation layer " + std::to_string(match.layer) +
                      " out of range");
  }
  if (std::holds_alternative<SoftmaxLayer>(net.layers[static_cast<std::size_t>(match.layer)])) {
    throw ConfigError("reconstruct: cannot match the softmax layer; use the logits layer below it");
  }
  const Tensor& phi = tape.entries[static_cast<std::size_t>(match.layer)].output;
  if (phi.shape() != match.reference.shape()) {
    throw ShapeError("reconstruct: reference shape " + to_string(match.reference.shape()) +
                     " does not match layer output " + to_string(phi.shape()));
  }
  ev.seed_layer = match.layer;
  ev.seed = Tensor(phi.shape());
  double sq = 0.0;
  for (index_t i = 0; i < phi.size(); ++i) {
    const double diff = static_cast<double>(phi[i]) - static_cast<double>(match.reference[i]);
    sq += diff * diff;
    ev.seed[i] = match.reference[i] - phi[i];
  }
  ev.objective = -0.5 * sq;
  return ev;
}

}  // namespace

ReconstructionResult reconstruct(const Network& net, const Objective& objective,
                                 const RegConfig& reg, const OptConfig& opt) {
  if (opt.steps < 0) throw ConfigError("reconstruct: steps must be >= 0");
  if (!(opt.step_size > 0.0f)) throw ConfigError("reconstruct: step_size must be > 0");
  if (reg.lambda_p < 0.0f || reg.lambda_tv < 0.0f) {
    throw ConfigError("reconstruct: regularizer weights must be >= 0");
  }
  if (!(reg.p >= 1.0f)) throw ConfigError("reconstruct: p must be >= 1");
  if (opt.record_every < 0) throw ConfigError("reconstruct: record_every must be >= 0");
  validate(net);

  const Shape4 shape{1, net.input.c, net.input.h, net.input.w};
  Tensor x = make_init(opt.init, shape);

  ReconstructionResult result;
  result.loss_history.reserve(static_cast<std::size_t>(opt.steps) + 1);

  for (index_t step = 0;; ++step) {
    const ForwardTape tape = forward(net, x);
    Evaluation ev = evaluate_objective(net, tape, objective);

    double total = ev.objective;
    Tensor lp_grad, tv_grad;
    if (reg.lambda_p > 0.0f) {
      auto [value, grad] = lp_penalty(x, reg.p);
      total -= static_cast<double>(reg.lambda_p) * value;
      lp_grad = std::move(grad);
    }
    if (reg.lambda_tv > 0.0f) {
      auto [value, grad] = tv_penalty(x);
      total -= static_cast<double>(reg.lambda_tv) * value;
      tv_grad = std::move(grad);
    }
    if (!std::isfinite(total)) {
      throw NumericError("reconstruct: objective became non-finite at step " +
                         std::to_string(step));
    }
    result.loss_history.push_back(total);
    if (step == opt.steps) break;

    Tensor ascent = propagate_back(net, tape, ev.seed_layer, std::move(ev.seed),
                                   ReluRule::Backprop, ConvRule::gradient());
    for (index_t i = 0; i < x.size(); ++i) {
      float g = ascent[i];
      if (!lp_grad.empty()) g -= reg.lambda_p * lp_grad[i];
      if (!tv_grad.empty()) g -= reg.lambda_tv * tv_grad[i];
      x[i] += opt.step_size * g;
    }
    if (!x.all_finite()) {
      throw NumericError("reconstruct: iterate became non-finite at step " + std::to_string(step));
    }
    if (opt.record_every > 0 && (step + 1) % opt.record_every == 0 && step + 1 != opt.steps) {
      result.trajectory.emplace_back(step + 1, x);
    }
  }

  result.trajectory.emplace_back(opt.steps, x);
  result.final = std::move(x);
  return result;
}

}  // namespace featviz
