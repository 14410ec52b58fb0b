#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "seekr/losses.hpp"
#include "seekr/model.hpp"
#include "seekr/replay.hpp"
#include "seekr/tasks.hpp"

namespace seekr::check {

inline TransformerConfig tiny_config() {
  TransformerConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.d_k = 16;
  c.d_ff = 64;
  c.max_seq_len = 16;
  return c;
}

// A student/teacher pair plus a mixed batch exercising every loss term.
struct GradFixture {
  ModelState student;
  ModelState teacher;
  std::vector<Sample> current;
  ReplayBuffer buffer;
  Batch batch;
  std::vector<Tokens> sequences;
  HeadSet heads;
  LossWeights weights{0.5, 1.0};
  ObjectiveTerms terms{true, true, true};

  explicit GradFixture(std::uint64_t seed, double init_std = 0.1) {
    const TransformerConfig cfg = tiny_config();
    student = ModelState::initialize(cfg, seed, init_std);
    teacher = ModelState::initialize(cfg, seed + 1000, init_std);
    GeneratorOptions gopt{3, 5};
    current = generate_task(TaskKind::copy, seed, 2, 1, gopt).train;
    const auto old = generate_task(TaskKind::sort, seed + 7, 2, 1, gopt).train;
    CaptureOptions copt;
    copt.query_budget = 4;
    buffer.add_task(capture_signals(teacher, old, 0, copt, seed));
    for (const auto& s : current) batch.push_back({&s, nullptr, 1});
    for (const auto* e : buffer.entries()) batch.push_back({&e->sample, e, 0});
    for (const auto& item : batch) sequences.push_back(item.sample->sequence());
    heads = all_heads(cfg);
  }

  double loss(const ModelState& m, const ForwardOptions& base = {}) const {
    ForwardOptions opt = base;
    opt.record_backward = false;
    BatchForward fwd = forward_batch(m, sequences, opt);
    return batch_objective(fwd, batch, terms, weights, heads).total->value()[0];
  }
};

inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckReport {
  std::size_t checked = 0;
  double max_error = 0.0;
  std::string worst;
};

// Central differences over every parameter entry.
inline GradCheckReport check_parameter_gradients(const GradFixture& fx, double step = 1e-5) {
  ModelState m = fx.student;
  BatchForward fwd = forward_batch(m, fx.sequences);
  auto obj = batch_objective(fwd, fx.batch, fx.terms, fx.weights, fx.heads);
  fwd.tape->backward(*obj.total);
  const Gradients grads = fwd.parameter_gradients();

  GradCheckReport rep;
  std::size_t p = 0;
  m.for_each_parameter([&](const std::string& name, Tensor& t) {
    const Tensor& g = grads[p++];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = fx.loss(m);
      t[i] = saved - step;
      const double down = fx.loss(m);
      t[i] = saved;
      const double err = relative_error(g[i], (up - down) / (2.0 * step));
      ++rep.checked;
      if (err > rep.max_error) {
        rep.max_error = err;
        rep.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  });
  return rep;
}

// Central differences on every attention entry, perturbed through grafting.
inline GradCheckReport check_attention_gradients(const GradFixture& fx, double step = 1e-5) {
  ForwardOptions capture;
  capture.capture_attention = true;
  BatchForward fwd = forward_batch(fx.student, fx.sequences, capture);
  auto obj = batch_objective(fwd, fx.batch, fx.terms, fx.weights, fx.heads);
  fwd.tape->backward(*obj.total);

  GradCheckReport rep;
  const auto& cfg = fx.student.config;
  for (std::size_t s = 0; s < fx.sequences.size(); ++s) {
    const AttentionRecord base = fwd.attention(s);
    const AttentionRecord grad = fwd.attention_gradients(s);
    const std::size_t T = base.seq_len;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        ForwardOptions opt;
        opt.injected.assign(fx.sequences.size(), nullptr);
        opt.graft_heads = {{l, h}};
        AttentionRecord rec = base;
        opt.injected[s] = &rec;
        for (std::size_t i = 0; i < T; ++i) {
          for (std::size_t j = 0; j < T; ++j) {
            double& slot = rec.layers[l].at(h, i, j);
            const double saved = slot;
            slot = saved + step;
            const double up = fx.loss(fx.student, opt);
            slot = saved - step;
            const double down = fx.loss(fx.student, opt);
            slot = saved;
            const double err = relative_error(grad.layers[l].at(h, i, j), (up - down) / (2.0 * step));
            ++rep.checked;
            if (err > rep.max_error) {
              rep.max_error = err;
              rep.worst = "seq" + std::to_string(s) + " l" + std::to_string(l) + "h" + std::to_string(h) + " (" +
                          std::to_string(i) + "," + std::to_string(j) + ")";
            }
          }
        }
      }
    }
  }
  return rep;
}

}  // namespace seekr::check
