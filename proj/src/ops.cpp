#include "seekr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "seekr/error.hpp"

namespace seekr {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

ConstMapMatrix as_matrix(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
MapMatrix as_matrix(Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        dims_to_string(t.dims()));
  }
}

}  // namespace

Mask::Mask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> allowed)
    : rows_(rows), cols_(cols), allowed_(std::move(allowed)) {
  if (allowed_.size() != rows * cols) throw ContractError("mask size does not match rows x cols");
}

Mask Mask::causal(std::size_t n) {
  std::vector<std::uint8_t> allowed(n * n, 0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) allowed[r * n + c] = 1;
  return Mask(n, n, std::move(allowed));
}

double log_sum_exp(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double z : logits) m = std::max(m, z);
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  return m + std::log(s);
}

void softmax_row(std::span<const double> logits, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (double z : logits) m = std::max(m, z);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (auto& v : out) v /= s;
}

double clamped_kl(std::span<const double> p, std::span<const double> q, double floor) {
  if (p.size() != q.size()) throw ContractError("clamped_kl: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * (std::log(std::max(p[i], floor)) - std::log(std::max(q[i], floor)));
  }
  return kl;
}

namespace ops {

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  if (av.cols() != bv.rows()) {
    throw ContractError("matmul: inner dims disagree " + dims_to_string(av.dims()) + " x " +
                        dims_to_string(bv.dims()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t o) {
    const auto g = as_matrix(*t.output_grad(o));
    if (Tensor* ga = t.input_grad(a.id)) as_matrix(*ga).noalias() += g * as_matrix(t.value(b.id)).transpose();
    if (Tensor* gb = t.input_grad(b.id)) as_matrix(*gb).noalias() += as_matrix(t.value(a.id)).transpose() * g;
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.dims() != bv.dims()) {
    throw ContractError("add: " + dims_to_string(av.dims()) + " vs " + dims_to_string(bv.dims()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t o) {
    const Tensor& g = *t.output_grad(o);
    for (Var in : {a, b}) {
      if (Tensor* gi = t.input_grad(in.id))
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= c;
  return a.tape->record(std::move(out), {a}, [a, c](Tape& t, std::size_t o) {
    const Tensor& g = *t.output_grad(o);
    if (Tensor* ga = t.input_grad(a.id))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
  });
}

Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_rank(av, 2, "add_bias");
  if (bv.size() != av.cols()) throw ContractError("add_bias: bias length does not match columns");
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return a.tape->record(std::move(out), {a, bias}, [a, bias](Tape& t, std::size_t o) {
    const Tensor& g = *t.output_grad(o);
    if (Tensor* ga = t.input_grad(a.id))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.input_grad(bias.id)) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) (*gb)[c] += row[c];
      }
    }
  });
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(a.value().sum());
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t o) {
    const double g = (*t.output_grad(o))[0];
    if (Tensor* ga = t.input_grad(a.id))
      for (auto& v : ga->values()) v += g;
  });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.empty()) throw ContractError("weighted_sum: no terms");
  if (scalars.size() != weights.size()) throw ContractError("weighted_sum: weight count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw ContractError("weighted_sum: terms must be scalar");
    total += weights[i] * scalars[i].value()[0];
  }
  std::vector<Var> in(scalars.begin(), scalars.end());
  std::vector<double> w(weights.begin(), weights.end());
  return scalars[0].tape->record(Tensor::scalar(total), in, [in, w](Tape& t, std::size_t o) {
    const double g = (*t.output_grad(o))[0];
    for (std::size_t i = 0; i < in.size(); ++i)
      if (Tensor* gi = t.input_grad(in[i].id)) (*gi)[0] += w[i] * g;
  });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  require_rank(tv, 2, "embedding");
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) throw ContractError("embedding: index out of range");
    std::copy_n(tv.row(ids[i]).data(), d, out.row(i).data());
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table}, [table, idx = std::move(idx)](Tape& t, std::size_t o) {
    const Tensor& g = *t.output_grad(o);
    if (Tensor* gt = t.input_grad(table.id)) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto dst = gt->row(idx[i]);
        auto src = g.row(i);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "layer_norm");
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) throw ContractError("layer_norm: parameter size");
  Tensor out({n, d});
  Tensor normed({n, d});
  std::vector<double> inv_std(n);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normed.at(r, c) = (row[c] - mean) * inv_std[r];
      out.at(r, c) = normed.at(r, c) * gv[c] + bv[c];
    }
  }
  return x.tape->record(std::move(out), {x, gain, bias},
                        [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& t,
                                                                                                  std::size_t o) {
                          const Tensor& g = *t.output_grad(o);
                          const Tensor& gv = t.value(gain.id);
                          const std::size_t n = g.rows();
                          const std::size_t d = g.cols();
                          if (Tensor* gg = t.input_grad(gain.id))
                            for (std::size_t r = 0; r < n; ++r)
                              for (std::size_t c = 0; c < d; ++c) (*gg)[c] += g.at(r, c) * normed.at(r, c);
                          if (Tensor* gb = t.input_grad(bias.id))
                            for (std::size_t r = 0; r < n; ++r)
                              for (std::size_t c = 0; c < d; ++c) (*gb)[c] += g.at(r, c);
                          if (Tensor* gx = t.input_grad(x.id)) {
                            std::vector<double> dn(d);
                            for (std::size_t r = 0; r < n; ++r) {
                              double mean_dn = 0.0;
                              double mean_dn_x = 0.0;
                              for (std::size_t c = 0; c < d; ++c) {
                                dn[c] = g.at(r, c) * gv[c];
                                mean_dn += dn[c];
                                mean_dn_x += dn[c] * normed.at(r, c);
                              }
                              mean_dn /= static_cast<double>(d);
                              mean_dn_x /= static_cast<double>(d);
                              for (std::size_t c = 0; c < d; ++c)
                                gx->at(r, c) += inv_std[r] * (dn[c] - mean_dn - normed.at(r, c) * mean_dn_x);
                            }
                          }
                        });
}

Var gelu(Var x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c3 = 0.044715;
  const Tensor& xv = x.value();
  Tensor out(xv.dims());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + c3 * v * v * v)));
  }
  return x.tape->record(std::move(out), {x}, [x](Tape& t, std::size_t o) {
    const Tensor& g = *t.output_grad(o);
    Tensor* gx = t.input_grad(x.id);
    if (!gx) return;
    const Tensor& xv = t.value(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double u = k * (v + c3 * v * v * v);
      const double th = std::tanh(u);
      const double du = k * (1.0 + 3.0 * c3 * v * v);
      (*gx)[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

Var masked_softmax(Var logits, const Mask& mask) {
  const Tensor& lv = logits.value();
  if (lv.rank() < 2 || lv.dim(lv.rank() - 1) != mask.cols() || lv.dim(lv.rank() - 2) != mask.rows()) {
    throw ContractError("masked_softmax: mask " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                        " does not match logits " + dims_to_string(lv.dims()));
  }
  const std::size_t cols = mask.cols();
  const std::size_t rows_per_block = mask.rows();
  const std::size_t n_rows = lv.size() / cols;
  for (std::size_t r = 0; r < rows_per_block; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) any = any || mask.allowed(r, c);
    if (!any) throw ContractError("masked_softmax: row " + std::to_string(r) + " has every position disallowed");
  }
  Tensor out(lv.dims());
  std::vector<double> shifted(cols);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const std::size_t mr = r % rows_per_block;
    const double* z = lv.data() + r * cols;
    double* p = out.data() + r * cols;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      shifted[c] = mask.allowed(mr, c) ? z[c] : z[c] + kMaskSentinel;
      m = std::max(m, shifted[c]);
    }
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = std::exp(shifted[c] - m);
      s += p[c];
    }
    for (std::size_t c = 0; c < cols; ++c) p[c] = mask.allowed(mr, c) ? p[c] / s : 0.0;
  }
  return logits.tape->record(std::move(out), {logits}, [logits, mask](Tape& t, std::size_t o) {
    Tensor* gl = t.input_grad(logits.id);
    if (!gl) return;
    const Tensor& g = *t.output_grad(o);
    const Tensor& p = t.value(o);
    const std::size_t cols = mask.cols();
    const std::size_t n_rows = p.size() / cols;
    for (std::size_t r = 0; r < n_rows; ++r) {
      const std::size_t mr = r % mask.rows();
      const double* pr = p.data() + r * cols;
      const double* gr = g.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += pr[c] * gr[c];
      double* out = gl->data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c)
        if (mask.allowed(mr, c)) out[c] += pr[c] * (gr[c] - dot);
    }
  });
}

Var head_scores(Var q, Var k, Segment seg, std::size_t n_heads) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  require_rank(qv, 2, "head_scores");
  if (qv.dims() != kv.dims()) throw ContractError("head_scores: q/k shape mismatch");
  if (seg.begin + seg.length > qv.rows()) throw ContractError("head_scores: segment out of range");
  if (n_heads == 0 || qv.cols() % n_heads != 0) throw ContractError("head_scores: width not divisible by heads");
  const std::size_t dk = qv.cols() / n_heads;
  const std::size_t len = seg.length;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor out({n_heads, len, len});
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < len; ++i) {
      const double* qi = qv.data() + (seg.begin + i) * qv.cols() + h * dk;
      for (std::size_t j = 0; j <= i; ++j) {
        const double* kj = kv.data() + (seg.begin + j) * kv.cols() + h * dk;
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
        out.at(h, i, j) = s * scale;
      }
    }
  }
  return q.tape->record(std::move(out), {q, k}, [q, k, seg, n_heads, dk, scale](Tape& t, std::size_t o) {
    const Tensor& g = *t.output_grad(o);
    const Tensor& qv = t.value(q.id);
    const Tensor& kv = t.value(k.id);
    Tensor* gq = t.input_grad(q.id);
    Tensor* gk = t.input_grad(k.id);
    const std::size_t w = qv.cols();
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < seg.length; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const double gij = g.at(h, i, j) * scale;
          if (gij == 0.0) continue;
          const std::size_t qi = (seg.begin + i) * w + h * dk;
          const std::size_t kj = (seg.begin + j) * w + h * dk;
          if (gq)
            for (std::size_t c = 0; c < dk; ++c) (*gq)[qi + c] += gij * kv[kj + c];
          if (gk)
            for (std::size_t c = 0; c < dk; ++c) (*gk)[kj + c] += gij * qv[qi + c];
        }
      }
    }
  });
}

Var graft(Var probs, const Tensor& injected, const std::vector<bool>& head_mask) {
  const Tensor& pv = probs.value();
  require_rank(pv, 3, "graft");
  if (injected.dims() != pv.dims()) {
    throw InputError("graft: injected attention " + dims_to_string(injected.dims()) + " does not match " +
                     dims_to_string(pv.dims()));
  }
  if (head_mask.size() != pv.dim(0)) throw ContractError("graft: head mask size");
  const std::size_t block = pv.dim(1) * pv.dim(2);
  Tensor out = pv;
  for (std::size_t h = 0; h < head_mask.size(); ++h)
    if (head_mask[h]) std::copy_n(injected.data() + h * block, block, out.data() + h * block);
  return probs.tape->record(std::move(out), {probs}, [probs, head_mask, block](Tape& t, std::size_t o) {
    Tensor* gp = t.input_grad(probs.id);
    if (!gp) return;
    const Tensor& g = *t.output_grad(o);
    for (std::size_t h = 0; h < head_mask.size(); ++h) {
      if (head_mask[h]) continue;
      for (std::size_t i = h * block; i < (h + 1) * block; ++i) (*gp)[i] += g[i];
    }
  });
}

Var attention_mix(std::span<const Var> probs, Var v, std::span<const Segment> segments, std::size_t n_heads) {
  const Tensor& vv = v.value();
  require_rank(vv, 2, "attention_mix");
  if (probs.size() != segments.size()) throw ContractError("attention_mix: one probability tensor per segment");
  if (n_heads == 0 || vv.cols() % n_heads != 0) throw ContractError("attention_mix: width not divisible by heads");
  const std::size_t dk = vv.cols() / n_heads;
  const std::size_t w = vv.cols();
  Tensor out(vv.dims());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Tensor& p = probs[s].value();
    const Segment seg = segments[s];
    if (p.rank() != 3 || p.dim(0) != n_heads || p.dim(1) != seg.length || p.dim(2) != seg.length)
      throw ContractError("attention_mix: probabilities " + dims_to_string(p.dims()) + " do not match segment");
    if (seg.begin + seg.length > vv.rows()) throw ContractError("attention_mix: segment out of range");
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < seg.length; ++i) {
        double* oi = out.data() + (seg.begin + i) * w + h * dk;
        for (std::size_t j = 0; j <= i; ++j) {
          const double a = p.at(h, i, j);
          const double* vj = vv.data() + (seg.begin + j) * w + h * dk;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += a * vj[c];
        }
      }
    }
  }
  std::vector<Var> inputs(probs.begin(), probs.end());
  inputs.push_back(v);
  std::vector<Segment> segs(segments.begin(), segments.end());
  return v.tape->record(std::move(out), inputs, [inputs, segs, n_heads, dk, w](Tape& t, std::size_t o) {
    const Tensor& g = *t.output_grad(o);
    const Var v = inputs.back();
    const Tensor& vv = t.value(v.id);
    Tensor* gv = t.input_grad(v.id);
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const Tensor& p = t.value(inputs[s].id);
      Tensor* gp = t.input_grad(inputs[s].id);
      const Segment seg = segs[s];
      for (std::size_t h = 0; h < n_heads; ++h) {
        for (std::size_t i = 0; i < seg.length; ++i) {
          const double* gi = g.data() + (seg.begin + i) * w + h * dk;
          for (std::size_t j = 0; j <= i; ++j) {
            const double* vj = vv.data() + (seg.begin + j) * w + h * dk;
            if (gp) {
              double dot = 0.0;
              for (std::size_t c = 0; c < dk; ++c) dot += gi[c] * vj[c];
              gp->at(h, i, j) += dot;
            }
            if (gv) {
              const double a = p.at(h, i, j);
              double* gvj = gv->data() + (seg.begin + j) * w + h * dk;
              for (std::size_t c = 0; c < dk; ++c) gvj[c] += a * gi[c];
            }
          }
        }
      }
    }
  });
}

Var nll_rows(Var logits, std::span<const RowTarget> targets) {
  const Tensor& lv = logits.value();
  require_rank(lv, 2, "nll_rows");
  double total = 0.0;
  for (const auto& tg : targets) {
    if (tg.row >= lv.rows() || tg.token >= lv.cols()) throw ContractError("nll_rows: target out of range");
    const auto row = lv.row(tg.row);
    total += tg.weight * (log_sum_exp(row) - row[tg.token]);
  }
  std::vector<RowTarget> tgs(targets.begin(), targets.end());
  return logits.tape->record(Tensor::scalar(total), {logits}, [logits, tgs](Tape& t, std::size_t o) {
    Tensor* gl = t.input_grad(logits.id);
    if (!gl) return;
    const double g = (*t.output_grad(o))[0];
    const Tensor& lv = t.value(logits.id);
    std::vector<double> p(lv.cols());
    for (const auto& tg : tgs) {
      softmax_row(lv.row(tg.row), p);
      auto out = gl->row(tg.row);
      for (std::size_t c = 0; c < p.size(); ++c) out[c] += g * tg.weight * p[c];
      out[tg.token] -= g * tg.weight;
    }
  });
}

Var kl_rows(Var logits, std::span<const std::size_t> rows, const Tensor& teacher_logits,
            std::span<const double> weights, double floor) {
  const Tensor& lv = logits.value();
  require_rank(lv, 2, "kl_rows");
  require_rank(teacher_logits, 2, "kl_rows");
  if (teacher_logits.rows() != rows.size() || weights.size() != rows.size())
    throw ContractError("kl_rows: teacher rows do not match selected rows");
  if (teacher_logits.cols() != lv.cols()) throw ContractError("kl_rows: vocabulary size mismatch");
  const std::size_t v = lv.cols();
  const double log_floor = std::log(floor);
  // log-probabilities floored at log(floor); kept for backward.
  Tensor teacher_p({rows.size(), v});
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= lv.rows()) throw ContractError("kl_rows: row out of range");
    const auto tz = teacher_logits.row(r);
    const auto sz = lv.row(rows[r]);
    const double tl = log_sum_exp(tz);
    const double sl = log_sum_exp(sz);
    double kl = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      const double lp = tz[c] - tl;
      const double p = std::exp(lp);
      teacher_p.at(r, c) = p;
      if (p <= 0.0) continue;
      kl += p * (std::max(lp, log_floor) - std::max(sz[c] - sl, log_floor));
    }
    total += weights[r] * kl;
  }
  std::vector<std::size_t> rs(rows.begin(), rows.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return logits.tape->record(
      Tensor::scalar(total), {logits},
      [logits, rs, ws, teacher_p = std::move(teacher_p), log_floor](Tape& t, std::size_t o) {
        Tensor* gl = t.input_grad(logits.id);
        if (!gl) return;
        const double g = (*t.output_grad(o))[0];
        const Tensor& lv = t.value(logits.id);
        const std::size_t v = lv.cols();
        std::vector<double> q(v);
        for (std::size_t r = 0; r < rs.size(); ++r) {
          const auto sz = lv.row(rs[r]);
          const double sl = log_sum_exp(sz);
          double mass_unclamped = 0.0;
          for (std::size_t c = 0; c < v; ++c) {
            q[c] = std::exp(sz[c] - sl);
            if (sz[c] - sl >= log_floor) mass_unclamped += teacher_p.at(r, c);
          }
          auto out = gl->row(rs[r]);
          const double scale = g * ws[r];
          for (std::size_t c = 0; c < v; ++c) {
            const double own = (sz[c] - sl >= log_floor) ? teacher_p.at(r, c) : 0.0;
            out[c] += scale * (q[c] * mass_unclamped - own);
          }
        }
      });
}

Var attention_kl(Var probs, std::span<const AttentionTarget> targets, double weight, double floor) {
  const Tensor& pv = probs.value();
  require_rank(pv, 3, "attention_kl");
  double total = 0.0;
  struct Stored {
    std::size_t head, query;
    std::vector<double> teacher;
  };
  std::vector<Stored> stored;
  stored.reserve(targets.size());
  for (const auto& tg : targets) {
    if (tg.head >= pv.dim(0) || tg.query >= pv.dim(1)) throw ContractError("attention_kl: target out of range");
    if (tg.teacher.size() < tg.query + 1) throw ContractError("attention_kl: teacher row shorter than causal prefix");
    const std::span<const double> p = tg.teacher.first(tg.query + 1);
    const std::span<const double> q(pv.data() + (tg.head * pv.dim(1) + tg.query) * pv.dim(2), tg.query + 1);
    total += clamped_kl(p, q, floor);
    stored.push_back({tg.head, tg.query, std::vector<double>(p.begin(), p.end())});
  }
  total *= weight;
  return probs.tape->record(Tensor::scalar(total), {probs},
                            [probs, stored = std::move(stored), weight, floor](Tape& t, std::size_t o) {
                              Tensor* gp = t.input_grad(probs.id);
                              if (!gp) return;
                              const double g = (*t.output_grad(o))[0] * weight;
                              const Tensor& pv = t.value(probs.id);
                              for (const auto& s : stored) {
                                for (std::size_t j = 0; j < s.teacher.size(); ++j) {
                                  const double p = s.teacher[j];
                                  const double q = pv.at(s.head, s.query, j);
                                  if (p <= 0.0 || q < floor) continue;
                                  gp->at(s.head, s.query, j) -= g * p / q;
                                }
                              }
                            });
}

}  // namespace ops
}  // namespace seekr
