#include "seekr/model.hpp"

#include <algorithm>
#include <map>

#include "seekr/error.hpp"
#include "seekr/rng.hpp"

namespace seekr {

void TransformerConfig::validate() const {
  if (n_layers == 0) throw ConfigError("n_layers", "must be positive");
  if (n_heads == 0) throw ConfigError("n_heads", "must be positive");
  if (d_k == 0) throw ConfigError("d_k", "must be positive");
  if (d_ff == 0) throw ConfigError("d_ff", "must be positive");
  if (vocab_size == 0) throw ConfigError("vocab_size", "must be positive");
  if (max_seq_len == 0) throw ConfigError("max_seq_len", "must be positive");
  if (d_model != n_heads * d_k) {
    throw ConfigError("d_model", "must equal n_heads * d_k (" + std::to_string(n_heads) + " * " +
                                     std::to_string(d_k) + "), got " + std::to_string(d_model));
  }
}

namespace {

template <class Layer, class Fn>
void visit_layer(Layer& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "ln1_gain", p.ln1_gain);
  fn(prefix + "ln1_bias", p.ln1_bias);
  fn(prefix + "w_query", p.w_query);
  fn(prefix + "b_query", p.b_query);
  fn(prefix + "w_key", p.w_key);
  fn(prefix + "b_key", p.b_key);
  fn(prefix + "w_value", p.w_value);
  fn(prefix + "b_value", p.b_value);
  fn(prefix + "w_out", p.w_out);
  fn(prefix + "b_out", p.b_out);
  fn(prefix + "ln2_gain", p.ln2_gain);
  fn(prefix + "ln2_bias", p.ln2_bias);
  fn(prefix + "w_ff1", p.w_ff1);
  fn(prefix + "b_ff1", p.b_ff1);
  fn(prefix + "w_ff2", p.w_ff2);
  fn(prefix + "b_ff2", p.b_ff2);
}

template <class Model, class Fn>
void visit_model(Model& m, Fn&& fn) {
  fn("token_embedding", m.token_embedding);
  fn("position_embedding", m.position_embedding);
  for (std::size_t l = 0; l < m.layers.size(); ++l) visit_layer(m.layers[l], "layers." + std::to_string(l) + ".", fn);
  fn("final_gain", m.final_gain);
  fn("final_bias", m.final_bias);
  fn("w_vocab", m.w_vocab);
  fn("b_vocab", m.b_vocab);
}

bool is_gain(const std::string& name) { return name.ends_with("_gain"); }
bool is_bias(const std::string& name) { return name.find(".b_") != std::string::npos || name.ends_with("_bias") || name == "b_vocab"; }

}  // namespace

ModelState ModelState::zeros(const TransformerConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  ModelState m;
  m.config = config;
  m.token_embedding = Tensor({config.vocab_size, d});
  m.position_embedding = Tensor({config.max_seq_len, d});
  m.layers.resize(config.n_layers);
  for (auto& p : m.layers) {
    p.ln1_gain = Tensor({d}, 1.0);
    p.ln1_bias = Tensor({d});
    p.w_query = Tensor({d, d});
    p.b_query = Tensor({d});
    p.w_key = Tensor({d, d});
    p.b_key = Tensor({d});
    p.w_value = Tensor({d, d});
    p.b_value = Tensor({d});
    p.w_out = Tensor({d, d});
    p.b_out = Tensor({d});
    p.ln2_gain = Tensor({d}, 1.0);
    p.ln2_bias = Tensor({d});
    p.w_ff1 = Tensor({d, config.d_ff});
    p.b_ff1 = Tensor({config.d_ff});
    p.w_ff2 = Tensor({config.d_ff, d});
    p.b_ff2 = Tensor({d});
  }
  m.final_gain = Tensor({d}, 1.0);
  m.final_bias = Tensor({d});
  m.w_vocab = Tensor({d, config.vocab_size});
  m.b_vocab = Tensor({config.vocab_size});
  return m;
}

ModelState ModelState::initialize(const TransformerConfig& config, std::uint64_t seed, double init_std) {
  ModelState m = zeros(config);
  Rng rng(derive_seed(seed, "model-init"));
  m.for_each_parameter([&](const std::string& name, Tensor& t) {
    if (is_gain(name) || is_bias(name)) return;
    for (auto& v : t.values()) v = init_std * rng.normal();
  });
  return m;
}

void ModelState::for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_model(*this, fn);
}

void ModelState::for_each_parameter(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_model(*this, fn);
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::vector<std::string> ModelState::parameter_names() const {
  std::vector<std::string> names;
  for_each_parameter([&](const std::string& name, const Tensor&) { names.push_back(name); });
  return names;
}

bool bit_identical(const ModelState& a, const ModelState& b) {
  if (!(a.config == b.config)) return false;
  std::vector<const Tensor*> ta, tb;
  a.for_each_parameter([&](const std::string&, const Tensor& t) { ta.push_back(&t); });
  b.for_each_parameter([&](const std::string&, const Tensor& t) { tb.push_back(&t); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!bit_identical(*ta[i], *tb[i])) return false;
  return true;
}

std::span<const double> AttentionRecord::row(std::size_t layer, std::size_t h, std::size_t query) const {
  const Tensor& t = layers.at(layer);
  return {t.data() + (h * seq_len + query) * seq_len, seq_len};
}

Tensor AttentionRecord::head(std::size_t layer, std::size_t h) const {
  Tensor out({seq_len, seq_len});
  const Tensor& t = layers.at(layer);
  std::copy_n(t.data() + h * seq_len * seq_len, seq_len * seq_len, out.data());
  return out;
}

HeadSet all_heads(const TransformerConfig& config) {
  HeadSet s;
  for (std::size_t l = 0; l < config.n_layers; ++l)
    for (std::size_t h = 0; h < config.n_heads; ++h) s.emplace(l, h);
  return s;
}

namespace {

struct LayerVars {
  Var ln1_gain, ln1_bias, w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
  Var ln2_gain, ln2_bias, w_ff1, b_ff1, w_ff2, b_ff2;
};

Var linear(Var x, Var w, Var b) { return ops::add_bias(ops::matmul(x, w), b); }

const Mask& causal_mask(std::size_t n) {
  thread_local std::map<std::size_t, Mask> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Mask::causal(n)).first;
  return it->second;
}

void validate_tokens(const TransformerConfig& config, const Tokens& tokens) {
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (tokens.size() > config.max_seq_len) {
    throw InputError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                     std::to_string(config.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t >= config.vocab_size) {
      throw InputError("forward: token id " + std::to_string(t) + " out of range for vocab size " +
                       std::to_string(config.vocab_size));
    }
  }
}

}  // namespace

BatchForward forward_batch(const ModelState& model, std::span<const Tokens> sequences, const ForwardOptions& options) {
  const TransformerConfig& cfg = model.config;
  if (sequences.empty()) throw InputError("forward: no sequences");
  const bool grafting = !options.injected.empty();
  if (grafting && options.injected.size() != sequences.size())
    throw InputError("forward_grafted: one injected record (or null) per sequence required");

  BatchForward out;
  out.tape = std::make_unique<Tape>(options.record_backward);
  out.captured = options.capture_attention;
  Tape& tape = *out.tape;

  std::vector<TokenId> ids;
  std::vector<TokenId> positions;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const Tokens& seq = sequences[s];
    validate_tokens(cfg, seq);
    if (grafting && options.injected[s]) {
      const AttentionRecord& rec = *options.injected[s];
      if (rec.seq_len != seq.size()) {
        throw InputError("forward_grafted: injected attention covers " + std::to_string(rec.seq_len) +
                         " positions but the sequence has " + std::to_string(seq.size()));
      }
      if (rec.n_layers != cfg.n_layers || rec.n_heads != cfg.n_heads || rec.layers.size() != cfg.n_layers)
        throw InputError("forward_grafted: injected attention has the wrong layer/head layout");
    }
    out.segments.push_back({ids.size(), seq.size()});
    ids.insert(ids.end(), seq.begin(), seq.end());
    for (std::size_t p = 0; p < seq.size(); ++p) positions.push_back(p);
  }
  for (const auto& [l, h] : options.graft_heads) {
    if (l >= cfg.n_layers || h >= cfg.n_heads) throw InputError("forward_grafted: head set exceeds model heads");
  }

  auto param = [&](const Tensor& t) {
    Var v = tape.parameter_ref(t);
    out.parameter_nodes.push_back(v);
    return v;
  };
  Var tok = param(model.token_embedding);
  Var pos = param(model.position_embedding);
  std::vector<LayerVars> lv(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& p = model.layers[l];
    lv[l] = {param(p.ln1_gain), param(p.ln1_bias), param(p.w_query), param(p.b_query), param(p.w_key),
             param(p.b_key),    param(p.w_value),  param(p.b_value), param(p.w_out),   param(p.b_out),
             param(p.ln2_gain), param(p.ln2_bias), param(p.w_ff1),   param(p.b_ff1),   param(p.w_ff2),
             param(p.b_ff2)};
  }
  Var final_gain = param(model.final_gain);
  Var final_bias = param(model.final_bias);
  Var w_vocab = param(model.w_vocab);
  Var b_vocab = param(model.b_vocab);

  std::vector<std::vector<bool>> graft_masks(cfg.n_layers, std::vector<bool>(cfg.n_heads, false));
  std::vector<bool> layer_grafted(cfg.n_layers, false);
  if (grafting) {
    for (const auto& [l, h] : options.graft_heads) {
      graft_masks[l][h] = true;
      layer_grafted[l] = true;
    }
  }

  out.attention_nodes.assign(sequences.size(), std::vector<Var>(cfg.n_layers));
  Var x = ops::add(ops::embedding(tok, ids), ops::embedding(pos, positions));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerVars& p = lv[l];
    Var h = ops::layer_norm(x, p.ln1_gain, p.ln1_bias);
    Var q = linear(h, p.w_query, p.b_query);
    Var k = linear(h, p.w_key, p.b_key);
    Var v = linear(h, p.w_value, p.b_value);
    std::vector<Var> probs(sequences.size());
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      const Segment seg = out.segments[s];
      Var a = ops::masked_softmax(ops::head_scores(q, k, seg, cfg.n_heads), causal_mask(seg.length));
      if (layer_grafted[l] && options.injected[s]) a = ops::graft(a, options.injected[s]->layers[l], graft_masks[l]);
      if (options.capture_attention) tape.watch(a);
      probs[s] = a;
      out.attention_nodes[s][l] = a;
    }
    Var ctx = ops::attention_mix(probs, v, out.segments, cfg.n_heads);
    x = ops::add(x, linear(ctx, p.w_out, p.b_out));
    Var h2 = ops::layer_norm(x, p.ln2_gain, p.ln2_bias);
    Var ff = linear(ops::gelu(linear(h2, p.w_ff1, p.b_ff1)), p.w_ff2, p.b_ff2);
    x = ops::add(x, ff);
  }
  Var hf = ops::layer_norm(x, final_gain, final_bias);
  out.logits = linear(hf, w_vocab, b_vocab);
  return out;
}

AttentionRecord BatchForward::attention(std::size_t seq) const {
  if (!captured) throw UsageError("attention requested but the forward ran without capture_attention");
  const auto& nodes = attention_nodes.at(seq);
  AttentionRecord rec;
  rec.n_layers = nodes.size();
  rec.seq_len = segments.at(seq).length;
  rec.n_heads = nodes.empty() ? 0 : nodes[0].value().dim(0);
  for (const Var& v : nodes) rec.layers.push_back(v.value());
  return rec;
}

Tensor BatchForward::sequence_logits(std::size_t seq) const {
  const Segment seg = segments.at(seq);
  const Tensor& all = logits.value();
  Tensor out({seg.length, all.cols()});
  std::copy_n(all.data() + seg.begin * all.cols(), seg.length * all.cols(), out.data());
  return out;
}

Gradients BatchForward::parameter_gradients() const {
  Gradients g;
  g.reserve(parameter_nodes.size());
  for (const Var& v : parameter_nodes) g.push_back(tape->grad(v));
  return g;
}

AttentionRecord BatchForward::attention_gradients(std::size_t seq) const {
  if (!captured) throw UsageError("attention_gradients: forward ran without capture_attention");
  if (!tape->backward_done()) throw UsageError("attention_gradients: backward has not run");
  const auto& nodes = attention_nodes.at(seq);
  AttentionRecord rec;
  rec.n_layers = nodes.size();
  rec.seq_len = segments.at(seq).length;
  rec.n_heads = nodes.empty() ? 0 : nodes[0].value().dim(0);
  for (const Var& v : nodes) rec.layers.push_back(tape->grad(v));
  return rec;
}

ForwardOutput forward(const ModelState& model, const Tokens& tokens, bool capture_attention, bool record_backward) {
  ForwardOptions opt;
  opt.capture_attention = capture_attention;
  opt.record_backward = record_backward;
  ForwardOutput out{forward_batch(model, std::span<const Tokens>(&tokens, 1), opt), std::nullopt};
  if (capture_attention) out.attention = out.batch.attention(0);
  return out;
}

ForwardOutput forward_grafted(const ModelState& student, const AttentionRecord& injected, const Tokens& tokens,
                              const HeadSet& head_set) {
  ForwardOptions opt;
  opt.capture_attention = true;
  opt.injected = {&injected};
  opt.graft_heads = head_set;
  ForwardOutput out{forward_batch(student, std::span<const Tokens>(&tokens, 1), opt), std::nullopt};
  out.attention = out.batch.attention(0);
  return out;
}

AttentionRecord attention_gradients(ForwardOutput& output, Var loss) {
  if (!output.batch.captured) throw UsageError("attention_gradients: forward ran without capture_attention");
  output.tape().backward(loss);
  return output.batch.attention_gradients(0);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<Tokens> greedy_decode_batch(const ModelState& model, std::span<const Tokens> prompts, std::size_t max_new,
                                        TokenId stop_token, const ModelState* graft_source,
                                        const HeadSet& graft_heads) {
  const std::size_t max_len = model.config.max_seq_len;
  for (const Tokens& p : prompts) {
    if (p.size() + max_new > max_len) {
      throw InputError("greedy_decode: prompt length " + std::to_string(p.size()) + " + max_new " +
                       std::to_string(max_new) + " exceeds max_seq_len " + std::to_string(max_len));
    }
  }
  std::vector<Tokens> answers(prompts.size());
  std::vector<std::size_t> active(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) active[i] = i;
  for (std::size_t step = 0; step < max_new && !active.empty(); ++step) {
    std::vector<Tokens> seqs;
    seqs.reserve(active.size());
    for (std::size_t i : active) {
      Tokens s = prompts[i];
      s.insert(s.end(), answers[i].begin(), answers[i].end());
      seqs.push_back(std::move(s));
    }
    ForwardOptions opt;
    opt.record_backward = false;
    std::vector<AttentionRecord> injected;
    if (graft_source) {
      ForwardOptions src_opt;
      src_opt.record_backward = false;
      src_opt.capture_attention = true;
      BatchForward src = forward_batch(*graft_source, seqs, src_opt);
      injected.reserve(seqs.size());
      for (std::size_t s = 0; s < seqs.size(); ++s) injected.push_back(src.attention(s));
      for (const auto& rec : injected) opt.injected.push_back(&rec);
      opt.graft_heads = graft_heads;
    }
    BatchForward fwd = forward_batch(model, seqs, opt);
    const Tensor& logits = fwd.logits.value();
    std::vector<std::size_t> still;
    for (std::size_t s = 0; s < active.size(); ++s) {
      const Segment seg = fwd.segments[s];
      const TokenId next = argmax(logits.row(seg.begin + seg.length - 1));
      if (next == stop_token) continue;
      answers[active[s]].push_back(next);
      if (step + 1 < max_new) still.push_back(active[s]);
    }
    active = std::move(still);
  }
  return answers;
}

Tokens greedy_decode(const ModelState& model, const Tokens& prompt, std::size_t max_new, TokenId stop_token) {
  return greedy_decode_batch(model, std::span<const Tokens>(&prompt, 1), max_new, stop_token).front();
}

}  // namespace seekr
