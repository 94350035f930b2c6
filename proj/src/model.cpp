// SPDX-License-Identifier: Apache-2.0
#include "anira/model.hpp"

#include <cmath>

namespace anira {

std::string to_string(DeciderKind kind) { return kind == DeciderKind::early ? "early" : "online"; }

DeciderKind parse_decider_kind(const std::string& text) {
  if (text == "early" || text == "E" || text == "e") return DeciderKind::early;
  if (text == "online" || text == "O" || text == "o") return DeciderKind::online;
  throw ContractError("unknown decider kind '" + text + "' (expected early or online)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ContractError(std::string("model config: ") + name + " must be positive");
  };
  positive(depth, "depth");
  positive(n_heads, "n_heads");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(max_seq_len, "max_seq_len");
  positive(vocab_size, "vocab_size");
  if (d_model % n_heads != 0) throw ContractError("model config: d_model must be divisible by n_heads");
  if ((d_model / n_heads) % 2 != 0) throw ContractError("model config: head dimension must be even for rotary encoding");
  if (!(gumbel_tau > 0.0)) throw ContractError("model config: gumbel_tau must be positive");
  if (precision != "float32" && precision != "float64") throw ContractError("model config: precision must be float32 or float64");
}

namespace {

template <typename Real>
Parameter<Real> truncated_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  Tensor<Real> t(std::move(shape));
  for (auto& v : t.storage()) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    v = static_cast<Real>(z * stddev);
  }
  return Parameter<Real>(name, std::move(t));
}

template <typename Real>
Parameter<Real> filled(const std::string& name, Shape shape, Real value) {
  return Parameter<Real>(name, Tensor<Real>(std::move(shape), value));
}

template <typename Real>
DecoderLayer<Real> make_layer(const std::string& prefix, const ModelConfig& c, Rng& rng) {
  const std::size_t h = c.d_model, f = c.d_ff;
  const double s = c.init_std;
  DecoderLayer<Real> l;
  l.attn_norm = filled<Real>(prefix + ".attn_norm", {h}, Real(1));
  l.wq = truncated_normal<Real>(prefix + ".wq", {h, h}, s, rng);
  l.wk = truncated_normal<Real>(prefix + ".wk", {h, h}, s, rng);
  l.wv = truncated_normal<Real>(prefix + ".wv", {h, h}, s, rng);
  l.wo = truncated_normal<Real>(prefix + ".wo", {h, h}, s, rng);
  l.ffn_norm = filled<Real>(prefix + ".ffn_norm", {h}, Real(1));
  l.w_gate = truncated_normal<Real>(prefix + ".w_gate", {h, f}, s, rng);
  l.w_up = truncated_normal<Real>(prefix + ".w_up", {h, f}, s, rng);
  l.w_down = truncated_normal<Real>(prefix + ".w_down", {f, h}, s, rng);
  return l;
}

template <typename Real>
std::vector<double> row_as_double(const Tensor<Real>& t, std::size_t row) {
  auto r = t.row(row);
  return std::vector<double>(r.begin(), r.end());
}

}  // namespace

template <typename Real>
Model<Real>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  rope_ = kernels::RopeTable<Real>(config_.max_seq_len, config_.d_model / config_.n_heads);
  Rng rng = Rng::stream(config_.seed, "init");
  const std::size_t h = config_.d_model, v = config_.vocab_size, d = config_.depth;
  const double s = config_.init_std;
  embedding = truncated_normal<Real>("embedding", {v, h}, s, rng);
  for (std::size_t i = 0; i < config_.n_prelude_layers; ++i)
    prelude.push_back(make_layer<Real>("prelude." + std::to_string(i), config_, rng));
  recurrent = make_layer<Real>("recurrent", config_, rng);
  for (std::size_t i = 0; i < config_.n_coda_layers; ++i)
    coda.push_back(make_layer<Real>("coda." + std::to_string(i), config_, rng));
  final_norm = filled<Real>("final_norm", {h}, Real(1));
  lm_head = truncated_normal<Real>("lm_head", {h, v}, s, rng);
  const std::size_t out = config_.decider == DeciderKind::early ? d : 1;
  decider.norm = filled<Real>("decider.norm", {h}, Real(1));
  decider.w1 = truncated_normal<Real>("decider.w1", {h, config_.decider_hidden()}, s, rng);
  decider.w2 = truncated_normal<Real>("decider.w2", {config_.decider_hidden(), out}, s, rng);
  decider.b2 = filled<Real>("decider.b2", {out}, Real(0));
}

template <typename Real>
std::vector<Parameter<Real>*> Model<Real>::parameters() {
  std::vector<Parameter<Real>*> out{&embedding};
  for (auto& l : prelude) l.collect(out);
  recurrent.collect(out);
  for (auto& l : coda) l.collect(out);
  out.push_back(&final_norm);
  out.push_back(&lm_head);
  decider.collect(out);
  return out;
}

template <typename Real>
std::vector<const Parameter<Real>*> Model<Real>::parameters() const {
  auto all = const_cast<Model*>(this)->parameters();
  return std::vector<const Parameter<Real>*>(all.begin(), all.end());
}

template <typename Real>
Parameter<Real>* Model<Real>::find(const std::string& name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

template <typename Real>
std::size_t Model<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename Real>
std::size_t Model<Real>::decider_parameter_count() const {
  return decider.norm.value.size() + decider.w1.value.size() + decider.w2.value.size() + decider.b2.value.size();
}

template <typename Real>
void Model<Real>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

void Batch::validate(std::size_t vocab_size, std::size_t max_seq_len) const {
  const std::size_t n = rows();
  if (batch == 0 || seq == 0) throw ContractError("batch: empty");
  if (seq > max_seq_len) {
    throw ContractError("sequence length " + std::to_string(seq) + " exceeds max_seq_len " + std::to_string(max_seq_len));
  }
  if (inputs.size() != n || targets.size() != n || answer_mask.size() != n || token_mask.size() != n) {
    throw DimensionError("batch: per-row vectors must have batch * seq entries");
  }
  for (int id : inputs)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) throw ContractError("batch: token id out of vocabulary");
}

template <typename Real>
ExitDepthDistribution ForwardTrace<Real>::distribution(std::size_t row) const {
  if (!alphas.empty()) {
    std::vector<double> a;
    for (const auto& v : alphas) a.push_back(static_cast<double>(v.value()[row]));
    return ExitDepthDistribution::from_halting(a);
  }
  return ExitDepthDistribution::from_probs(row_as_double(exit_probs.value(), row));
}

template <typename Real>
LayerOutput<Real> layer_forward(Tape<Real>& tape, DecoderLayer<Real>& layer, const Var<Real>& x, std::size_t batch,
                                std::size_t seq, std::size_t heads, const kernels::RopeTable<Real>& rope,
                                const KvGate<Real>* gate) {
  using namespace ops;
  Var<Real> n = rms_norm(x, tape.parameter(layer.attn_norm));
  Var<Real> q = matmul(n, tape.parameter(layer.wq));
  Var<Real> k = matmul(n, tape.parameter(layer.wk));
  Var<Real> v = matmul(n, tape.parameter(layer.wv));
  if (gate) {
    k = passthrough(gate->prev_k, k, gate->active, std::optional<Var<Real>>{}, GateMode::straight_through);
    v = passthrough(gate->prev_v, v, gate->active, std::optional<Var<Real>>{}, GateMode::straight_through);
  }
  Var<Real> attn = causal_attention(q, k, v, heads, batch, seq, rope);
  Var<Real> h = add(x, matmul(attn, tape.parameter(layer.wo)));
  Var<Real> n2 = rms_norm(h, tape.parameter(layer.ffn_norm));
  Var<Real> gated = mul(silu(matmul(n2, tape.parameter(layer.w_gate))), matmul(n2, tape.parameter(layer.w_up)));
  return {add(h, matmul(gated, tape.parameter(layer.w_down))), k, v};
}

namespace {

template <typename Real>
Var<Real> decider_head(Tape<Real>& tape, DeciderHead<Real>& head, const Var<Real>& h) {
  using namespace ops;
  Var<Real> n = rms_norm(h, tape.parameter(head.norm));
  Var<Real> hidden = silu(matmul(n, tape.parameter(head.w1)));
  return add_bias(matmul(hidden, tape.parameter(head.w2)), tape.parameter(head.b2));
}

}  // namespace

template <typename Real>
Var<Real> early_decider_logits(Tape<Real>& tape, DeciderHead<Real>& head, const Var<Real>& h0) {
  return ops::center_rows(decider_head(tape, head, h0));
}

template <typename Real>
Var<Real> online_halting(Tape<Real>& tape, DeciderHead<Real>& head, const Var<Real>& h) {
  return ops::sigmoid(decider_head(tape, head, h));
}

template <typename Real>
ForwardTrace<Real> forward(Model<Real>& model, Tape<Real>& tape, const Batch& batch, const ForwardOptions& opt) {
  using namespace ops;
  const ModelConfig& cfg = model.config();
  batch.validate(cfg.vocab_size, cfg.max_seq_len);
  const std::size_t n = batch.rows(), depth = cfg.depth;
  const bool online = cfg.decider == DeciderKind::online;
  const bool stochastic = opt.sampling == ForwardOptions::Sampling::stochastic;
  if (opt.forced_depths) {
    if (opt.forced_depths->size() != n) throw DimensionError("forced_depths: one depth per row required");
    for (std::size_t d : *opt.forced_depths)
      if (d < 1 || d > depth) throw ContractError("forced_depths: depth outside 1..D");
  }
  if (!stochastic && !online && opt.rule.kind == DepthRule::Kind::threshold) {
    throw ContractError("threshold depth rule requires the online decider");
  }
  if (!stochastic && online && opt.rule.kind == DepthRule::Kind::modal && !opt.forced_depths) {
    // The online mode can only be resolved token by token (see the cached
    // decoder); the unrolled forward would have to revisit frozen states.
    throw ContractError("modal depth rule with the online decider needs the cached decoder");
  }
  if (stochastic && !opt.forced_depths && !opt.rng && !(opt.zero_noise && !online)) {
    throw ContractError("stochastic forward needs a random stream");
  }
  const bool want_surrogate = tape.grad_enabled() || opt.gate_mode == GateMode::soft;

  ForwardTrace<Real> tr;
  tr.depths.assign(n, depth);
  tr.decider_evaluations.assign(n, 0);

  Var<Real> h = embedding(tape.parameter(model.embedding), std::span<const int>(batch.inputs));
  for (auto& layer : model.prelude)
    h = layer_forward(tape, layer, h, batch.batch, batch.seq, cfg.n_heads, model.rope()).out;
  tr.states.push_back(h);

  std::vector<std::optional<Var<Real>>> surrogate(depth + 1);
  std::vector<OnlineHalting> halting;

  if (!online) {
    Var<Real> s = early_decider_logits(tape, model.decider, h);
    tr.decider_logits = s;
    tr.exit_probs = softmax_rows(s);
    Tensor<Real> noise({n, depth});
    for (std::size_t r = 0; r < n; ++r) {
      tr.decider_evaluations[r] = 1;
      if (opt.forced_depths) {
        tr.depths[r] = (*opt.forced_depths)[r];
      } else if (stochastic) {
        Rng fallback(0);
        GumbelSample g = gumbel_st_sample(row_as_double(s.value(), r), cfg.gumbel_tau, opt.rng ? *opt.rng : fallback,
                                          opt.zero_noise);
        tr.depths[r] = g.depth;
        for (std::size_t d = 0; d < depth; ++d) noise.at(r, d) = static_cast<Real>(g.noise[d]);
      } else {
        tr.depths[r] = modal_depth(row_as_double(tr.exit_probs.value(), r));
      }
    }
    if (want_surrogate && depth > 1) {
      Var<Real> perturbed = scale(add(s, tape.constant(std::move(noise))), static_cast<Real>(1.0 / cfg.gumbel_tau));
      Var<Real> tail = tail_sum_rows(softmax_rows(perturbed));
      for (std::size_t d = 2; d <= depth; ++d) surrogate[d] = column(tail, d - 1);
    }
  } else {
    halting.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
      double u = opt.rule.level();
      if (stochastic && !opt.forced_depths) u = opt.rng->uniform();
      halting.emplace_back(depth, u);
    }
  }
  std::vector<std::uint8_t> gate(n, 1);
  Var<Real> prev_k, prev_v;
  std::optional<Var<Real>> survival;
  for (std::size_t d = 1; d <= depth; ++d) {
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t limit = tr.depths[r];
      if (online) limit = opt.forced_depths ? (*opt.forced_depths)[r] : halting[r].exit_depth();
      gate[r] = d <= limit ? 1 : 0;
    }
    KvGate<Real> kv{prev_k, prev_v, gate};
    LayerOutput<Real> lo =
        layer_forward(tape, model.recurrent, h, batch.batch, batch.seq, cfg.n_heads, model.rope(), d >= 2 ? &kv : nullptr);
    h = d == 1 ? lo.out : passthrough(h, lo.out, std::span<const std::uint8_t>(gate), surrogate[d], opt.gate_mode);
    prev_k = lo.k;
    prev_v = lo.v;
    tr.states.push_back(h);

    if (online && d < depth) {
      Var<Real> alpha = online_halting(tape, model.decider, h);
      tr.alphas.push_back(alpha);
      for (std::size_t r = 0; r < n; ++r) {
        if (gate[r]) ++tr.decider_evaluations[r];
        halting[r].step(static_cast<double>(alpha.value()[r]));
      }
      if (want_surrogate) {
        if (!survival) {
          survival = sub(tape.constant(Tensor<Real>({n, 1}, Real(1))), alpha);
        } else {
          survival = sub(*survival, mul(*survival, alpha));
        }
        surrogate[d + 1] = survival;
      }
    }
  }
  if (online) {
    for (std::size_t r = 0; r < n; ++r) tr.depths[r] = opt.forced_depths ? (*opt.forced_depths)[r] : halting[r].exit_depth();
    tr.exit_probs = depth == 1 ? tape.constant(Tensor<Real>({n, 1}, Real(1))) : halting_distribution(concat_cols(tr.alphas));
  }

  tr.exit_states = h;
  for (auto& layer : model.coda) h = layer_forward(tape, layer, h, batch.batch, batch.seq, cfg.n_heads, model.rope()).out;
  tr.logits = matmul(rms_norm(h, tape.parameter(model.final_norm)), tape.parameter(model.lm_head));
  return tr;
}

#define ANIRA_INSTANTIATE_MODEL(R)                                                                                 \
  template class Model<R>;                                                                                        \
  template struct ForwardTrace<R>;                                                                                \
  template LayerOutput<R> layer_forward(Tape<R>&, DecoderLayer<R>&, const Var<R>&, std::size_t, std::size_t,       \
                                        std::size_t, const kernels::RopeTable<R>&, const KvGate<R>*);             \
  template Var<R> early_decider_logits(Tape<R>&, DeciderHead<R>&, const Var<R>&);                                 \
  template Var<R> online_halting(Tape<R>&, DeciderHead<R>&, const Var<R>&);                                       \
  template ForwardTrace<R> forward(Model<R>&, Tape<R>&, const Batch&, const ForwardOptions&);

ANIRA_INSTANTIATE_MODEL(float)
ANIRA_INSTANTIATE_MODEL(double)

}  // namespace anira
