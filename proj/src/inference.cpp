// SPDX-License-Identifier: Apache-2.0
#include "anira/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anira/kernels.hpp"

namespace anira {

// ---------------------------------------------------------------- KvCache

template <typename Real>
KvCache<Real>::KvCache(std::size_t prelude_layers, std::size_t coda_layers, std::size_t width)
    : width_(width),
      prelude_k_(prelude_layers),
      prelude_v_(prelude_layers),
      coda_k_(coda_layers),
      coda_v_(coda_layers) {}

template <typename Real>
void KvCache<Real>::append_fixed(Role role, std::size_t layer, std::vector<Real> key, std::vector<Real> value) {
  auto& ks = role == Role::prelude ? prelude_k_ : coda_k_;
  auto& vs = role == Role::prelude ? prelude_v_ : coda_v_;
  if (layer >= ks.size()) throw ContractError("KV cache: layer index out of range");
  ks[layer].push_back(std::move(key));
  vs[layer].push_back(std::move(value));
}

template <typename Real>
const Real* KvCache<Real>::fixed_key(Role role, std::size_t layer, std::size_t token) const {
  const auto& ks = role == Role::prelude ? prelude_k_ : coda_k_;
  if (layer >= ks.size() || token >= ks[layer].size()) throw CacheMissError("KV cache miss for token " + std::to_string(token));
  return ks[layer][token].data();
}

template <typename Real>
const Real* KvCache<Real>::fixed_value(Role role, std::size_t layer, std::size_t token) const {
  const auto& vs = role == Role::prelude ? prelude_v_ : coda_v_;
  if (layer >= vs.size() || token >= vs[layer].size()) throw CacheMissError("KV cache miss for token " + std::to_string(token));
  return vs[layer][token].data();
}

template <typename Real>
void KvCache<Real>::begin_token() {
  rec_k_.emplace_back();
  rec_v_.emplace_back();
  exit_depths_.push_back(0);
}

template <typename Real>
void KvCache<Real>::push_recurrent(std::vector<Real> key, std::vector<Real> value) {
  if (exit_depths_.empty()) throw ContractError("KV cache: push_recurrent before begin_token");
  rec_k_.back().push_back(std::move(key));
  rec_v_.back().push_back(std::move(value));
  exit_depths_.back() = rec_k_.back().size();
}

template <typename Real>
void KvCache<Real>::truncate_newest(std::size_t depth) {
  if (exit_depths_.empty() || depth == 0 || depth > exit_depths_.back()) {
    throw ContractError("KV cache: invalid truncation depth");
  }
  rec_k_.back().resize(depth);
  rec_v_.back().resize(depth);
  exit_depths_.back() = depth;
}

template <typename Real>
std::size_t KvCache<Real>::check_token(std::size_t token) const {
  if (token >= exit_depths_.size() || exit_depths_[token] == 0) {
    throw CacheMissError("KV cache has no recurrent entry for token " + std::to_string(token));
  }
  return exit_depths_[token];
}

template <typename Real>
std::size_t KvCache<Real>::lookup_depth(std::size_t token, std::size_t depth) const {
  if (depth == 0) throw ContractError("KV cache: depths are 1-based");
  return std::min(depth, check_token(token));
}

template <typename Real>
const Real* KvCache<Real>::recurrent_key(std::size_t token, std::size_t depth) const {
  return rec_k_[token][lookup_depth(token, depth) - 1].data();
}

template <typename Real>
const Real* KvCache<Real>::recurrent_value(std::size_t token, std::size_t depth) const {
  return rec_v_[token][lookup_depth(token, depth) - 1].data();
}

template <typename Real>
std::size_t KvCache<Real>::stored_depth(std::size_t token) const {
  return check_token(token);
}

template <typename Real>
std::size_t KvCache<Real>::recurrent_entries() const {
  std::size_t n = 0;
  for (const auto& k : rec_k_) n += k.size();
  return n;
}

// ---------------------------------------------------------- ComputeReport

ComputeReport ComputeReport::from_depths(const std::vector<std::size_t>& depths, std::size_t max_depth,
                                         std::size_t decider_evaluations, double unit_cost) {
  ComputeReport r;
  r.depth = max_depth;
  r.depths = depths;
  for (std::size_t d = 1; d <= max_depth; ++d)
    for (std::size_t di : depths) r.cost_exec += di >= d ? 1 : 0;
  r.kv_entries = std::accumulate(depths.begin(), depths.end(), std::size_t{0});
  r.decider_evaluations = decider_evaluations;
  r.decider_unit_cost = unit_cost;
  r.cost_dec = static_cast<double>(decider_evaluations) * unit_cost;
  if (!depths.empty()) {
    r.mean_depth = static_cast<double>(r.kv_entries) / static_cast<double>(depths.size());
    r.savings_ratio = r.mean_depth / static_cast<double>(max_depth);
  }
  return r;
}

double decider_unit_cost(const ModelConfig& c) {
  const double h = static_cast<double>(c.d_model), i = static_cast<double>(c.decider_hidden());
  const double out = c.decider == DeciderKind::early ? static_cast<double>(c.depth) : 1.0;
  return h * i + i * out;
}

// ---------------------------------------------------------------- Decoder

template <typename Real>
Decoder<Real>::Decoder(Model<Real>& model, DepthRule rule)
    : model_(model), rule_(rule), cache_(model.prelude.size(), model.coda.size(), model.config().d_model) {
  if (model.config().decider == DeciderKind::early && rule.kind == DepthRule::Kind::threshold) {
    throw ContractError("threshold depth rule requires the online decider");
  }
}

template <typename Real>
typename Decoder<Real>::RowLayer Decoder<Real>::run_layer(DecoderLayer<Real>& layer, const std::vector<Real>& x,
                                                          std::size_t pos, const std::vector<const Real*>& past_keys,
                                                          const std::vector<const Real*>& past_values) {
  const ModelConfig& c = model_.config();
  const std::size_t h = c.d_model, f = c.d_ff, heads = c.n_heads, hd = h / heads;
  Real inv = 0;
  std::vector<Real> n(h), q(h), k(h), v(h);
  kernels::rms_norm_forward(x.data(), layer.attn_norm.value.ptr(), n.data(), &inv, 1, h, Real(1e-6));
  kernels::gemm_nn(n.data(), layer.wq.value.ptr(), q.data(), 1, h, h, false);
  kernels::gemm_nn(n.data(), layer.wk.value.ptr(), k.data(), 1, h, h, false);
  kernels::gemm_nn(n.data(), layer.wv.value.ptr(), v.data(), 1, h, h, false);
  for (std::size_t head = 0; head < heads; ++head) {
    kernels::rope_rotate(q.data() + head * hd, model_.rope(), pos, false);
    kernels::rope_rotate(k.data() + head * hd, model_.rope(), pos, false);
  }
  std::vector<const Real*> keys(past_keys), values(past_values);
  keys.push_back(k.data());
  values.push_back(v.data());
  std::vector<Real> attn(h), probs(keys.size());
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
  for (std::size_t head = 0; head < heads; ++head) {
    kernels::attend_row(q.data() + head * hd, keys.data(), values.data(), keys.size(), head * hd, hd, scale,
                        probs.data(), attn.data() + head * hd);
  }
  std::vector<Real> proj(h), resid(x);
  kernels::gemm_nn(attn.data(), layer.wo.value.ptr(), proj.data(), 1, h, h, false);
  kernels::axpy(Real(1), proj.data(), resid.data(), h);
  std::vector<Real> n2(h), gate(f), up(f), down(h);
  kernels::rms_norm_forward(resid.data(), layer.ffn_norm.value.ptr(), n2.data(), &inv, 1, h, Real(1e-6));
  kernels::gemm_nn(n2.data(), layer.w_gate.value.ptr(), gate.data(), 1, h, f, false);
  kernels::gemm_nn(n2.data(), layer.w_up.value.ptr(), up.data(), 1, h, f, false);
  for (std::size_t j = 0; j < f; ++j) {
    const Real g = gate[j] / (Real(1) + std::exp(-gate[j]));
    gate[j] = g * up[j];
  }
  kernels::gemm_nn(gate.data(), layer.w_down.value.ptr(), down.data(), 1, f, h, false);
  kernels::axpy(Real(1), down.data(), resid.data(), h);
  return {std::move(resid), std::move(k), std::move(v)};
}

namespace {

/// Online mode, resolved as soon as no later depth can exceed the best so far
/// (every later q(d) is bounded by the remaining survival mass).
class OnlineMode {
 public:
  explicit OnlineMode(std::size_t depth) : depth_(depth) {}
  void step(double alpha) {
    const double qd = remaining_ * alpha;
    remaining_ *= (1.0 - alpha);
    q_.push_back(qd);
    if (!resolved_ && *std::max_element(q_.begin(), q_.end()) >= remaining_) resolve();
  }
  void finish() {
    if (resolved_) return;
    q_.push_back(remaining_);
    resolve();
  }
  bool resolved() const { return resolved_; }
  std::size_t depth() const { return mode_; }

 private:
  void resolve() {
    resolved_ = true;
    mode_ = modal_depth(q_);
  }
  std::size_t depth_;
  double remaining_ = 1.0;
  std::vector<double> q_;
  bool resolved_ = false;
  std::size_t mode_ = 0;
};

template <typename Real>
Var<Real> row_var(Tape<Real>& tape, const std::vector<Real>& row) {
  return tape.constant(Tensor<Real>({1, row.size()}, row));
}

}  // namespace

template <typename Real>
DecodeStep<Real> Decoder<Real>::step(int token, std::optional<std::size_t> forced_depth) {
  const ModelConfig& c = model_.config();
  const std::size_t pos = depths_.size(), h = c.d_model, depth = c.depth;
  if (pos >= c.max_seq_len) throw ContractError("decoder: context reached max_seq_len");
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) throw ContractError("decoder: token out of vocabulary");
  if (forced_depth && (*forced_depth < 1 || *forced_depth > depth)) throw ContractError("decoder: forced depth outside 1..D");
  const bool online = c.decider == DeciderKind::online;

  std::vector<Real> x(model_.embedding.value.ptr() + static_cast<std::size_t>(token) * h,
                      model_.embedding.value.ptr() + static_cast<std::size_t>(token + 1) * h);
  std::vector<const Real*> pk(pos), pv(pos);
  for (std::size_t l = 0; l < model_.prelude.size(); ++l) {
    for (std::size_t j = 0; j < pos; ++j) {
      pk[j] = cache_.fixed_key(KvCache<Real>::Role::prelude, l, j);
      pv[j] = cache_.fixed_value(KvCache<Real>::Role::prelude, l, j);
    }
    RowLayer out = run_layer(model_.prelude[l], x, pos, pk, pv);
    cache_.append_fixed(KvCache<Real>::Role::prelude, l, std::move(out.key), std::move(out.value));
    x = std::move(out.out);
  }

  DecodeStep<Real> result;
  std::size_t target = depth;  // early: known up front
  std::optional<OnlineHalting> halting;
  std::optional<OnlineMode> mode;
  if (!online) {
    Tape<Real> tape(false);
    Var<Real> q = ops::softmax_rows(early_decider_logits(tape, model_.decider, row_var(tape, x)));
    std::vector<double> qd(q.value().data().begin(), q.value().data().end());
    target = forced_depth ? *forced_depth : modal_depth(qd);
    result.decider_evaluations = 1;
  } else if (!forced_depth) {
    if (rule_.kind == DepthRule::Kind::modal) mode.emplace(depth);
    else halting.emplace(depth, rule_.level());
  } else {
    target = *forced_depth;
  }

  cache_.begin_token();
  std::vector<std::vector<Real>> states{x};
  for (std::size_t d = 1; d <= depth; ++d) {
    if (!online || forced_depth) {
      if (d > target) break;
    } else if ((halting && halting->halted()) || (mode && mode->resolved())) {
      break;
    }
    for (std::size_t j = 0; j < pos; ++j) {
      pk[j] = cache_.recurrent_key(j, d);
      pv[j] = cache_.recurrent_value(j, d);
    }
    RowLayer out = run_layer(model_.recurrent, states.back(), pos, pk, pv);
    cache_.push_recurrent(std::move(out.key), std::move(out.value));
    states.push_back(std::move(out.out));
    ++result.iterations;
    if (online && d < depth) {
      Tape<Real> tape(false);
      const double alpha =
          static_cast<double>(online_halting(tape, model_.decider, row_var(tape, states.back())).value()[0]);
      ++result.decider_evaluations;
      if (halting) halting->step(alpha);
      if (mode) mode->step(alpha);
    }
  }
  if (halting) target = halting->exit_depth();
  if (mode) {
    mode->finish();
    target = mode->depth();
    if (target < result.iterations) cache_.truncate_newest(target);
  }
  const std::vector<Real>& z = states[target];

  x = z;
  for (std::size_t l = 0; l < model_.coda.size(); ++l) {
    for (std::size_t j = 0; j < pos; ++j) {
      pk[j] = cache_.fixed_key(KvCache<Real>::Role::coda, l, j);
      pv[j] = cache_.fixed_value(KvCache<Real>::Role::coda, l, j);
    }
    RowLayer out = run_layer(model_.coda[l], x, pos, pk, pv);
    cache_.append_fixed(KvCache<Real>::Role::coda, l, std::move(out.key), std::move(out.value));
    x = std::move(out.out);
  }
  Tape<Real> tape(false);
  Var<Real> logits = ops::matmul(ops::rms_norm(row_var(tape, x), tape.parameter(model_.final_norm)),
                                 tape.parameter(model_.lm_head));
  result.logits.assign(logits.value().data().begin(), logits.value().data().end());
  result.depth = target;
  depths_.push_back(target);
  decider_evaluations_ += result.decider_evaluations;
  return result;
}

// ------------------------------------------------------------- generation

namespace {

template <typename Real>
int argmax(std::span<const Real> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

template <typename Real>
Generation<Real> generate(Model<Real>& model, const std::vector<int>& prompt, std::size_t max_new, DepthRule rule,
                          int stop_token) {
  if (prompt.empty()) throw ContractError("generate: empty prompt");
  Decoder<Real> dec(model, rule);
  DecodeStep<Real> last;
  for (int t : prompt) last = dec.step(t);
  Generation<Real> g;
  while (g.tokens.size() < max_new) {
    const int next = argmax<Real>(last.logits);
    g.tokens.push_back(next);
    if (next == stop_token || g.tokens.size() == max_new) break;
    if (dec.depths().size() >= model.config().max_seq_len) break;
    last = dec.step(next);
  }
  g.depths = dec.depths();
  // The position that predicts generated token k is prompt.size() - 1 + k.
  for (std::size_t k = 0; k < g.tokens.size(); ++k) g.answer_depths.push_back(g.depths[prompt.size() - 1 + k]);
  g.report = ComputeReport::from_depths(g.depths, model.config().depth, dec.decider_evaluations(),
                                        decider_unit_cost(model.config()));
  return g;
}

double InstanceScore::answer_mean_depth() const {
  if (answer_depths.empty()) return 0.0;
  return static_cast<double>(std::accumulate(answer_depths.begin(), answer_depths.end(), std::size_t{0})) /
         static_cast<double>(answer_depths.size());
}

double InstanceScore::mean_depth() const {
  if (depths.empty()) return 0.0;
  return static_cast<double>(std::accumulate(depths.begin(), depths.end(), std::size_t{0})) /
         static_cast<double>(depths.size());
}

Batch make_batch(const std::vector<const TaskInstance*>& instances, int pad_id) {
  if (instances.empty()) throw ContractError("make_batch: no instances");
  Batch b;
  b.batch = instances.size();
  for (const auto* inst : instances) {
    if (inst->length() < 2) throw DataError("instance shorter than two tokens");
    b.seq = std::max(b.seq, inst->length() - 1);
  }
  const std::size_t n = b.rows();
  b.inputs.assign(n, pad_id);
  b.targets.assign(n, pad_id);
  b.answer_mask.assign(n, 0);
  b.token_mask.assign(n, 0);
  for (std::size_t s = 0; s < instances.size(); ++s) {
    const TaskInstance& inst = *instances[s];
    b.knobs.push_back(inst.knob);
    const std::size_t np = inst.prompt_ids.size(), len = inst.length();
    auto tok = [&](std::size_t i) { return i < np ? inst.prompt_ids[i] : inst.answer_ids[i - np]; };
    for (std::size_t t = 0; t + 1 < len; ++t) {
      const std::size_t row = s * b.seq + t;
      b.inputs[row] = tok(t);
      b.targets[row] = tok(t + 1);
      b.token_mask[row] = 1;
      b.answer_mask[row] = (t + 1 >= np && inst.is_supervised(t + 1 - np)) ? 1 : 0;
    }
  }
  return b;
}

template <typename Real>
InstanceScore score_generated(Model<Real>& model, const TaskInstance& inst, DepthRule rule, int stop_token) {
  if (!inst.supervised.empty()) throw ContractError("generation scoring needs fully supervised answers");
  Generation<Real> g = generate(model, inst.prompt_ids, inst.answer_ids.size(), rule, stop_token);
  InstanceScore s;
  s.correct = g.tokens == inst.answer_ids;
  s.answer_depths = g.answer_depths;
  s.depths = g.depths;
  return s;
}

namespace {

template <typename Real>
InstanceScore score_with_decoder(Model<Real>& model, const TaskInstance& inst, DepthRule rule) {
  Decoder<Real> dec(model, rule);
  InstanceScore s;
  s.correct = true;
  const std::size_t np = inst.prompt_ids.size(), len = inst.length();
  for (std::size_t t = 0; t + 1 < len; ++t) {
    const int tok = t < np ? inst.prompt_ids[t] : inst.answer_ids[t - np];
    DecodeStep<Real> st = dec.step(tok);
    if (t + 1 >= np && inst.is_supervised(t + 1 - np)) {
      s.answer_depths.push_back(st.depth);
      if (argmax<Real>(st.logits) != inst.answer_ids[t + 1 - np]) s.correct = false;
    }
  }
  s.depths = dec.depths();
  return s;
}

}  // namespace

template <typename Real>
std::vector<InstanceScore> score_teacher_forced(Model<Real>& model, const std::vector<const TaskInstance*>& instances,
                                                int pad_id, DepthRule rule, std::size_t batch_size) {
  std::vector<InstanceScore> scores;
  scores.reserve(instances.size());
  const bool online = model.config().decider == DeciderKind::online;
  if (online && rule.kind == DepthRule::Kind::modal) {
    for (const auto* inst : instances) scores.push_back(score_with_decoder(model, *inst, rule));
    return scores;
  }
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < instances.size(); start += batch_size) {
    std::vector<const TaskInstance*> chunk(instances.begin() + static_cast<std::ptrdiff_t>(start),
                                           instances.begin() + static_cast<std::ptrdiff_t>(std::min(instances.size(), start + batch_size)));
    Batch b = make_batch(chunk, pad_id);
    Tape<Real> tape(false);
    ForwardTrace<Real> tr = forward(model, tape, b, ForwardOptions::infer(rule));
    const auto& logits = tr.logits.value();
    for (std::size_t s = 0; s < chunk.size(); ++s) {
      InstanceScore sc;
      sc.correct = true;
      const std::size_t len = chunk[s]->length();
      for (std::size_t t = 0; t + 1 < len; ++t) {
        const std::size_t row = s * b.seq + t;
        sc.depths.push_back(tr.depths[row]);
        if (!b.answer_mask[row]) continue;
        sc.answer_depths.push_back(tr.depths[row]);
        if (argmax<Real>(logits.row(row)) != b.targets[row]) sc.correct = false;
      }
      scores.push_back(std::move(sc));
    }
  }
  return scores;
}

template <typename Real>
std::vector<SweepPoint> threshold_sweep(Model<Real>& model, const std::vector<const TaskInstance*>& instances,
                                        int pad_id, const std::vector<double>& thresholds, std::size_t batch_size) {
  if (model.config().decider != DeciderKind::online) throw ContractError("threshold sweep requires the online decider");
  if (instances.empty()) throw ContractError("threshold sweep: no instances");
  std::vector<SweepPoint> points;
  for (double c : thresholds) {
    if (!(c > 0.0 && c <= 1.0)) throw ContractError("threshold sweep: thresholds must lie in (0, 1]");
    auto scores = score_teacher_forced(model, instances, pad_id, DepthRule::at_threshold(c), batch_size);
    SweepPoint p;
    p.threshold = c;
    p.instances = scores.size();
    for (const auto& s : scores) {
      p.accuracy += s.correct ? 1.0 : 0.0;
      p.mean_depth += s.answer_mean_depth();
    }
    p.accuracy /= static_cast<double>(scores.size());
    p.mean_depth /= static_cast<double>(scores.size());
    points.push_back(p);
  }
  return points;
}

#define ANIRA_INSTANTIATE_INFERENCE(R)                                                                              \
  template class KvCache<R>;                                                                                        \
  template class Decoder<R>;                                                                                        \
  template Generation<R> generate(Model<R>&, const std::vector<int>&, std::size_t, DepthRule, int);                 \
  template InstanceScore score_generated(Model<R>&, const TaskInstance&, DepthRule, int);                           \
  template std::vector<InstanceScore> score_teacher_forced(Model<R>&, const std::vector<const TaskInstance*>&, int, \
                                                           DepthRule, std::size_t);                                 \
  template std::vector<SweepPoint> threshold_sweep(Model<R>&, const std::vector<const TaskInstance*>&, int,         \
                                                   const std::vector<double>&, std::size_t);

ANIRA_INSTANTIATE_INFERENCE(float)
ANIRA_INSTANTIATE_INFERENCE(double)

}  // namespace anira
