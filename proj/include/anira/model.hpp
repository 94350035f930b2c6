// SPDX-License-Identifier: Apache-2.0
//
// Prelude / recurrent core / coda decoder with a per-token exit-depth
// decider. The recurrent block is one decoder layer whose weights are reused
// at every iteration; tokens whose exit depth has been reached are frozen by
// the passthrough gate while the unroll itself always runs D iterations.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "anira/autodiff.hpp"
#include "anira/exit_depth.hpp"
#include "anira/kernels.hpp"
#include "anira/rng.hpp"

namespace anira {

enum class DeciderKind { early, online };

std::string to_string(DeciderKind kind);
DeciderKind parse_decider_kind(const std::string& text);

struct ModelConfig {
  std::size_t depth = 6;  // D
  std::size_t n_heads = 4;
  std::size_t n_prelude_layers = 1;
  std::size_t n_coda_layers = 1;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t decider_d_ff = 0;  // 0 selects 4 * d_model
  std::size_t max_seq_len = 128;
  std::size_t vocab_size = 0;
  DeciderKind decider = DeciderKind::early;
  double gumbel_tau = 1.0;
  double init_std = 0.02;
  std::string precision = "float32";
  std::uint64_t seed = 0;

  std::size_t decider_hidden() const { return decider_d_ff ? decider_d_ff : 4 * d_model; }
  void validate() const;
};

/// One pre-norm decoder layer: RMSNorm, rotary multi-head attention, RMSNorm,
/// SiLU-gated feed-forward; no biases.
template <typename Real>
struct DecoderLayer {
  Parameter<Real> attn_norm, wq, wk, wv, wo;
  Parameter<Real> ffn_norm, w_gate, w_up, w_down;

  void collect(std::vector<Parameter<Real>*>& out) {
    for (auto* p : {&attn_norm, &wq, &wk, &wv, &wo, &ffn_norm, &w_gate, &w_up, &w_down}) out.push_back(p);
  }
};

/// Decider head: RMSNorm with affine scale, H -> I without bias, SiLU,
/// I -> out with bias. out = D (early) or 1 (online).
template <typename Real>
struct DeciderHead {
  Parameter<Real> norm, w1, w2, b2;

  void collect(std::vector<Parameter<Real>*>& out) {
    for (auto* p : {&norm, &w1, &w2, &b2}) out.push_back(p);
  }
};

template <typename Real>
class Model {
 public:
  explicit Model(ModelConfig config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  /// Every trainable tensor, in a fixed order that checkpoints rely on.
  std::vector<Parameter<Real>*> parameters();
  std::vector<const Parameter<Real>*> parameters() const;
  Parameter<Real>* find(const std::string& name);
  std::size_t parameter_count() const;
  std::size_t decider_parameter_count() const;
  void zero_grad();

  Parameter<Real> embedding, final_norm, lm_head;
  std::vector<DecoderLayer<Real>> prelude;
  DecoderLayer<Real> recurrent;
  std::vector<DecoderLayer<Real>> coda;
  DeciderHead<Real> decider;

  const kernels::RopeTable<Real>& rope() const { return rope_; }

 private:
  ModelConfig config_;
  kernels::RopeTable<Real> rope_;
};

/// Right-padded batch of equal-length rows. Row r of sequence b is index
/// b * seq + r in every per-row vector.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> inputs;
  std::vector<int> targets;               // next-token ids; ignored where answer_mask == 0
  std::vector<std::uint8_t> answer_mask;  // rows scored by cross-entropy
  std::vector<std::uint8_t> token_mask;   // non-pad rows
  std::vector<int> knobs;                 // one per sequence

  std::size_t rows() const { return batch * seq; }
  void validate(std::size_t vocab_size, std::size_t max_seq_len) const;
};

struct ForwardOptions {
  enum class Sampling { stochastic, rule };
  Sampling sampling = Sampling::stochastic;
  DepthRule rule = DepthRule::modal();
  GateMode gate_mode = GateMode::straight_through;
  /// Test hook: fixed exit depth per row, overriding the decider's choice.
  std::optional<std::vector<std::size_t>> forced_depths;
  /// Test hook: Gumbel noise forced to zero.
  bool zero_noise = false;
  Rng* rng = nullptr;

  static ForwardOptions train(Rng& rng) {
    ForwardOptions o;
    o.rng = &rng;
    return o;
  }
  static ForwardOptions infer(DepthRule rule) {
    ForwardOptions o;
    o.sampling = Sampling::rule;
    o.rule = rule;
    return o;
  }
};

template <typename Real>
struct ForwardTrace {
  std::vector<Var<Real>> states;  // h^(0) .. h^(D)
  Var<Real> exit_states;          // z = h^(D), equal to h^(d*) per row
  Var<Real> logits;               // [N x V]
  Var<Real> exit_probs;           // q [N x D]
  Var<Real> decider_logits;       // early: mean-centred logits [N x D]
  std::vector<Var<Real>> alphas;  // online: alpha^(1..D-1), each [N x 1]
  std::vector<std::size_t> depths;
  std::vector<std::size_t> decider_evaluations;  // per row, counted on active tokens

  ExitDepthDistribution distribution(std::size_t row) const;
  /// Activity gate a^(d) of a row, d in 1..D.
  bool active(std::size_t row, std::size_t d) const { return d <= depths[row]; }
};

/// Output of one decoder layer; k and v are the (pre-rotary) key/value
/// projections actually attended to, after gating.
template <typename Real>
struct LayerOutput {
  Var<Real> out, k, v;
};

/// Keys/values of frozen rows are held at their last active iteration.
template <typename Real>
struct KvGate {
  Var<Real> prev_k, prev_v;
  std::span<const std::uint8_t> active;
};

template <typename Real>
LayerOutput<Real> layer_forward(Tape<Real>& tape, DecoderLayer<Real>& layer, const Var<Real>& x, std::size_t batch,
                                std::size_t seq, std::size_t heads, const kernels::RopeTable<Real>& rope,
                                const KvGate<Real>* gate = nullptr);

/// Early decider: mean-centred depth logits [N x D].
template <typename Real>
Var<Real> early_decider_logits(Tape<Real>& tape, DeciderHead<Real>& head, const Var<Real>& h0);
/// Online decider: halting probability alpha [N x 1].
template <typename Real>
Var<Real> online_halting(Tape<Real>& tape, DeciderHead<Real>& head, const Var<Real>& h);

/// Full unrolled forward pass. Always executes D recurrent iterations.
template <typename Real>
ForwardTrace<Real> forward(Model<Real>& model, Tape<Real>& tape, const Batch& batch, const ForwardOptions& options);

}  // namespace anira
