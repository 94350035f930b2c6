// SPDX-License-Identifier: Apache-2.0
#include "anira/training.hpp"

#include <algorithm>

#include "anira/inference.hpp"

namespace anira {

using nlohmann::json;

void TrainConfig::validate() const {
  ANIRA_REQUIRE(lr > 0.0, "lr must be positive");
  ANIRA_REQUIRE(batch_size > 0, "batch_size must be positive");
  ANIRA_REQUIRE(gamma >= 0.0, "gamma must be non-negative");
  ANIRA_REQUIRE(prior_base >= 1.0, "prior base must be >= 1");
  ANIRA_REQUIRE(log_every > 0, "log_every must be positive");
  ANIRA_REQUIRE(eval_batch > 0, "eval_batch must be positive");
}

json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"warmup", c.warmup},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"gamma", c.gamma},
          {"prior_base", c.prior_base},
          {"max_grad_norm", c.max_grad_norm},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"weight_decay", c.adam.weight_decay},
          {"log_every", c.log_every},
          {"eval_every", c.eval_every},
          {"eval_batch", c.eval_batch},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed},
          {"eval_rule", c.eval_rule.name()}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.lr = j.at("lr").get<double>();
    c.warmup = j.at("warmup").get<std::size_t>();
    c.steps = j.at("steps").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.gamma = j.at("gamma").get<double>();
    c.prior_base = j.at("prior_base").get<double>();
    c.max_grad_norm = j.at("max_grad_norm").get<double>();
    c.adam.beta1 = j.at("beta1").get<double>();
    c.adam.beta2 = j.at("beta2").get<double>();
    c.adam.eps = j.at("adam_eps").get<double>();
    c.adam.weight_decay = j.at("weight_decay").get<double>();
    c.log_every = j.at("log_every").get<std::size_t>();
    c.eval_every = j.at("eval_every").get<std::size_t>();
    c.eval_batch = j.at("eval_batch").get<std::size_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.eval_rule = DepthRule::parse(j.at("eval_rule").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

namespace {

json knobs_to_json(const std::map<int, KnobStats>& knobs) {
  json out = json::object();
  for (const auto& [k, s] : knobs) {
    out[std::to_string(k)] = {{"count", s.count}, {"accuracy", s.accuracy()}, {"d_bar", s.mean_depth()}};
  }
  return out;
}

}  // namespace

json StepMetrics::to_json() const {
  return {{"step", step},
          {"lr", lr},
          {"L", loss.total},
          {"L_CE", loss.cross_entropy},
          {"L_C", loss.regularizer},
          {"gamma", loss.gamma},
          {"mean_expected_depth", loss.mean_expected_depth},
          {"mean_entropy", loss.mean_entropy},
          {"grad_norm", grad_norm},
          {"knobs", knobs_to_json(knobs)}};
}

double EvalReport::accuracy() const {
  std::size_t n = 0, c = 0;
  for (const auto& [k, s] : knobs) n += s.count, c += s.correct;
  return n ? static_cast<double>(c) / static_cast<double>(n) : 0.0;
}

double EvalReport::mean_depth() const {
  std::size_t n = 0;
  double d = 0.0;
  for (const auto& [k, s] : knobs) n += s.count, d += s.depth_sum;
  return n ? d / static_cast<double>(n) : 0.0;
}

json EvalReport::to_json() const {
  return {{"step", step}, {"accuracy", accuracy()}, {"d_bar", mean_depth()}, {"knobs", knobs_to_json(knobs)}};
}

template <typename Real>
Trainer<Real>::Trainer(Model<Real>& model, TrainConfig config, const Dataset& train)
    : model_(model),
      config_(config),
      train_(train),
      pad_id_(train.vocab.pad()),
      prior_(DepthPrior::exponential(config.prior_base, model.config().depth)),
      optimizer_(model.parameters(), config.adam),
      data_rng_(Rng::stream(config.seed, "data")),
      gumbel_rng_(Rng::stream(config.seed, "gumbel")) {
  config_.validate();
  if (train.instances.empty()) throw DataError("training dataset is empty");
  if (train.vocab.size() != model.config().vocab_size) {
    throw DataError("dataset vocabulary has " + std::to_string(train.vocab.size()) + " tokens, model expects " +
                    std::to_string(model.config().vocab_size));
  }
  for (const auto& inst : train.instances) {
    if (inst.length() - 1 > model.config().max_seq_len) {
      throw DataError("training instance longer than max_seq_len (" + std::to_string(inst.length() - 1) + ")");
    }
  }
}

template <typename Real>
StepMetrics Trainer<Real>::step() {
  std::vector<const TaskInstance*> picked(config_.batch_size);
  const auto n = static_cast<std::int64_t>(train_.instances.size());
  for (auto& p : picked) p = &train_.instances[static_cast<std::size_t>(data_rng_.integer(0, n - 1))];
  const Batch batch = make_batch(picked, pad_id_);
  batch.validate(model_.config().vocab_size, model_.config().max_seq_len);

  Tape<Real> tape;
  ForwardTrace<Real> trace = forward(model_, tape, batch, ForwardOptions::train(gumbel_rng_));
  Loss<Real> loss = compute_loss(tape, trace, batch, prior_, config_.gamma);
  model_.zero_grad();
  tape.backward(loss.total);

  StepMetrics m;
  m.step = ++step_;
  m.lr = lr_schedule(step_, config_.warmup, config_.lr);
  m.loss = loss.report;
  m.grad_norm = clip_grad_norm(model_.parameters(), config_.max_grad_norm);
  optimizer_.step(m.lr);

  const auto& logits = trace.logits.value();
  for (std::size_t s = 0; s < batch.batch; ++s) {
    bool correct = true;
    std::size_t answers = 0, depth = 0;
    for (std::size_t t = 0; t < batch.seq; ++t) {
      const std::size_t row = s * batch.seq + t;
      if (!batch.answer_mask[row]) continue;
      auto r = logits.row(row);
      const int pred = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
      correct = correct && pred == batch.targets[row];
      ++answers;
      depth += trace.depths[row];
    }
    KnobStats& k = m.knobs[batch.knobs[s]];
    ++k.count;
    k.correct += correct ? 1 : 0;
    k.depth_sum += answers ? static_cast<double>(depth) / static_cast<double>(answers) : 0.0;
  }
  return m;
}

template <typename Real>
EvalReport Trainer<Real>::evaluate(const std::vector<const TaskInstance*>& instances) {
  EvalReport report;
  report.step = step_;
  if (instances.empty()) return report;
  const auto scores = score_teacher_forced(model_, instances, pad_id_, config_.eval_rule, config_.eval_batch);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    KnobStats& k = report.knobs[instances[i]->knob];
    ++k.count;
    k.correct += scores[i].correct ? 1 : 0;
    k.depth_sum += scores[i].answer_mean_depth();
  }
  return report;
}

template <typename Real>
Checkpoint Trainer<Real>::checkpoint(json extra) {
  extra["step"] = step_;
  extra["train"] = train_config_to_json(config_);
  extra["rng"] = {{"data", data_rng_.state()}, {"gumbel", gumbel_rng_.state()}};
  extra["vocab"] = train_.vocab.tokens();
  extra["vocab_version"] = train_.vocab.version();
  extra["task"] = to_string(train_.task);
  return make_checkpoint(model_, &optimizer_, std::move(extra));
}

template <typename Real>
void Trainer<Real>::restore(const Checkpoint& ckp) {
  if (ckp.header.value("vocab_version", std::string()) != train_.vocab.version()) {
    throw DataError("checkpoint vocabulary does not match the training dataset");
  }
  restore_parameters(ckp, model_);
  restore_optimizer(ckp, model_, optimizer_);
  try {
    step_ = ckp.header.at("step").get<std::size_t>();
    data_rng_.set_state(ckp.header.at("rng").at("data").get<std::string>());
    gumbel_rng_.set_state(ckp.header.at("rng").at("gumbel").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint lacks training state: ") + e.what());
  }
}

template class Trainer<float>;
template class Trainer<double>;

}  // namespace anira
