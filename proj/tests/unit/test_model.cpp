// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "anira/error.hpp"
#include "anira/objective.hpp"
#include "anira/pcfg/grammar.hpp"
#include "anira/tasks/graph_tasks.hpp"
#include "anira/tasks/lano.hpp"
#include "anira/tasks/mano.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

using namespace anira;
using namespace anira::testing;

TEST_CASE("config validation") {
  ModelConfig c = small_config(DeciderKind::early);
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = small_config(DeciderKind::early);
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  CHECK_THROWS_AS(parse_decider_kind("late"), ContractError);
}

TEST_CASE("shapes and length errors") {
  Model<double> model(small_config(DeciderKind::early));
  Rng rng(1);
  Tape<double> tape(false);
  auto tr = forward(model, tape, random_batch(rng, 1, 1, 13), ForwardOptions::infer(DepthRule::modal()));
  CHECK(tr.states[0].rows() == 1);
  CHECK(tr.states[0].cols() == 16);
  CHECK(tr.states.size() == 5);
  CHECK(tr.logits.cols() == 13);
  Tape<double> t2(false);
  CHECK_THROWS_AS(forward(model, t2, random_batch(rng, 1, 25, 13), ForwardOptions::infer(DepthRule::modal())),
                  ContractError);
}

TEST_CASE("recurrent block shares one set of weights") {
  Model<double> model(small_config(DeciderKind::online));
  std::size_t recurrent = 0;
  for (auto* p : model.parameters())
    if (p->name.rfind("recurrent.", 0) == 0) ++recurrent;
  CHECK(recurrent == 9);
  Tape<double> tape;
  CHECK(tape.parameter(model.recurrent.wq).id() == tape.parameter(model.recurrent.wq).id());
}

TEST_CASE("causality across every iteration") {
  for (auto kind : {DeciderKind::early, DeciderKind::online}) {
    Model<double> model(small_config(kind));
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      Batch a = random_batch(rng, 1, 12, 13), b = a;
      for (std::size_t r = 7; r < 12; ++r) b.inputs[r] = static_cast<int>(rng.integer(0, 12));
      const auto depths = random_depths(rng, 12, 4);
      Tape<double> ta(false), tb(false);
      auto fa = forward(model, ta, a, forced(depths));
      auto fb = forward(model, tb, b, forced(depths));
      for (std::size_t d = 0; d < fa.states.size(); ++d) CHECK(max_abs_diff(fa.states[d].value(), fb.states[d].value(), 0, 7) == 0.0);
      CHECK(max_abs_diff(fa.logits.value(), fb.logits.value(), 0, 7) == 0.0);
      if (kind == DeciderKind::early) {
        Tape<double> tc(false), td(false);
        auto ia = forward(model, tc, a, ForwardOptions::infer(DepthRule::modal()));
        auto ib = forward(model, td, b, ForwardOptions::infer(DepthRule::modal()));
        for (std::size_t r = 0; r < 7; ++r) CHECK(ia.depths[r] == ib.depths[r]);
      } else {
        Tape<double> tc(false), td(false);
        auto ia = forward(model, tc, a, ForwardOptions::infer(DepthRule::median()));
        auto ib = forward(model, td, b, ForwardOptions::infer(DepthRule::median()));
        for (std::size_t r = 0; r < 7; ++r) CHECK(ia.depths[r] == ib.depths[r]);
      }
    }
  }
}

TEST_CASE("all-active unroll equals repeated application of the block") {
  Model<double> model(small_config(DeciderKind::early));
  Rng rng(8);
  Batch b = random_batch(rng, 2, 6, 13);
  Tape<double> tape(false);
  auto tr = forward(model, tape, b, forced(std::vector<std::size_t>(b.rows(), 4)));
  const auto& c = model.config();
  Var<double> h = tr.states[0];
  for (std::size_t d = 1; d <= 4; ++d) {
    h = layer_forward(tape, model.recurrent, h, b.batch, b.seq, c.n_heads, model.rope()).out;
    CHECK(max_abs_diff(h.value(), tr.states[d].value()) < 1e-12);
  }
}

TEST_CASE("passthrough freezing is bitwise") {
  for (auto kind : {DeciderKind::early, DeciderKind::online}) {
    Model<float> model(small_config(kind, 6));
    Rng rng(21);
    for (int trial = 0; trial < 5; ++trial) {
      Batch b = random_batch(rng, 3, 9, 13);
      Tape<float> tape(false);
      auto depths = random_depths(rng, b.rows(), 6);
      auto tr = forward(model, tape, b, forced(depths));
      for (std::size_t r = 0; r < b.rows(); ++r) {
        for (std::size_t d = depths[r] + 1; d <= 6; ++d)
          CHECK(rows_identical(tr.states[d].value(), tr.states[depths[r]].value(), r));
        CHECK(rows_identical(tr.exit_states.value(), tr.states[depths[r]].value(), r));
        for (std::size_t d = 2; d <= 6; ++d) CHECK(tr.active(r, d) <= tr.active(r, d - 1));
        CHECK(tr.active(r, 1));
      }
      // Unforced runs as well.
      Rng noise(trial);
      Tape<float> t2(false);
      auto tr2 = forward(model, t2, b, ForwardOptions::train(noise));
      for (std::size_t r = 0; r < b.rows(); ++r)
        CHECK(rows_identical(tr2.exit_states.value(), tr2.states[tr2.depths[r]].value(), r));
    }
  }
}

TEST_CASE("exit-depth distributions are valid after forward") {
  for (auto kind : {DeciderKind::early, DeciderKind::online}) {
    Model<double> model(small_config(kind, 5));
    Rng rng(4);
    Tape<double> tape(false);
    Rng noise(1);
    auto tr = forward(model, tape, random_batch(rng, 2, 10, 13), ForwardOptions::train(noise));
    for (std::size_t r = 0; r < 20; ++r) {
      auto d = tr.distribution(r);
      CHECK_NOTHROW(d.validate(1e-9));
      CHECK(tr.depths[r] >= 1);
      CHECK(tr.depths[r] <= 5);
    }
    if (kind == DeciderKind::early) {
      const auto& s = tr.decider_logits.value();
      for (std::size_t r = 0; r < 20; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 5; ++c) sum += s.at(r, c);
        CHECK(std::abs(sum) < 1e-12);
      }
    } else {
      for (const auto& a : tr.alphas)
        for (double v : a.value().data()) {
          CHECK(v > 0.0);
          CHECK(v < 1.0);
        }
    }
  }
}

TEST_CASE("online decider with zero output weights halts at one half") {
  Model<double> model(small_config(DeciderKind::online, 3));
  model.decider.w2.value.fill(0.0);
  model.decider.b2.value.fill(0.0);
  Rng rng(2);
  Tape<double> tape(false);
  auto tr = forward(model, tape, random_batch(rng, 1, 4, 13), ForwardOptions::infer(DepthRule::median()));
  for (const auto& a : tr.alphas)
    for (double v : a.value().data()) CHECK(v == 0.5);
  for (std::size_t d : tr.depths) CHECK(d == 1);
  // Only the first iteration is executed for active tokens.
  for (std::size_t e : tr.decider_evaluations) CHECK(e == 1);
  Tape<double> t2(false);
  auto th = forward(model, t2, random_batch(rng, 1, 4, 13), ForwardOptions::infer(DepthRule::at_threshold(0.9)));
  for (std::size_t d : th.depths) CHECK(d == 3);
}

TEST_CASE("early decider with equal logits gives a uniform q") {
  Model<double> model(small_config(DeciderKind::early, 4));
  model.decider.w2.value.fill(0.0);
  model.decider.b2.value.fill(1.5);
  Rng rng(2);
  Tape<double> tape(false);
  auto tr = forward(model, tape, random_batch(rng, 1, 3, 13), ForwardOptions::infer(DepthRule::modal()));
  for (double v : tr.exit_probs.value().data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("D = 1 reduces to a plain stack") {
  for (auto kind : {DeciderKind::early, DeciderKind::online}) {
    Model<double> model(small_config(kind, 1));
    Rng rng(6), noise(2);
    Tape<double> tape(false);
    auto tr = forward(model, tape, random_batch(rng, 2, 5, 13), ForwardOptions::train(noise));
    for (std::size_t d : tr.depths) CHECK(d == 1);
    for (std::size_t r = 0; r < 10; ++r) CHECK(tr.distribution(r).q == std::vector<double>{1.0});
  }
}

TEST_CASE("threshold rule requires the online decider") {
  Model<double> model(small_config(DeciderKind::early));
  Rng rng(2);
  Tape<double> tape(false);
  CHECK_THROWS_AS(forward(model, tape, random_batch(rng, 1, 3, 13), ForwardOptions::infer(DepthRule::at_threshold(0.5))),
                  ContractError);
}

TEST_CASE("train and infer agree once depths are fixed") {
  for (auto kind : {DeciderKind::early, DeciderKind::online}) {
    Model<float> model(small_config(kind, 6, 13));
    Rng rng(17);
    const DepthRule rule = kind == DeciderKind::early ? DepthRule::modal() : DepthRule::median();
    for (int trial = 0; trial < 5; ++trial) {
      Batch b = random_batch(rng, 2, 11, 13);
      Tape<float> ti(false);
      auto inf = forward(model, ti, b, ForwardOptions::infer(rule));
      Rng noise(trial);
      ForwardOptions train = ForwardOptions::train(noise);
      train.forced_depths = inf.depths;
      Tape<float> tt;
      auto tr = forward(model, tt, b, train);
      CHECK(tr.depths == inf.depths);
      CHECK(max_abs_diff(tr.exit_states.value(), inf.exit_states.value()) <= 1e-6);
    }
  }
}

TEST_CASE("loss composition") {
  Model<double> model(small_config(DeciderKind::early, 4));
  Rng rng(5), noise(9);
  Batch b = random_batch(rng, 2, 6, 13);
  auto prior = DepthPrior::exponential(1.25, 4);
  Tape<double> t0;
  auto tr0 = forward(model, t0, b, ForwardOptions::train(noise));
  auto l0 = compute_loss(t0, tr0, b, prior, 0.0);
  CHECK(l0.total.value()[0] == l0.cross_entropy.value()[0]);
  CHECK(l0.report.total == l0.report.cross_entropy);
  Tape<double> t1;
  auto tr1 = forward(model, t1, b, ForwardOptions::train(noise));
  auto l1 = compute_loss(t1, tr1, b, prior, 0.3);
  CHECK(std::abs(l1.report.total - (l1.report.cross_entropy + 0.3 * l1.report.regularizer)) < 1e-9);
  CHECK(l1.report.regularizer >= 0.0);
}

TEST_CASE("decider parameter budget of shipped configs") {
  const std::size_t vocabs[] = {mano::vocabulary().size(), brevo::vocabulary().size(), depo::vocabulary().size(),
                                 lano::vocabulary(pcfg::Grammar::default_grammar()).size()};
  for (auto kind : {DeciderKind::early, DeciderKind::online})
    for (std::size_t vocab : vocabs)
      for (std::size_t depth : {std::size_t{6}, std::size_t{8}}) {
        ModelConfig c;
        c.depth = depth;
        c.vocab_size = vocab;
        c.decider = kind;
        Model<float> model(c);
        const double share = static_cast<double>(model.decider_parameter_count()) / model.parameter_count();
        CHECK(std::abs(share - 0.08) <= 0.03);
      }
}

TEST_CASE("golden forward checksum") {
  ModelConfig c = small_config(DeciderKind::early, 4, 1234);
  Model<double> model(c);
  Batch b;
  b.batch = 1;
  b.seq = 8;
  for (int i = 0; i < 8; ++i) {
    b.inputs.push_back((i * 5 + 3) % 13);
    b.targets.push_back(0);
    b.answer_mask.push_back(1);
    b.token_mask.push_back(1);
  }
  b.knobs = {0};
  Tape<double> tape(false);
  auto tr = forward(model, tape, b, ForwardOptions::infer(DepthRule::modal()));
  double prelude = 0.0, logits = 0.0;
  for (std::size_t i = 0; i < tr.states[0].value().size(); ++i) prelude += tr.states[0].value()[i] * static_cast<double>(i % 7 + 1);
  for (std::size_t i = 0; i < tr.logits.value().size(); ++i) logits += tr.logits.value()[i] * static_cast<double>(i % 5 + 1);
  // Recorded from the first verified build.
  CHECK(prelude == doctest::Approx(40.677238245044073).epsilon(1e-9));
  CHECK(logits == doctest::Approx(61.134323150344258).epsilon(1e-9));
}
