// SPDX-License-Identifier: Apache-2.0
#include "anira/tasks/mano.hpp"

#include "anira/error.hpp"
#include "anira/rng.hpp"

namespace anira::mano {

namespace {

const char* const kOperators[] = {"+", "-", "*"};

/// Catalan numbers up to C(40); shapes of binary trees with n internal nodes.
double catalan(int n) {
  static std::vector<double> table = [] {
    std::vector<double> c(41, 0.0);
    c[0] = 1.0;
    for (int i = 1; i <= 40; ++i)
      for (int k = 0; k < i; ++k) c[i] += c[k] * c[i - 1 - k];
    return c;
  }();
  if (n < 0 || n > 40) throw ContractError("MANO supports at most 40 operators");
  return table[n];
}

void emit(int operators, Rng& rng, std::vector<std::string>& out) {
  if (operators == 0) {
    out.push_back(std::to_string(rng.integer(0, kModulus - 1)));
    return;
  }
  out.emplace_back(kOperators[rng.integer(0, 2)]);
  // Left subtree size k with probability C(k) C(n-1-k) / C(n) gives a uniform shape.
  const int rest = operators - 1;
  double u = rng.uniform() * catalan(operators);
  int k = 0;
  for (; k < rest; ++k) {
    u -= catalan(k) * catalan(rest - k);
    if (u < 0.0) break;
  }
  emit(k, rng, out);
  emit(rest - k, rng, out);
}

int apply(const std::string& op, int a, int b) {
  int r = 0;
  if (op == "+") r = a + b;
  else if (op == "-") r = a - b;
  else r = a * b;
  r %= kModulus;
  return r < 0 ? r + kModulus : r;
}

int parse_operand(const std::string& token) {
  if (token.empty() || token.size() > 2) throw ParseError("bad MANO operand '" + token + "'");
  for (char c : token)
    if (c < '0' || c > '9') throw ParseError("bad MANO operand '" + token + "'");
  const int v = std::stoi(token);
  if (v >= kModulus) throw ParseError("MANO operand out of range: " + token);
  return v;
}

struct Frame {
  std::string op;
  int left = 0;
  bool has_left = false;
};

template <typename OnReduce>
int run_stack(const std::vector<std::string>& expr, OnReduce&& on_reduce) {
  if (expr.empty()) throw ParseError("empty MANO expression");
  std::vector<Frame> stack;
  for (std::size_t i = 0; i < expr.size(); ++i) {
    const std::string& t = expr[i];
    if (is_operator(t)) {
      stack.push_back({t});
      continue;
    }
    int value = parse_operand(t);
    // Fold completed operators upward until one still waits for its right operand.
    while (true) {
      if (stack.empty()) {
        if (i + 1 != expr.size()) throw ParseError("MANO expression has trailing tokens");
        return value;
      }
      Frame& top = stack.back();
      if (!top.has_left) {
        top.left = value;
        top.has_left = true;
        break;
      }
      value = apply(top.op, top.left, value);
      on_reduce();
      stack.pop_back();
    }
  }
  throw ParseError("MANO expression is incomplete");
}

}  // namespace

const Vocabulary& vocabulary() {
  static const Vocabulary vocab = [] {
    Vocabulary v;
    for (auto* op : kOperators) v.add(op);
    for (int i = 0; i < kModulus; ++i) v.add(std::to_string(i));
    return v;
  }();
  return vocab;
}

bool is_operator(const std::string& token) { return token == "+" || token == "-" || token == "*"; }

std::vector<std::string> random_expression(int operators, std::uint64_t seed) {
  if (operators < 0) throw ContractError("MANO operator count must be non-negative");
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(2 * static_cast<std::size_t>(operators) + 1);
  emit(operators, rng, out);
  return out;
}

int evaluate(const std::vector<std::string>& expression) {
  return run_stack(expression, [] {});
}

int operator_count(const std::vector<std::string>& expression) {
  int n = 0;
  run_stack(expression, [&] { ++n; });
  return n;
}

TaskInstance generate(int operators, std::uint64_t seed) {
  if (operators < 1) throw ContractError("MANO generation needs L >= 1");
  const Vocabulary& v = vocabulary();
  auto expr = random_expression(operators, seed);
  const int value = evaluate(expr);
  TaskInstance inst;
  inst.task = TaskId::mano;
  inst.knob = operators;
  inst.seed = seed;
  inst.prompt_ids.push_back(v.bos());
  for (const auto& t : expr) inst.prompt_ids.push_back(v.id(t));
  inst.prompt_ids.push_back(v.ans());
  inst.answer_ids = {v.id(std::to_string(value)), v.eoa()};
  std::string text;
  for (const auto& t : expr) text += (text.empty() ? "" : " ") + t;
  inst.payload = {{"expression", text}, {"value", value}};
  return inst;
}

}  // namespace anira::mano
