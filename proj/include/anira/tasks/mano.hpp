// SPDX-License-Identifier: Apache-2.0
//
// Modular arithmetic over prefix expressions: operators {+, -, *}, operands
// 0..22, value taken modulo 23. The operator count L is the difficulty knob.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anira/tasks/task.hpp"

namespace anira::mano {

inline constexpr int kModulus = 23;

/// <pad> <bos> <ans> <eoa>, the operators, then the operands "0".."22".
const Vocabulary& vocabulary();

bool is_operator(const std::string& token);

/// Uniformly random expression shape with exactly L binary operators.
std::vector<std::string> random_expression(int operators, std::uint64_t seed);

/// Left-to-right stack evaluation; throws ParseError on malformed input.
int evaluate(const std::vector<std::string>& expression);
/// Number of operator reductions performed by evaluate().
int operator_count(const std::vector<std::string>& expression);

/// <bos> expression <ans> | value <eoa>
TaskInstance generate(int operators, std::uint64_t seed);

}  // namespace anira::mano
