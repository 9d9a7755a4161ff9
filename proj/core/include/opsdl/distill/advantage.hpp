#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opsdl/nn/model.hpp"
#include "opsdl/nn/sampling.hpp"
#include "opsdl/taskgen/corpus.hpp"

namespace opsdl::distill {

using nn::ModelState;
using nn::Rollout;
using nn::TokenSeq;
using taskgen::Triplet;

// ln(1e-12). Log-probabilities are clamped here before forming ratios.
inline constexpr double kLogProbFloor = -27.631021115928547;
// |A_t| at or below this many nats is reported as near-zero.
inline constexpr double kNearZeroThreshold = 0.05;

double floor_logprob(double lp);

// C_L ++ Q and C_S ++ Q
TokenSeq student_prompt(const Triplet& t);
TokenSeq teacher_prompt(const Triplet& t);

// log π_θ(y_t | C_S, Q, y_<t) with the floor applied, using `state` as is:
// the teacher is the current parameters, not a snapshot.
std::vector<double> teacher_logprobs(const ModelState& state, const Triplet& t,
                                     std::span<const nn::TokenId> response);
// log π_θ(y_t | C_L, Q, y_<t), floored.
std::vector<double> student_logprobs(const ModelState& state, const Triplet& t,
                                     std::span<const nn::TokenId> response);

struct AdvantageVector {
  std::vector<double> values;  // A_t
  std::vector<double> teacher_logps;
  std::vector<double> student_logps;
};

// A_t = teacher_t − student_t, optionally clamped to [−clip, clip].
AdvantageVector compute_advantages(std::span<const double> teacher_logps,
                                   std::span<const double> student_logps,
                                   std::optional<double> clip = std::nullopt);

enum class Bucket { positive, negative, near_zero };
Bucket bucket_of(double advantage);
std::string bucket_name(Bucket b);

struct AdvantageRow {
  std::size_t index = 0;
  nn::TokenId token = 0;
  double student_logp = 0.0;
  double teacher_logp = 0.0;
  double advantage = 0.0;
  Bucket bucket = Bucket::near_zero;
};

std::vector<AdvantageRow> advantage_report(const ModelState& state, const Triplet& t,
                                           const Rollout& rollout);

// Header: index,token_id,token,student_logp,teacher_logp,advantage,bucket
std::string advantage_csv(const std::vector<AdvantageRow>& rows, const taskgen::Vocabulary& vocab);

}  // namespace opsdl::distill
