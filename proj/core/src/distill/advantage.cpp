#include "opsdl/distill/advantage.hpp"

#include <algorithm>
#include <cmath>

#include "opsdl/error.hpp"
#include "opsdl/format.hpp"
#include "opsdl/nn/transformer.hpp"

namespace opsdl::distill {

double floor_logprob(double lp) { return std::max(lp, kLogProbFloor); }

namespace {

TokenSeq join(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<double> floored_scores(const ModelState& state, const TokenSeq& prompt,
                                   std::span<const nn::TokenId> response) {
  auto lp = nn::score_response(state, prompt, response);
  for (auto& x : lp) x = floor_logprob(x);
  return lp;
}

}  // namespace

TokenSeq student_prompt(const Triplet& t) { return join(t.long_context, t.query); }
TokenSeq teacher_prompt(const Triplet& t) { return join(t.short_context, t.query); }

std::vector<double> teacher_logprobs(const ModelState& state, const Triplet& t,
                                     std::span<const nn::TokenId> response) {
  return floored_scores(state, teacher_prompt(t), response);
}

std::vector<double> student_logprobs(const ModelState& state, const Triplet& t,
                                     std::span<const nn::TokenId> response) {
  return floored_scores(state, student_prompt(t), response);
}

AdvantageVector compute_advantages(std::span<const double> teacher_logps,
                                   std::span<const double> student_logps,
                                   std::optional<double> clip) {
  if (teacher_logps.size() != student_logps.size())
    throw ShapeError("teacher has " + std::to_string(teacher_logps.size()) +
                     " log-probs, student has " + std::to_string(student_logps.size()));
  if (clip && !(*clip > 0.0)) throw ConfigError("advantage_clip must be > 0");
  AdvantageVector a;
  a.teacher_logps.assign(teacher_logps.begin(), teacher_logps.end());
  a.student_logps.assign(student_logps.begin(), student_logps.end());
  a.values.resize(teacher_logps.size());
  for (std::size_t t = 0; t < a.values.size(); ++t) {
    double v = teacher_logps[t] - student_logps[t];
    if (clip) v = std::clamp(v, -*clip, *clip);
    a.values[t] = v;
  }
  return a;
}

Bucket bucket_of(double advantage) {
  if (std::abs(advantage) <= kNearZeroThreshold) return Bucket::near_zero;
  return advantage > 0.0 ? Bucket::positive : Bucket::negative;
}

std::string bucket_name(Bucket b) {
  switch (b) {
    case Bucket::positive: return "positive/under-weighted";
    case Bucket::negative: return "negative/hallucinated";
    case Bucket::near_zero: return "near-zero";
  }
  return "near-zero";
}

std::vector<AdvantageRow> advantage_report(const ModelState& state, const Triplet& t,
                                           const Rollout& rollout) {
  std::vector<AdvantageRow> rows;
  if (rollout.response.empty()) return rows;
  const auto teacher = teacher_logprobs(state, t, rollout.response);
  const auto student = student_logprobs(state, t, rollout.response);
  const auto adv = compute_advantages(teacher, student);
  for (std::size_t i = 0; i < rollout.response.size(); ++i)
    rows.push_back({i, rollout.response[i], student[i], teacher[i], adv.values[i],
                    bucket_of(adv.values[i])});
  return rows;
}

std::string advantage_csv(const std::vector<AdvantageRow>& rows,
                          const taskgen::Vocabulary& vocab) {
  std::string out = "index,token_id,token,student_logp,teacher_logp,advantage,bucket\n";
  for (const auto& r : rows) {
    out += std::to_string(r.index) + ',' + std::to_string(r.token) + ',' + vocab.token(r.token) +
           ',' + format_real(r.student_logp) + ',' + format_real(r.teacher_logp) + ',' +
           format_real(r.advantage) + ',' + bucket_name(r.bucket) + '\n';
  }
  return out;
}

}  // namespace opsdl::distill
