#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>

#include "rolepatch/model.hpp"
#include "rolepatch/prompt.hpp"
#include "rolepatch/tokenizer.hpp"

namespace rolepatch {

struct DegenerateBaseline : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Oriented logit difference: the correct answer's logit minus the incorrect
// one's, so larger always means more correct.
inline double logit_diff(const Logits& logits, const AnswerTokens& answers,
                         Answer correct) {
    const double yes = logits(answers.yes_id);
    const double no = logits(answers.no_id);
    return correct == Answer::Yes ? yes - no : no - yes;
}

inline Answer predicted_answer(const Logits& logits,
                               const AnswerTokens& answers) {
    return logits(answers.yes_id) > logits(answers.no_id) ? Answer::Yes
                                                          : Answer::No;
}

// (LD_patched - LD_corrupted) / (LD_clean - LD_corrupted). 0 means no
// recovery, 1 full restoration. Not clamped: overshoot is reported raw.
inline double normalized_ld(double ld_patched, double ld_corrupted,
                            double ld_clean, double eps_base = 1e-6) {
    const double base = ld_clean - ld_corrupted;
    if (std::abs(base) <= eps_base)
        throw DegenerateBaseline("clean and corrupted logit differences are "
                                 "too close to normalize");
    return (ld_patched - ld_corrupted) / base;
}

// Probability mass on the correct answer under a two-way softmax restricted
// to the Yes/No logits.
struct CorrectScore {
    double value = 0.0;
    Answer correct_label = Answer::Yes;
};

inline CorrectScore correct_score(const Logits& logits,
                                  const AnswerTokens& answers, Answer correct) {
    const double yes = logits(answers.yes_id);
    const double no = logits(answers.no_id);
    const double correct_logit = correct == Answer::Yes ? yes : no;
    const double incorrect_logit = correct == Answer::Yes ? no : yes;
    // exp(c)/(exp(c)+exp(i)) computed stably as a sigmoid of the difference.
    const double value = 1.0 / (1.0 + std::exp(incorrect_logit - correct_logit));
    return {value, correct};
}

} // namespace rolepatch
