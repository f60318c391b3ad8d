"""
Judged scoring, rater agreement, and score-driven ranking
=========================================================

Shows the evaluation side of the pipeline: parsing judge verdicts into
axis scores, measuring inter-rater agreement with ICC(2,1), aggregating
category means, and ranking sweep trials by judged score (never by
training loss).
"""

import numpy as np

from sensorlm.judge import aggregate_overall, icc_2_1, score_answer
from sensorlm.sweep import TrialResult, TrialSpec, rank_results

# Two deterministic "raters": each answers any judge prompt with its own
# score for the item under review (a real run would call a provider).
items = [("steady walk at even cadence", 78.0, 74.0),
         ("vigorous run, high sway", 66.0, 69.0),
         ("still posture, slight drift", 90.0, 88.0),
         ("cycling, smooth rotation", 72.0, 75.0)]

ratings = np.zeros((len(items), 2))
for i, (answer, score_a, score_b) in enumerate(items):
    for j, fixed in enumerate((score_a, score_b)):
        verdict = score_answer(
            generate=lambda prompt, s=fixed: (
                f"Quality score: {s:g}\nAssessment: demo rater."),
            standard_answer="reference description",
            label="walking", location="pocket",
            predicted_answer=answer, rater_id=f"rater{j}")
        ratings[i, j] = verdict.q_final
print("ratings matrix (items x raters):")
print(ratings)
print(f"ICC(2,1) agreement: {icc_2_1(ratings):.3f}")

# Category means roll up to one overall number at two decimals, half-up.
per_rater_means = ratings.mean(axis=0)
print(f"overall score: {aggregate_overall(per_rater_means.tolist()):.2f}")

# Ranking is by judged overall score. The trial with the lowest training
# loss loses here because its judged quality is worse.
trials = [
    TrialResult(spec=TrialSpec(lr=3e-5, projector_lr=1e-4, lora_rank=128),
                category_means={"science": 50.0, "narration": 55.0,
                                "reliability": 51.0},
                overall=aggregate_overall([50.0, 55.0, 51.0]),
                final_loss=0.91),
    TrialResult(spec=TrialSpec(lr=3e-5, projector_lr=1e-4, lora_rank=8),
                category_means={"science": 60.0, "narration": 63.0,
                                "reliability": 58.5},
                overall=aggregate_overall([60.0, 63.0, 58.5]),
                final_loss=1.38),
]
print("\nsweep ranking (score wins, loss ignored):")
for rank, t in enumerate(rank_results(trials), start=1):
    print(f"  #{rank} rank={t.spec.lora_rank:<4} overall={t.overall:.2f} "
          f"(final loss {t.final_loss:.2f})")
