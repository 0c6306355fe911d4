"""Evaluation metrics: corpus-level BLEU-4 and referential-game accuracy."""

import json
import math
from collections import Counter

import numpy as np


class BleuReport:
    def __init__(self, bleu, precisions, brevity_penalty, hyp_tokens, ref_tokens):
        self.bleu = bleu
        self.precisions = precisions
        self.brevity_penalty = brevity_penalty
        self.hyp_tokens = hyp_tokens
        self.ref_tokens = ref_tokens

    def to_json(self):
        return json.dumps(
            {
                "bleu": self.bleu,
                "precisions": self.precisions,
                "brevity_penalty": self.brevity_penalty,
                "hyp_tokens": self.hyp_tokens,
                "ref_tokens": self.ref_tokens,
            }
        )

    def __repr__(self):
        return f"BleuReport(bleu={self.bleu:.4f}, bp={self.brevity_penalty:.4f})"


def _tokens(line):
    return line.split() if isinstance(line, str) else list(line)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses, references):
    """Unsmoothed corpus BLEU-4 with a single reference per line.

    Clipped n-gram matches and totals accumulate over the whole corpus
    before dividing; any zero precision zeroes the score.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"bleu4: {len(hypotheses)} hypotheses vs {len(references)} references"
        )
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, 5):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        return BleuReport(0.0, precisions, 0.0, 0, ref_len)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / 4.0)
    return BleuReport(score, precisions, bp, hyp_len, ref_len)


def game_accuracy(agent, features, k_eval, rounds, rng):
    """Fraction of evaluation rounds where the listener picks the target.

    Messages use plain argmax tokens (no Gumbel noise) so a fixed rng,
    which only draws the candidate sets, makes evaluation deterministic.
    """
    from . import game

    if k_eval == 0:
        return 1.0
    correct = 0
    done = 0
    batch = 128
    while done < rounds:
        b = min(batch, rounds - done)
        targets, candidates = game.draw_candidate_sets(features, k_eval, b, rng)
        picks = game.play_round(agent, features, targets, candidates)
        correct += int((picks == 0).sum())
        done += b
    return correct / rounds
