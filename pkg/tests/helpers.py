"""Small constructors and oracles shared by the test modules."""

import math

import numpy as np

from groundrl.geometry import BoundingBox, GroundedInstance
from groundrl.parser import Mode, ParsedCompletion
from groundrl.rewards import RewardVector


def inst(x1, y1, x2, y2, image=1, desc=""):
    return GroundedInstance(BoundingBox(x1, y1, x2, y2), image, desc)


def completion(mode="direct", length=10, instances=(), format_ok=True):
    return ParsedCompletion(
        raw_text="",
        mode=Mode(mode),
        instances=tuple(instances),
        format_ok=format_ok,
        length_tokens=length,
    )


def reward(precision, recall, r_format=1.0, r_image=1.0):
    return RewardVector.from_components(r_format, r_image, precision, recall)


def probs_of(z):
    e = [math.exp(v) for v in z]
    s = sum(e)
    return [v / s for v in e]


def naive_objective(policy, old, ref, groups, advs, beta):
    """Direct transcription of the clipped-free objective with scalar math."""
    per_group = []
    for g, adv in zip(groups, advs):
        pi = probs_of(policy.logits[g.prompt_id])
        po = probs_of(old.logits[g.prompt_id])
        pr = probs_of(ref.logits[g.prompt_id])
        terms = []
        for o, a in zip(g.indices, adv):
            r = pr[o] / pi[o]
            terms.append(pi[o] / po[o] * a - beta * (r - math.log(r) - 1))
        per_group.append(sum(terms) / len(terms))
    return sum(per_group) / len(per_group)


def central_difference(policy, old, ref, groups, advs, beta, h=1e-5):
    out = {}
    for pid, z in policy.logits.items():
        g = np.zeros_like(z)
        for j in range(z.size):
            up, down = policy.copy(), policy.copy()
            up.logits[pid][j] += h
            down.logits[pid][j] -= h
            g[j] = (naive_objective(up, old, ref, groups, advs, beta) - naive_objective(down, old, ref, groups, advs, beta)) / (2 * h)
        out[pid] = g
    return out
