"""Poisoning attack generators for the federated round.

Label flipping poisons the data before training, so ``poison`` treats
it as a pass-through for the gradient. Sign flipping and the
aggregation-tailored attack rewrite the gradient after local training.
"""

from dataclasses import dataclass

import numpy as np

ATTACK_KINDS = ("none", "label-flip", "sign-flip", "agr-tailored")
KNOWLEDGE_MODES = ("omniscient", "self-estimating")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    attack_ratio: float = 0.0
    magnitude: float = 1.0
    knowledge: str = "omniscient"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.attack_ratio < 1.0:
            raise ValueError("attack_ratio must lie in [0, 1)")
        if not np.isfinite(self.magnitude):
            raise ValueError("magnitude must be finite")
        if self.knowledge not in KNOWLEDGE_MODES:
            raise ValueError(
                f"knowledge must be one of {KNOWLEDGE_MODES}, got {self.knowledge!r}"
            )


@dataclass
class PoisonContext:
    """What the adversary can see when crafting a gradient.

    ``sample`` holds the gradients visible to the adversary: all benign
    gradients in omniscient mode, only the colluding attackers' own in
    self-estimating mode.
    """

    own_gradient: np.ndarray
    sample: np.ndarray = None


def select_attackers(n, attack_ratio, seed):
    """Fix the attacker set for a run: round(ratio * n) seeded picks."""
    count = int(round(attack_ratio * n))
    if count >= n:
        raise ValueError("attacker count must leave at least one benign client")
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(n, size=count, replace=False).tolist())


def flip_labels(y, classes):
    """Cyclic label permutation: class c becomes (c + 1) mod classes."""
    return (np.asarray(y) + 1) % classes


def poison(context, spec):
    """Rewrite one attacker's gradient according to the attack spec."""
    if spec.kind == "none":
        raise ValueError("poison requires an active attack kind")
    g = np.asarray(context.own_gradient, dtype=np.float64)
    if spec.kind == "label-flip":
        return g
    if spec.kind == "sign-flip":
        return -spec.magnitude * g
    if spec.kind == "agr-tailored":
        if context.sample is None or len(context.sample) == 0:
            raise ValueError("agr-tailored needs a benign-mean estimate sample")
        sample = np.asarray(context.sample, dtype=np.float64)
        mean = sample.mean(axis=0)
        sigma = sample.std(axis=0)
        sigma_norm = np.linalg.norm(sigma)
        deviation = np.zeros_like(mean) if sigma_norm == 0 else -sigma / sigma_norm
        crafted = mean + spec.magnitude * deviation
        norm = np.linalg.norm(crafted)
        if norm == 0:
            raise ValueError("crafted gradient vanished; adjust magnitude")
        return crafted / norm
    raise AssertionError(f"unhandled attack kind {spec.kind}")
