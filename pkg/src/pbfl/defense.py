"""Robust aggregation: norm filtering, baseline scoring, credits, weights.

One round of the defense proceeds in fixed stages:

1. normalization filter: every client's encrypted update must pass the
   squared-norm-equals-one judgement; failures are set aside.
2. baseline identification: the trusted update least similar to the
   reference gradient (previous round's global, or the round's own mean in
   round one) is taken as the poisonous baseline.
3. confidence: negated similarities to the baseline go through a stabilized
   softmax, so updates far from the baseline earn high confidence.
4. credit: a per-client exponentially smoothed score absorbs the round's
   confidence.
5. weights: credit times confidence, normalized.
6. adaptive filtering: early rounds blend weights toward uniform before a
   threshold excludes low-weight clients; a sharp-drop rule then removes
   suspiciously dominant weights; credit penalties are applied.
7. weighted homomorphic aggregation over the surviving clients.

All similarity and aggregation arithmetic goes through a backend object.
The encrypted backend drives the two-server protocols; the plain backend
mirrors the identical pipeline with numpy arithmetic, which makes
equivalence between the two directly testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fhe, protocols

AGG_EPS = 1e-3


@dataclass
class DefenseConfig:
    """Constants of the scoring and filtering stages."""

    alpha_credit: float = 0.9
    theta: float = 0.05
    delta: float | None = None  # None: resolved to 1/(2n) each round
    gamma1: float = 0.7
    gamma2: float = 1.3
    t_warmup: int = 5
    t_total: int = 30

    def __post_init__(self):
        if not 0.7 <= self.alpha_credit <= 0.95:
            raise ValueError(
                f"alpha_credit must lie in [0.7, 0.95], got {self.alpha_credit}"
            )
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta must lie in [0, 1), got {self.theta}")
        if self.delta is not None and self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 0.0 <= self.gamma1 <= 1.0:
            raise ValueError(f"gamma1 must lie in [0, 1], got {self.gamma1}")
        if self.gamma2 <= 1.0:
            raise ValueError(f"gamma2 must exceed 1, got {self.gamma2}")
        if self.t_warmup >= self.t_total:
            raise ValueError(
                f"t_warmup {self.t_warmup} must precede t_total {self.t_total}"
            )

    def resolved_delta(self, n: int) -> float:
        return self.delta if self.delta is not None else 1.0 / (2 * n)


@dataclass
class TrustSet:
    trusted: list[int]
    rejected_norm: list[int]


@dataclass
class FilterOutcome:
    lam: float
    w_tilde: dict[int, float]
    selected: list[int]
    dropped_by_threshold: list[int]
    dropped_by_gap: list[int]


@dataclass
class CreditLedger:
    cs: dict[int, float] = field(default_factory=dict)
    history: list[dict[int, float]] = field(default_factory=list)

    def ensure(self, client_ids) -> None:
        for cid in client_ids:
            self.cs.setdefault(cid, 1.0)

    def snapshot(self) -> None:
        self.history.append(dict(self.cs))


# -- backends -----------------------------------------------------------------


class EncryptedRoundBackend:
    """Scores and aggregates via the two-server protocols."""

    def __init__(self, comp: protocols.SecureComputation, pk: fhe.PublicKey):
        self.comp = comp
        self.pk = pk

    def judge(self, update) -> tuple[float, bool]:
        verdict = self.comp.esec_judge(update)
        return verdict.sum, verdict.accepted

    def cos_to_reference(self, update, reference, ref_norm: float | None) -> float:
        if ref_norm is None:
            return self.comp.esec_cos(update, reference).value
        return self.comp.inner_product(update, reference) / ref_norm

    def sum_updates(self, updates: list) -> protocols.EncryptedGradient:
        chunks = updates[0].chunks
        for upd in updates[1:]:
            chunks = [fhe.add(a, b) for a, b in zip(chunks, upd.chunks)]
        return protocols.EncryptedGradient(chunks=list(chunks), length=updates[0].length)

    def norm_squared(self, handle) -> float:
        return self.comp.esec_judge(handle).sum

    def aggregate(self, updates: list, weights: list[float]):
        acc = None
        for upd, w in zip(updates, weights):
            scaled = [fhe.mult_plain(c, w) for c in upd.chunks]
            acc = (
                scaled
                if acc is None
                else [fhe.add(a, b) for a, b in zip(acc, scaled)]
            )
        return protocols.EncryptedGradient(chunks=acc, length=updates[0].length)

    def traffic(self) -> dict:
        t = self.comp.transport
        return {"messages": t.message_count(), "bytes": t.byte_count()}


class PlainRoundBackend:
    """Mirror of the encrypted backend in exact numpy arithmetic."""

    def judge(self, update) -> tuple[float, bool]:
        sq = float(update @ update)
        return sq, abs(sq - 1.0) <= protocols.JUDGE_TOL

    def cos_to_reference(self, update, reference, ref_norm: float | None) -> float:
        value = float(update @ reference)
        return value if ref_norm is None else value / ref_norm

    def sum_updates(self, updates: list) -> np.ndarray:
        return np.sum(updates, axis=0)

    def norm_squared(self, handle) -> float:
        return float(handle @ handle)

    def aggregate(self, updates: list, weights: list[float]) -> np.ndarray:
        return np.sum([w * u for u, w in zip(updates, weights)], axis=0)

    def traffic(self) -> dict:
        return {"messages": 0, "bytes": 0}


# -- pipeline stages ------------------------------------------------------------


def normalization_filter(backend, updates: dict) -> tuple[TrustSet, dict[int, float]]:
    """Partition clients by the norm judgement; protocol failures reject."""
    trusted, rejected, sums = [], [], {}
    for cid, update in updates.items():
        try:
            value, accepted = backend.judge(update)
        except Exception:
            rejected.append(cid)
            continue
        sums[cid] = value
        (trusted if accepted else rejected).append(cid)
    return TrustSet(trusted=trusted, rejected_norm=rejected), sums


def find_baseline(
    backend, updates: dict, trusted: list[int], reference, ref_norm: float | None
) -> tuple[int, dict[int, float]]:
    """Pick the trusted client least similar to the reference gradient."""
    if not trusted:
        raise ValueError("cannot identify a baseline from an empty trusted set")
    cos_sigma = {
        cid: backend.cos_to_reference(updates[cid], reference, ref_norm)
        for cid in trusted
    }
    baseline = min(trusted, key=lambda cid: (cos_sigma[cid], trusted.index(cid)))
    return baseline, cos_sigma


def confidence(cos_star: dict[int, float]) -> dict[int, float]:
    """Stabilized softmax over the negated baseline similarities."""
    if not cos_star:
        raise ValueError("confidence needs at least one client")
    ids = list(cos_star)
    values = np.array([cos_star[c] for c in ids], dtype=np.float64)
    exp = np.exp(values - np.max(values))
    co = exp / np.sum(exp)
    return {c: float(v) for c, v in zip(ids, co)}


def credit_update(
    ledger: CreditLedger, co: dict[int, float], alpha_credit: float
) -> None:
    """Exponential smoothing of credit toward the round's confidence."""
    if not 0.0 <= alpha_credit <= 1.0:
        raise ValueError(f"smoothing factor must lie in [0, 1], got {alpha_credit}")
    ledger.ensure(co)
    for cid, value in co.items():
        ledger.cs[cid] = alpha_credit * ledger.cs[cid] + (1 - alpha_credit) * value


def compute_weights(ledger: CreditLedger, co: dict[int, float]) -> dict[int, float]:
    """w_i = cs_i * co_i, normalized over the trusted set."""
    products = {cid: ledger.cs[cid] * co[cid] for cid in co}
    total = sum(products.values())
    if total <= 0.0:
        raise ValueError("all credit-confidence products are zero; no client trusted")
    return {cid: v / total for cid, v in products.items()}


def adaptive_filter(w: dict[int, float], t: int, cfg: DefenseConfig) -> FilterOutcome:
    """Uniform-blended threshold exclusion, then the sharp-drop rule."""
    n = len(w)
    span = cfg.t_total - cfg.t_warmup
    lam = min(1.0, max(0.0, 1.0 - (t - cfg.t_warmup) / span))
    w_tilde = {cid: lam / n + (1 - lam) * w[cid] for cid in w}
    survivors = [cid for cid in w if w_tilde[cid] >= cfg.theta]
    dropped_threshold = [cid for cid in w if cid not in survivors]

    dropped_gap: list[int] = []
    k = len(survivors) // 2
    if n >= 4 and k >= 2:
        delta = cfg.resolved_delta(n)
        ranked = sorted(survivors, key=lambda cid: -w[cid])
        top = ranked[:k]
        last_gap = -1
        for i in range(len(top) - 1):
            if w[top[i]] - w[top[i + 1]] > delta:
                last_gap = i
        if last_gap >= 0:
            dropped_gap = top[: last_gap + 1]
    selected = [cid for cid in w if cid in survivors and cid not in dropped_gap]
    return FilterOutcome(
        lam=lam,
        w_tilde=w_tilde,
        selected=selected,
        dropped_by_threshold=dropped_threshold,
        dropped_by_gap=dropped_gap,
    )


def apply_credit_penalties(
    ledger: CreditLedger, trust: TrustSet, outcome: FilterOutcome, cfg: DefenseConfig
) -> None:
    """Decay credit of norm-rejected clients, inflate gap-dropped ones."""
    overlap = set(trust.rejected_norm) & set(outcome.dropped_by_gap)
    if overlap:
        raise ValueError(f"penalty sets overlap on clients {sorted(overlap)}")
    ledger.ensure(trust.rejected_norm)
    for cid in trust.rejected_norm:
        ledger.cs[cid] *= cfg.gamma1
    for cid in outcome.dropped_by_gap:
        ledger.cs[cid] *= cfg.gamma2


def aggregate_weighted(backend, updates: dict, selected: list[int], w: dict[int, float]):
    """Weighted sum of the selected updates, weights renormalized."""
    if not selected:
        raise ValueError("cannot aggregate an empty selection")
    total = sum(w[cid] for cid in selected)
    weights = [w[cid] / total for cid in selected]
    return backend.aggregate([updates[cid] for cid in selected], weights)


# -- full round ------------------------------------------------------------------


@dataclass
class RoundResult:
    aggregate: object
    report: dict


def run_defense_round(
    backend,
    updates: dict,
    reference,
    ref_norm: float | None,
    t: int,
    cfg: DefenseConfig,
    ledger: CreditLedger,
) -> RoundResult:
    """One full defense round over per-client updates.

    reference is the similarity anchor (previous global gradient, already
    unit norm with ref_norm=None, or an unnormalized handle with its norm
    supplied). Returns the aggregated handle plus the round report.
    """
    traffic_before = backend.traffic()
    ledger.ensure(updates)
    trust, _sums = normalization_filter(backend, updates)
    fallback = False

    if trust.trusted:
        if reference is None:
            # round 1: anchor on the round's own homomorphic sum
            reference = backend.sum_updates([updates[c] for c in trust.trusted])
            ref_norm = math.sqrt(max(backend.norm_squared(reference), 1e-12))
        baseline, cos_sigma = find_baseline(
            backend, updates, trust.trusted, reference, ref_norm
        )
        cos_star = {
            cid: -backend.cos_to_reference(
                updates[cid], updates[baseline], None
            )
            for cid in trust.trusted
        }
        co = confidence(cos_star)
        credit_update(ledger, co, cfg.alpha_credit)
        w = compute_weights(ledger, co)
        outcome = adaptive_filter(w, t, cfg)
        apply_credit_penalties(ledger, trust, outcome, cfg)
        selected = outcome.selected
        if not selected:
            fallback = True
            selected = list(trust.trusted)
            w = {cid: 1.0 for cid in selected}
        aggregate = aggregate_weighted(backend, updates, selected, w)
    else:
        raise ValueError(f"round {t}: every client failed the norm judgement")

    ledger.snapshot()
    traffic_after = backend.traffic()
    report = {
        "round": t,
        "trusted": list(trust.trusted),
        "rejected_norm": list(trust.rejected_norm),
        "baseline": baseline,
        "cos_sigma": {str(c): cos_sigma[c] for c in cos_sigma},
        "cos_star": {str(c): cos_star[c] for c in cos_star},
        "co": {str(c): co[c] for c in co},
        "cs": {str(c): ledger.cs[c] for c in updates},
        "w": {str(c): w[c] for c in w},
        "lambda": outcome.lam,
        "selected": list(selected),
        "dropped_by_threshold": list(outcome.dropped_by_threshold),
        "dropped_by_gap": list(outcome.dropped_by_gap),
        "fallback_uniform": fallback,
        "traffic": {
            key: traffic_after[key] - traffic_before[key] for key in traffic_after
        },
    }
    return RoundResult(aggregate=aggregate, report=report)
