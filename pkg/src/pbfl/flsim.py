"""Federated training loop around the scoring pipeline.

The simulator wires together key distribution, non-IID shards, local
training, poisoning, gradient encryption, the per-round defense, and
the model update rule. Two interchangeable pipelines exist: the
encrypted one speaks the real two-server protocols, the mirror one runs
the identical arithmetic on plain numpy vectors.
"""

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attacks, defense, fhe, protocols
from .transport import Transport

NORM_EPS = 1e-6
ZERO_GRAD_EPS = 1e-12


@dataclass
class Model:
    """A learner plus its flat weight vector."""

    learner: object
    weights: np.ndarray

    def __post_init__(self):
        if len(self.weights) != self.learner.dim:
            raise ValueError("weight vector length does not match the learner")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")


@dataclass
class ClientView:
    """What one client holds: its id, its half of a key pair, and pk."""

    client_id: int
    user_share: fhe.SecretKeyShare
    pk: fhe.PublicKey


@dataclass
class Federation:
    """Key topology of the two-server system.

    S1 additionally holds one counterpart share per client, so any
    (S1, client) pair can jointly decrypt. S2 holds only its half of
    the server split. The master secret key lives in no view; it is
    retained privately for test oracles only.
    """

    params: fhe.RingParams
    comp: protocols.SecureComputation
    clients: list
    s1_client_shares: dict
    pk: fhe.PublicKey
    evk: fhe.EvalKey
    _oracle_sk: fhe.SecretKey = field(repr=False, default=None)

    @property
    def transport(self) -> Transport:
        return self.comp.transport

    def all_share_pairs(self):
        pairs = [(self.comp.s1.key_share, self.comp.s2.key_share)]
        for view in self.clients:
            pairs.append((self.s1_client_shares[view.client_id], view.user_share))
        return pairs


def system_setup(n, params, seed) -> Federation:
    """Generate keys and hand out n+1 additive splits of the secret key.

    One split goes to the server pair, and one split per client binds
    that client to S1 so the pair can decrypt aggregates for it.
    """
    if n < 2:
        raise ValueError("need at least two clients")
    km = fhe.keygen(params, seed=seed)
    sh1, sh2 = fhe.key_split(km.sk, seed=seed + 1)
    s1 = protocols.ServerEndpoint(
        "S1", params, sh1, evk=km.evk, pk=km.pk, seed=seed + 2
    )
    s2 = protocols.ServerEndpoint("S2", params, sh2, pk=km.pk, seed=seed + 3)
    comp = protocols.SecureComputation(s1, s2, Transport())
    clients = []
    s1_client_shares = {}
    for i in range(n):
        server_half, user_half = fhe.key_split(
            km.sk, seed=seed + 100 + i, holders=(f"S1/client-{i}", f"client-{i}")
        )
        clients.append(ClientView(client_id=i, user_share=user_half, pk=km.pk))
        s1_client_shares[i] = server_half
    return Federation(
        params=params,
        comp=comp,
        clients=clients,
        s1_client_shares=s1_client_shares,
        pk=km.pk,
        evk=km.evk,
        _oracle_sk=km.sk,
    )


def normalize_chunk_encrypt(gradient, pk, params, seed) -> protocols.EncryptedGradient:
    """Unit-normalize a gradient, chunk it into slots, and encrypt."""
    g = np.asarray(gradient, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm < ZERO_GRAD_EPS:
        raise ValueError("zero gradient; client skips the round")
    unit = g / norm
    if params.slot_count != pk.params.slot_count:
        raise ValueError("params and public key disagree")
    return protocols.encrypt_vector(pk, unit, seed=seed)


def normalize_gradient(gradient) -> np.ndarray:
    g = np.asarray(gradient, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm < ZERO_GRAD_EPS:
        raise ValueError("zero gradient; client skips the round")
    return g / norm


def local_train(model: Model, shard, eta, batch_size, seed) -> np.ndarray:
    """One client's mini-batch gradient at the current model.

    eta is part of the federated signature but unused here: the update
    step is applied globally after aggregation, not locally.
    """
    del eta
    if len(shard) == 0:
        raise ValueError("empty shard")
    rng = np.random.default_rng(seed)
    take = min(batch_size, len(shard))
    idx = rng.choice(len(shard), size=take, replace=False)
    return model.learner.gradient(model.weights, shard.X[idx], shard.y[idx])


def model_update(W, g_sigma, eta_t) -> np.ndarray:
    return np.asarray(W) - eta_t * np.asarray(g_sigma)


def decrypt_for_client(federation, enc, client_id, seed) -> np.ndarray:
    """Joint decryption of an encrypted vector by (S1, client) shares."""
    view = federation.clients[client_id]
    server_half = federation.s1_client_shares[client_id]
    out = []
    for j, ct in enumerate(enc.chunks):
        d_s = fhe.part_dec(server_half, ct, seed=seed + 2 * j)
        d_u = fhe.part_dec(view.user_share, ct, seed=seed + 2 * j + 1)
        out.append(fhe.full_dec(ct, d_s, d_u))
    flat = np.concatenate(out)[: enc.length]
    return flat


@dataclass
class RoundReport:
    """Everything one round produced, ready for serialization."""

    round: int
    accuracy: float
    loss: float
    eta: float
    checksum: str
    weights: dict
    traffic: dict
    defense: dict | None
    wall_seconds: float

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "accuracy": self.accuracy,
            "loss": self.loss,
            "eta": self.eta,
            "checksum": self.checksum,
            "weights": self.weights,
            "traffic": self.traffic,
            "defense": self.defense,
            "wall_seconds": self.wall_seconds,
        }


def _checksum(vec: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(vec).tobytes()).hexdigest()[:16]


class FederatedRun:
    """A full seeded experiment: fixed clients, attackers, and pipeline.

    pipeline is "encrypted" (real protocols at the configured preset) or
    "mirror" (plain numpy, same scoring arithmetic). With
    defense_enabled=False every round is plain uniform averaging over
    all submitted gradients.
    """

    def __init__(
        self,
        bundle,
        learner,
        rounds,
        seed,
        attack_spec=None,
        defense_cfg=None,
        defense_enabled=True,
        pipeline="mirror",
        params=None,
        eta=0.1,
        eta_decay=0.0,
        batch_size=32,
        workers=4,
    ):
        if pipeline not in ("encrypted", "mirror"):
            raise ValueError("pipeline must be 'encrypted' or 'mirror'")
        if pipeline == "encrypted" and params is None:
            raise ValueError("encrypted pipeline needs ring parameters")
        if rounds < 1:
            raise ValueError("need at least one round")
        self.bundle = bundle
        self.learner = learner
        self.rounds = rounds
        self.seed = seed
        self.spec = attack_spec or attacks.AttackSpec()
        self.defense_enabled = defense_enabled
        self.pipeline = pipeline
        self.params = params
        self.eta = eta
        self.eta_decay = eta_decay
        self.batch_size = batch_size
        self.workers = workers

        self.n = len(bundle.shards)
        if self.spec.kind == "none":
            self.attackers = []
        else:
            self.attackers = attacks.select_attackers(
                self.n, self.spec.attack_ratio, seed=seed + 23
            )
        self.shards = list(bundle.shards)
        if self.spec.kind == "label-flip":
            for i in self.attackers:
                shard = self.shards[i]
                self.shards[i] = type(shard)(
                    X=shard.X,
                    y=attacks.flip_labels(shard.y, bundle.classes),
                    owner=shard.owner,
                )

        self.model = Model(learner, learner.init_weights(seed))
        if defense_cfg is None:
            defense_cfg = defense.DefenseConfig(
                t_warmup=min(5, rounds - 1) if rounds > 1 else 0,
                t_total=max(rounds, 2),
            )
        self.cfg = defense_cfg
        self.ledger = defense.CreditLedger()

        if pipeline == "encrypted":
            self.federation = system_setup(self.n, params, seed=seed + 31)
            self.backend = defense.EncryptedRoundBackend(
                self.federation.comp, self.federation.pk
            )
        else:
            self.federation = None
            self.backend = defense.PlainRoundBackend()
        self.reference = None
        self.ref_norm = None
        self.reports: list[RoundReport] = []

    def _eta_at(self, t) -> float:
        return self.eta / (1.0 + self.eta_decay * (t - 1))

    def _train_seed(self, t, i) -> int:
        return self.seed + 1009 * t + 7 * i

    def _enc_seed(self, t, i) -> int:
        return self.seed + 500_000 + 1013 * t + 11 * i

    def round_gradients(self, t) -> dict:
        """Local training for every client, then the poisoning pass."""
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = {
                i: pool.submit(
                    local_train,
                    self.model,
                    self.shards[i],
                    self._eta_at(t),
                    self.batch_size,
                    self._train_seed(t, i),
                )
                for i in range(self.n)
            }
            grads = {i: f.result() for i, f in futures.items()}
        if self.spec.kind in ("sign-flip", "agr-tailored"):
            if self.spec.knowledge == "omniscient":
                sample = np.stack(
                    [grads[i] for i in range(self.n) if i not in self.attackers]
                )
            else:
                sample = np.stack([grads[i] for i in self.attackers])
            for i in self.attackers:
                ctx = attacks.PoisonContext(own_gradient=grads[i], sample=sample)
                grads[i] = attacks.poison(ctx, self.spec)
        return grads

    def _submit_updates(self, grads, t) -> dict:
        updates = {}
        for i in sorted(grads):
            try:
                if self.pipeline == "encrypted":
                    updates[i] = normalize_chunk_encrypt(
                        grads[i],
                        self.federation.pk,
                        self.params,
                        seed=self._enc_seed(t, i),
                    )
                else:
                    updates[i] = normalize_gradient(grads[i])
            except ValueError:
                continue
        return updates

    def _aggregate(self, updates, t):
        """Run the defense (or uniform averaging) over this round's updates."""
        if self.defense_enabled:
            result = defense.run_defense_round(
                self.backend,
                updates,
                self.reference,
                self.ref_norm,
                t,
                self.cfg,
                self.ledger,
            )
            report = result.report
            selected = set(report["selected"])
            total = sum(report["w"].get(str(i), 0.0) for i in selected)
            w_eff = {
                str(i): (
                    report["w"][str(i)] / total
                    if i in selected and total > 0
                    else 0.0
                )
                for i in updates
            }
            return result.aggregate, report, w_eff
        ids = sorted(updates)
        weights = {i: 1.0 / len(ids) for i in ids}
        agg = defense.aggregate_weighted(self.backend, updates, ids, weights)
        return agg, None, {str(i): weights[i] for i in ids}

    def _decrypt_aggregate(self, agg, t) -> np.ndarray:
        if self.pipeline == "mirror":
            return np.asarray(agg, dtype=np.float64)
        return decrypt_for_client(
            self.federation, agg, client_id=0, seed=self.seed + 900_000 + 77 * t
        )

    def _next_reference(self, g_sigma, t):
        norm = float(np.linalg.norm(g_sigma))
        if norm < NORM_EPS:
            return
        unit = g_sigma / norm
        if self.pipeline == "encrypted":
            self.reference = protocols.encrypt_vector(
                self.federation.pk, unit, seed=self.seed + 700_000 + 101 * t
            )
        else:
            self.reference = unit
        self.ref_norm = 1.0

    def run_round(self, t) -> RoundReport:
        start = time.perf_counter()
        traffic_before = self.backend.traffic()
        grads = self.round_gradients(t)
        updates = self._submit_updates(grads, t)
        if not updates:
            raise RuntimeError(f"round {t}: every client produced a zero gradient")
        agg, report, w_eff = self._aggregate(updates, t)
        g_sigma = self._decrypt_aggregate(agg, t)
        eta_t = self._eta_at(t)
        self.model.weights = model_update(self.model.weights, g_sigma, eta_t)
        self._next_reference(g_sigma, t)
        traffic_after = self.backend.traffic()
        traffic = {
            "messages": traffic_after["messages"] - traffic_before["messages"],
            "bytes": traffic_after["bytes"] - traffic_before["bytes"],
        }
        acc = self.learner.accuracy(
            self.model.weights, self.bundle.X_test, self.bundle.y_test
        )
        loss = self.learner.loss(
            self.model.weights, self.bundle.X_test, self.bundle.y_test
        )
        rep = RoundReport(
            round=t,
            accuracy=acc,
            loss=loss,
            eta=eta_t,
            checksum=_checksum(g_sigma),
            weights=w_eff,
            traffic=traffic,
            defense=report,
            wall_seconds=time.perf_counter() - start,
        )
        self.reports.append(rep)
        return rep

    def run(self) -> list[RoundReport]:
        for t in range(1, self.rounds + 1):
            self.run_round(t)
        return self.reports
