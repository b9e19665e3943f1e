"""Adversarial training of pattern-specialized address generators.

k LSTM generators, one per seed pattern class, train against a single
(k+1)-class CNN discriminator.  Generators minimize a penalty objective
J = sum_t Q(x_t | X_{0:t-1}) via REINFORCE-style policy gradients, where
the per-position penalty Q combines the discriminator's rejection of the
pattern class with an aliased-prefix penalty estimated over Monte Carlo
rollouts of the unfinished sequence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .addr import AliasTrie, NybbleSeq
from .alias import AliasDetector
from .classify import LabeledSeedCorpus
from . import nn
from .nn import (
    BOS,
    SEQ_LEN,
    VOCAB,
    CnnParams,
    LstmParams,
    RmsProp,
    cnn_forward,
    cnn_nll_grads,
    lstm_backward,
    lstm_forward,
    lstm_init_state,
    lstm_nll_grads,
    lstm_step_batch,
    softmax,
)

log = logging.getLogger("sixgan.gan")


@dataclass
class RewardConfig:
    alpha: float = 0.9
    lam: float = 10.0
    rollouts: int = 15

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.lam < 0 or self.rollouts < 1:
            raise ValueError("alpha, lambda must be >= 0 and rollouts >= 1")


@dataclass
class TrainSchedule:
    g_pretrain: int = 60
    d_pretrain: int = 20
    g_steps: int = 5
    d_steps: int = 1
    adversarial_rounds: int = 20
    batch_size: int = 64

    def __post_init__(self) -> None:
        fields = (self.g_pretrain, self.d_pretrain, self.g_steps, self.d_steps,
                  self.adversarial_rounds, self.batch_size)
        if any(v < 0 for v in fields) or self.batch_size < 1:
            raise ValueError("schedule fields must be non-negative, batch_size >= 1")


@dataclass
class GeneratorModel:
    params: LstmParams
    pattern_id: int
    rng: np.random.Generator
    opt: RmsProp = field(default_factory=lambda: RmsProp(lr=1e-3))


@dataclass
class DiscriminatorModel:
    params: CnnParams
    k: int
    rng: np.random.Generator
    opt: RmsProp = field(default_factory=lambda: RmsProp(lr=1e-4))

    def __post_init__(self) -> None:
        if self.params.n_classes != self.k + 1:
            raise ValueError(
                f"discriminator emits {self.params.n_classes} classes, "
                f"expected k+1 = {self.k + 1}"
            )

    def class_probs(self, tokens: np.ndarray) -> np.ndarray:
        """Softmax scores over the k pattern classes plus the fake class."""
        _, probs = cnn_forward(self.params, tokens)
        return probs


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One sample per row from row-wise distributions (inverse CDF)."""
    cdf = probs.cumsum(axis=1)
    u = rng.random(probs.shape[0])
    return np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def _sample_tokens(
    params: LstmParams,
    n: int,
    rng: np.random.Generator,
    keep_states: bool = False,
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Autoregressive batch sampling of [n, 32] nybble tokens.

    When keep_states is set, also returns the (h, c) state recorded after
    each position, for resuming rollouts mid-sequence.
    """
    h, c = lstm_init_state(params, n)
    prev = np.full(n, BOS, dtype=np.int64)
    tokens = np.empty((n, SEQ_LEN), dtype=np.int64)
    hs: list[np.ndarray] = []
    cs: list[np.ndarray] = []
    for t in range(SEQ_LEN):
        h, c, _, probs = lstm_step_batch(params, h, c, prev)
        tok = _categorical_rows(probs, rng)
        tokens[:, t] = tok
        prev = tok
        if keep_states:
            hs.append(h)
            cs.append(c)
    return tokens, hs, cs


def _continue_tokens(
    params: LstmParams,
    h: np.ndarray,
    c: np.ndarray,
    prev: np.ndarray,
    steps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    out = np.empty((prev.shape[0], steps), dtype=np.int64)
    for s in range(steps):
        h, c, _, probs = lstm_step_batch(params, h, c, prev)
        prev = _categorical_rows(probs, rng)
        out[:, s] = prev
    return out


def sample_sequences(g: GeneratorModel, n: int) -> list[NybbleSeq]:
    """n addresses sampled from the generator's current policy."""
    if n < 1:
        raise ValueError("n must be >= 1")
    tokens, _, _ = _sample_tokens(g.params, n, g.rng)
    return [NybbleSeq(tuple(int(v) for v in row)) for row in tokens]


def mc_rollout(g: GeneratorModel, partial: tuple[int, ...], n: int) -> list[NybbleSeq]:
    """n completions of a partial sequence, sampled from g itself.

    The given nybbles are replayed through the network (so the rollout
    conditions on them exactly) and the remaining positions are sampled.
    """
    t = len(partial)
    if not 1 <= t <= SEQ_LEN:
        raise ValueError(f"partial length must be in [1, {SEQ_LEN}], got {t}")
    if t == SEQ_LEN:
        return [NybbleSeq(tuple(partial))] * n
    h, c = lstm_init_state(g.params, n)
    prev = np.full(n, BOS, dtype=np.int64)
    for v in partial:
        h, c, _, _ = lstm_step_batch(g.params, h, c, prev)
        prev = np.full(n, v, dtype=np.int64)
    tails = _continue_tokens(g.params, h, c, prev, SEQ_LEN - t, g.rng)
    return [
        NybbleSeq(tuple(partial) + tuple(int(v) for v in row)) for row in tails
    ]


# ---------------------------------------------------------------------------
# Rewards (penalties; lower is better for the generator)
# ---------------------------------------------------------------------------


def reward_discriminator(
    d: DiscriminatorModel,
    pattern_id: int,
    partial: tuple[int, ...],
    action: int,
    rollouts: list[NybbleSeq],
) -> float:
    """Mean discriminator penalty 1 - D^i over the rollout completions.

    At the final position the completed sequence itself is scored instead
    of rollouts.
    """
    t = len(partial) + 1
    if t == SEQ_LEN:
        tokens = np.array([partial + (action,)], dtype=np.int64)
    else:
        if not rollouts:
            raise ValueError("rollouts required before the final position")
        tokens = np.array([r.nybbles for r in rollouts], dtype=np.int64)
    probs = d.class_probs(tokens)
    q_d = float((1.0 - probs[:, pattern_id]).mean())
    assert -_BOUND_EPS <= q_d <= 1.0 + _BOUND_EPS, f"Q_D out of range: {q_d}"
    return q_d


_BOUND_EPS = 1e-9  # headroom for float rounding in mean-of-bounded-values asserts


def _alias_contrib(lengths: np.ndarray, t: int, lam: float) -> np.ndarray:
    """Per-rollout alias penalty (t/L)*lam where matched and t <= L, else 0."""
    scaled = t / np.maximum(lengths, 1) * lam
    return np.where((lengths > 0) & (t <= lengths), scaled, 0.0)


def reward_alias(
    trie: AliasTrie,
    cfg: RewardConfig,
    t: int,
    rollouts: list[NybbleSeq],
) -> float:
    """Mean aliased-prefix penalty over rollouts at position t.

    A rollout matching an aliased prefix of length L contributes
    (t/L)*lambda when t <= L; positions past the matched prefix, and
    non-matching rollouts, contribute 0.
    """
    if not rollouts:
        raise ValueError("rollouts must be non-empty")
    lengths = np.array(
        [trie.match(r) or 0 for r in rollouts], dtype=np.int64
    )
    q_a = float(_alias_contrib(lengths, t, cfg.lam).mean())
    assert -_BOUND_EPS <= q_a <= cfg.lam + _BOUND_EPS, f"Q_A out of range: {q_a}"
    return q_a


def combined_q(q_d: float, q_a: float, cfg: RewardConfig) -> float:
    q = q_d + cfg.alpha * q_a
    assert -_BOUND_EPS <= q <= 1.0 + cfg.alpha * cfg.lam + _BOUND_EPS, f"Q_AD out of range: {q}"
    return q


def _match_lengths_batch(prefixes: list[tuple[int, ...]], tokens: np.ndarray) -> np.ndarray:
    """Longest aliased-prefix match length per row (0 = no match)."""
    lengths = np.zeros(tokens.shape[0], dtype=np.int64)
    for p in prefixes:
        lp = len(p)
        hit = (tokens[:, :lp] == np.array(p)).all(axis=1)
        lengths[hit] = np.maximum(lengths[hit], lp)
    return lengths


# ---------------------------------------------------------------------------
# Policy-gradient training
# ---------------------------------------------------------------------------


def pg_logit_grad(probs: np.ndarray, actions: np.ndarray, q: np.ndarray) -> np.ndarray:
    """d/dlogits of the penalty surrogate mean_b sum_t Q * log p(action).

    Descending this surrogate lowers the probability of high-penalty
    actions.  probs is [B, T, V]; actions and q are [B, T].
    """
    b, t_len, _ = probs.shape
    grad = -q[:, :, None] * probs
    rows = np.arange(b)[:, None]
    cols = np.arange(t_len)[None, :]
    grad[rows, cols, actions] += q
    return grad / b


def generator_pg_step(
    g: GeneratorModel,
    d: DiscriminatorModel,
    detector: AliasDetector | None,
    cfg: RewardConfig,
    batch_size: int,
) -> dict:
    """One REINFORCE update of a generator from a sampled batch.

    For every position t of every sampled sequence, N rollouts complete
    the sequence from the generator's cached state; the discriminator and
    alias penalties of the completions give Q_AD(x_t), and one RMSProp
    step descends the penalty-weighted log-likelihood.
    """
    params = g.params
    b, n_roll = batch_size, cfg.rollouts
    tokens, hs, cs = _sample_tokens(params, b, g.rng, keep_states=True)

    trie = detector.trie if detector is not None else None
    prefixes = [p.nybbles for p in trie.prefixes()] if trie is not None else []

    q_d = np.empty((b, SEQ_LEN))
    q_a = np.zeros((b, SEQ_LEN))
    for t in range(1, SEQ_LEN):
        h_rep = np.repeat(hs[t - 1], n_roll, axis=0)
        c_rep = np.repeat(cs[t - 1], n_roll, axis=0)
        prev = np.repeat(tokens[:, t - 1], n_roll)
        tails = _continue_tokens(params, h_rep, c_rep, prev, SEQ_LEN - t, g.rng)
        full = np.concatenate(
            [np.repeat(tokens[:, :t], n_roll, axis=0), tails], axis=1
        )
        probs = d.class_probs(full)
        q_d[:, t - 1] = (1.0 - probs[:, g.pattern_id]).reshape(b, n_roll).mean(axis=1)
        if prefixes:
            lengths = _match_lengths_batch(prefixes, full)
            q_a[:, t - 1] = _alias_contrib(lengths, t, cfg.lam).reshape(b, n_roll).mean(axis=1)
    probs = d.class_probs(tokens)
    q_d[:, SEQ_LEN - 1] = 1.0 - probs[:, g.pattern_id]
    if prefixes:
        lengths = _match_lengths_batch(prefixes, tokens)
        q_a[:, SEQ_LEN - 1] = _alias_contrib(lengths, SEQ_LEN, cfg.lam)
        aliased_rate = float((lengths > 0).mean())
    else:
        aliased_rate = 0.0

    assert (q_d >= -_BOUND_EPS).all() and (q_d <= 1.0 + _BOUND_EPS).all(), "Q_D out of range"
    assert (q_a >= -_BOUND_EPS).all() and (q_a <= cfg.lam + _BOUND_EPS).all(), "Q_A out of range"
    q = q_d + cfg.alpha * q_a
    assert (q >= -_BOUND_EPS).all() and (q <= 1.0 + cfg.alpha * cfg.lam + _BOUND_EPS).all(), "Q_AD out of range"

    inputs = np.concatenate(
        [np.full((b, 1), BOS, dtype=tokens.dtype), tokens[:, :-1]], axis=1
    )
    logits, cache = lstm_forward(params, inputs)
    dlogits = pg_logit_grad(softmax(logits), tokens, q)
    grads = lstm_backward(params, cache, dlogits)
    g.opt.update(params.tensors(), grads)
    return {
        "mean_q_d": float(q_d.mean()),
        "mean_q_a": float(q_a.mean()),
        "mean_q_ad": float(q.mean()),
        "aliased_rate": aliased_rate,
    }


def discriminator_step(
    d: DiscriminatorModel,
    real_by_class: list[np.ndarray],
    fakes: np.ndarray,
) -> float:
    """One cross-entropy update: real class i -> label i, fakes -> label k."""
    if len(real_by_class) != d.k:
        raise ValueError(f"expected {d.k} real classes, got {len(real_by_class)}")
    xs = np.concatenate(list(real_by_class) + [fakes], axis=0)
    labels = np.concatenate(
        [np.full(len(batch), i) for i, batch in enumerate(real_by_class)]
        + [np.full(len(fakes), d.k)]
    ).astype(np.int64)
    loss, grads = cnn_nll_grads(d.params, xs, labels)
    d.opt.update(d.params.tensors(), grads)
    return loss


def pretrain_generator(
    g: GeneratorModel,
    seed_tokens: np.ndarray,
    steps: int,
    batch_size: int,
) -> list[float]:
    """Teacher-forced MLE pretraining; returns the per-step NLL curve."""
    if len(seed_tokens) == 0:
        raise ValueError("cannot pretrain on an empty seed class")
    curve = []
    for _ in range(steps):
        idx = g.rng.integers(len(seed_tokens), size=batch_size)
        nll, grads = lstm_nll_grads(g.params, seed_tokens[idx])
        g.opt.update(g.params.tensors(), grads)
        curve.append(nll)
    return curve


# ---------------------------------------------------------------------------
# Full training loop
# ---------------------------------------------------------------------------


def _fake_pool(generators: list[GeneratorModel], n: int) -> np.ndarray:
    """n generated sequences drawn as evenly as possible across generators."""
    k = len(generators)
    counts = [n // k + (1 if i < n % k else 0) for i in range(k)]
    parts = []
    for g, c in zip(generators, counts):
        if c > 0:
            tokens, _, _ = _sample_tokens(g.params, c, g.rng)
            parts.append(tokens)
    return np.concatenate(parts, axis=0)


def train_6gan(
    corpus: LabeledSeedCorpus,
    detector: AliasDetector | None,
    cfg: RewardConfig,
    schedule: TrainSchedule,
    seed: int,
    embed_dim: int = 200,
    hidden_dim: int = 200,
    n_filters: int = 32,
    lr_gen: float = 1e-3,
    lr_disc: float = 1e-4,
    on_round=None,
) -> tuple[list[GeneratorModel], DiscriminatorModel, list[dict]]:
    """Pretrain k generators and the discriminator, then alternate
    g_steps policy-gradient updates per generator with d_steps
    discriminator updates for the scheduled number of rounds.

    on_round, when given, is called as on_round(round_index, generators,
    discriminator) after pretraining (index -1) and after every
    adversarial round, e.g. to persist checkpoints so a later divergence
    still leaves the last finite state on disk.
    """
    k = corpus.k
    for cid in range(k):
        if not corpus.class_index[cid]:
            raise ValueError(f"seed class {cid} is empty")
    class_tokens = [
        np.array([s.nybbles for s in corpus.class_seeds(cid)], dtype=np.int64)
        for cid in range(k)
    ]

    ss = np.random.SeedSequence(seed)
    streams = [s.spawn(2) for s in ss.spawn(k + 1)]  # (init, runtime) per model
    generators = [
        GeneratorModel(
            params=LstmParams.init(
                np.random.default_rng(streams[i][0]), embed_dim, hidden_dim
            ),
            pattern_id=i,
            rng=np.random.default_rng(streams[i][1]),
            opt=RmsProp(lr=lr_gen),
        )
        for i in range(k)
    ]
    d_rng = np.random.default_rng(streams[k][1])
    disc = DiscriminatorModel(
        params=CnnParams.init(
            np.random.default_rng(streams[k][0]), k + 1, embed_dim, n_filters
        ),
        k=k,
        rng=d_rng,
        opt=RmsProp(lr=lr_disc),
    )

    records: list[dict] = []
    for i, g in enumerate(generators):
        curve = pretrain_generator(g, class_tokens[i], schedule.g_pretrain, schedule.batch_size)
        for step, nll in enumerate(curve):
            records.append({"kind": "g_pretrain", "generator": i, "step": step, "nll": nll})

    per_class = max(1, schedule.batch_size // (k + 1))

    def real_batches() -> list[np.ndarray]:
        return [
            toks[d_rng.integers(len(toks), size=per_class)] for toks in class_tokens
        ]

    for step in range(schedule.d_pretrain):
        loss = discriminator_step(disc, real_batches(), _fake_pool(generators, per_class))
        records.append({"kind": "d_pretrain", "step": step, "loss": loss})

    if on_round is not None:
        on_round(-1, generators, disc)
    for rnd in range(schedule.adversarial_rounds):
        for i, g in enumerate(generators):
            for step in range(schedule.g_steps):
                stats = generator_pg_step(g, disc, detector, cfg, schedule.batch_size)
                records.append(
                    {"kind": "g_step", "round": rnd, "generator": i, "step": step, **stats}
                )
        for step in range(schedule.d_steps):
            loss = discriminator_step(disc, real_batches(), _fake_pool(generators, per_class))
            records.append({"kind": "d_step", "round": rnd, "step": step, "loss": loss})
        if on_round is not None:
            on_round(rnd, generators, disc)
    return generators, disc, records


def generate_candidates(
    g: GeneratorModel,
    budget: int,
    exclude: set[tuple[int, ...]] | None = None,
) -> list[NybbleSeq]:
    """Up to budget unique addresses not present in exclude.

    Sampling stops after 50x budget attempts; a shortfall is logged and
    the partial set returned.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    exclude = exclude or set()
    out: list[NybbleSeq] = []
    seen: set[tuple[int, ...]] = set()
    attempts = 0
    while len(out) < budget and attempts < 50 * budget:
        chunk = min(max(budget - len(out), 1), 4096)
        tokens, _, _ = _sample_tokens(g.params, chunk, g.rng)
        attempts += chunk
        for row in tokens:
            key = tuple(int(v) for v in row)
            if key in seen or key in exclude:
                continue
            seen.add(key)
            out.append(NybbleSeq(key))
            if len(out) == budget:
                break
    if len(out) < budget:
        log.warning(
            "generator %d produced %d/%d unique candidates before the attempt cap",
            g.pattern_id, len(out), budget,
        )
    return out
