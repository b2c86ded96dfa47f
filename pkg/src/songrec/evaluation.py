"""Top-N evaluation: recall@k / precision@k curves and the context-order sweep.

Each test case has exactly one relevant item (the actually-played next
song), so precision@k = recall@k / k by definition. Ranking uses the
repository-wide tie rule (score descending, index ascending), making
every rank total and reproducible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Session, drop_unknown_users, extract_examples
from .util import atomic_write_text, config_hash, derive_seed, make_rng

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10, 20, 50, 100, 150, 200, 500)

PROTOCOLS = ("full", "sampled")


@dataclass(frozen=True)
class EvalConfig:
    """Cutoff grid and candidate protocol.

    ``full`` ranks the target against the entire catalog; ``sampled``
    ranks it against ``n_neg`` songs drawn uniformly from those the user
    never played in training. ``exclude_train_songs`` removes the user's
    training songs from the full-catalog candidates.
    """

    ks: tuple = DEFAULT_KS
    protocol: str = "full"
    n_neg: int = 1000
    seed: int = 0
    exclude_train_songs: bool = False

    def __post_init__(self):
        ks = tuple(int(k) for k in self.ks)
        object.__setattr__(self, "ks", ks)
        if not ks or any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 1:
            raise ValueError(f"cutoffs must be strictly ascending positive ints, got {ks}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.n_neg < 1:
            raise ValueError("n_neg must be >= 1")

    def to_dict(self):
        return {
            "ks": list(self.ks),
            "protocol": self.protocol,
            "n_neg": self.n_neg,
            "seed": self.seed,
            "exclude_train_songs": self.exclude_train_songs,
        }


@dataclass
class EvalReport:
    """Per-cutoff recall/precision plus enough metadata to reproduce the run."""

    label: str
    ks: tuple
    hits: dict
    n_examples: int
    protocol: str
    config_hash: str
    recall: dict = field(default_factory=dict)
    precision: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.recall:
            self.recall = {k: self.hits[k] / self.n_examples for k in self.ks}
        if not self.precision:
            self.precision = {k: self.recall[k] / k for k in self.ks}
        self.validate()

    def validate(self):
        prev = 0.0
        for k in self.ks:
            r = self.recall[k]
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"recall@{k}={r} outside [0, 1]")
            if r < prev:
                raise ValueError(f"recall not monotone at k={k}: {r} < {prev}")
            prev = r

    def to_dict(self):
        return {
            "label": self.label,
            "ks": list(self.ks),
            "hits": {str(k): self.hits[k] for k in self.ks},
            "recall": {str(k): self.recall[k] for k in self.ks},
            "precision": {str(k): self.precision[k] for k in self.ks},
            "n_examples": self.n_examples,
            "protocol": self.protocol,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        ks = tuple(d["ks"])
        return cls(
            label=d["label"],
            ks=ks,
            hits={k: d["hits"][str(k)] for k in ks},
            n_examples=d["n_examples"],
            protocol=d["protocol"],
            config_hash=d["config_hash"],
            recall={k: d["recall"][str(k)] for k in ks},
            precision={k: d["precision"][str(k)] for k in ks},
        )

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))


def rank_of_target(scores: np.ndarray, target: int, candidates: np.ndarray) -> int:
    """1-based rank of the target among the candidates under the
    deterministic total order (score descending, index ascending)."""
    candidates = np.asarray(candidates)
    if not np.any(candidates == target):
        raise ValueError(f"target {target} not among candidates")
    st = scores[target]
    cand_scores = scores[candidates]
    greater = int(np.count_nonzero(cand_scores > st))
    equal_lower = int(
        np.count_nonzero((cand_scores == st) & (candidates < target))
    )
    return 1 + greater + equal_lower


def _full_catalog_rank(scores: np.ndarray, target: int) -> int:
    st = scores[target]
    greater = int(np.count_nonzero(scores > st))
    equal_lower = int(np.count_nonzero(scores[:target] == st))
    return 1 + greater + equal_lower


def _example_rank(model, e, position, config: EvalConfig, train_user_songs, n_songs) -> int:
    scores = model.score_catalog(e.user, e.context)
    if config.protocol == "full" and not config.exclude_train_songs:
        return _full_catalog_rank(scores, e.target)
    heard = train_user_songs.get(e.user, set())
    unheard = np.array(
        [s for s in range(n_songs) if s not in heard and s != e.target],
        dtype=np.int64,
    )
    if config.protocol == "sampled" and unheard.size > config.n_neg:
        # per-example subseed: results do not depend on evaluation order
        # or worker count, only on (config seed, example position)
        rng = make_rng(derive_seed(config.seed, f"neg:{position}"))
        unheard = rng.choice(unheard, size=config.n_neg, replace=False)
    candidates = np.concatenate((unheard, [e.target]))
    return rank_of_target(scores, e.target, candidates)


def evaluate(
    model,
    examples,
    config: EvalConfig,
    train_user_songs: dict | None = None,
    label: str | None = None,
    workers: int = 1,
) -> EvalReport:
    """Rank the true next song for every test example and report recall@k.

    ``model`` must expose ``score_catalog(user, context) -> scores over
    the catalog`` and ``n_songs``. The sampled protocol (and the
    exclude-train-songs flag) needs ``train_user_songs``: user index ->
    set of songs that user played in training. Scoring over examples is
    independent, so ``workers`` > 1 threads it; hit counts are integers,
    making the merged result identical at any worker count.
    """
    if not examples:
        raise ValueError("empty test set")
    n_songs = model.n_songs
    if config.ks[-1] > n_songs:
        raise ValueError(f"max cutoff {config.ks[-1]} exceeds catalog size {n_songs}")
    needs_history = config.protocol == "sampled" or config.exclude_train_songs
    if needs_history and train_user_songs is None:
        raise ValueError("this protocol needs per-user training songs")

    def rank_at(i):
        return _example_rank(model, examples[i], i, config, train_user_songs, n_songs)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            ranks = list(pool.map(rank_at, range(len(examples)), chunksize=64))
    else:
        ranks = [rank_at(i) for i in range(len(examples))]

    hits = {k: 0 for k in config.ks}
    for rank in ranks:
        for k in config.ks:
            if rank <= k:
                hits[k] += 1
    report = EvalReport(
        label=label or type(model).__name__,
        ks=config.ks,
        hits=hits,
        n_examples=len(examples),
        protocol=config.protocol if config.protocol == "full" else f"sampled({config.n_neg})",
        config_hash=config_hash(config.to_dict()),
    )
    return report


def sweep_order(
    train_sessions: list[Session],
    test_sessions: list[Session],
    trainer,
    orders,
    config: EvalConfig,
) -> list[tuple[int, EvalReport]]:
    """Train and evaluate one fresh model per context order.

    ``trainer(j, train_examples) -> model`` builds and fits a model of
    order j; examples are re-extracted per order so every model sees the
    contexts it can legally consume. Users absent from training are
    dropped from the test sessions.
    """
    orders = sorted(set(int(j) for j in orders))
    if not orders or orders[0] < 1 or orders[-1] > 10:
        raise ValueError(f"orders must lie in [1, 10], got {orders}")
    kept_test = drop_unknown_users(test_sessions, train_sessions)
    results = []
    for j in orders:
        train_ex = extract_examples(train_sessions, j)
        test_ex = extract_examples(kept_test, j)
        model = trainer(j, train_ex)
        report = evaluate(model, test_ex, config, label=f"j={j}")
        results.append((j, report))
        logger.info("order %d: recall@%d = %.4f", j, config.ks[0], report.recall[config.ks[0]])
    return results


def emit_curves(reports: list[EvalReport], path) -> None:
    """Write curve rows (label, k, recall, precision) as CSV.

    Comma separator, '.' decimal point, LF line ends, one header row;
    floats use repr so re-emitting identical reports is byte-identical
    and parsing back recovers the exact values.
    """
    if not reports:
        raise ValueError("need at least one report")
    lines = ["model,k,recall,precision"]
    for r in reports:
        for k in r.ks:
            lines.append(f"{r.label},{k},{r.recall[k]!r},{r.precision[k]!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
