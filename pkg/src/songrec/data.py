"""Listening-log preparation pipeline.

Raw play logs go through: parse -> vocabulary build -> filter ->
sessionize -> split -> train-overlap deletion -> context/target example
extraction. Every step is a pure function; the split is a pure function
of (sessions, ratios, seed).
"""

from __future__ import annotations

import gzip
import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .util import atomic_write_json, atomic_write_text, make_rng

logger = logging.getLogger(__name__)

# Reserved separator joining artist name and track name into one song key.
SONG_KEY_SEP = ""

DEFAULT_VOCAB_CAP = 10000
DEFAULT_GAP_SECONDS = 3600
DEFAULT_RATIOS = (0.7, 0.1, 0.2)

OVERLAP_MODES = ("drop-seen", "keep-only-seen", "none")
SHUFFLE_UNITS = ("session", "record")

_TS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


@dataclass(frozen=True, slots=True)
class ListeningEvent:
    """One timestamped play: who, when (epoch seconds UTC), which song."""

    user_key: str
    timestamp: int
    song_key: str


@dataclass(slots=True)
class ParseSummary:
    parsed: int = 0
    skipped: int = 0


@dataclass(slots=True)
class Session:
    """A maximal run of one user's plays with every inter-event gap below the cutoff.

    ``timestamps`` is None for sessions read back from disk (the on-disk
    format keeps only item order).
    """

    user: int
    items: list[int]
    timestamps: list[int] | None = None

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True, slots=True)
class TrainingExample:
    """(user, last-j songs oldest first, next song)."""

    user: int
    context: tuple[int, ...]
    target: int

    @property
    def order(self) -> int:
        return len(self.context)


@dataclass(slots=True)
class SplitDataset:
    train: list[Session]
    val: list[Session]
    test: list[Session]
    seed: int
    ratios: tuple[float, float, float]

    def parts(self):
        return {"train": self.train, "val": self.val, "test": self.test}


class VocabMap:
    """Bijection between song keys and dense indices 0..N-1."""

    def __init__(self, keys: list[str]):
        if not keys:
            raise ValueError("empty vocabulary is unusable")
        self.reverse: list[str] = list(keys)
        self.forward: dict[str, int] = {k: i for i, k in enumerate(self.reverse)}
        if len(self.forward) != len(self.reverse):
            raise ValueError("duplicate song keys in vocabulary")

    @property
    def size(self) -> int:
        return len(self.reverse)

    def __len__(self) -> int:
        return len(self.reverse)

    def __contains__(self, key: str) -> bool:
        return key in self.forward

    def index(self, key: str) -> int:
        return self.forward[key]

    def key(self, index: int) -> str:
        return self.reverse[index]


def _iter_lines(stream):
    for line in stream:
        if isinstance(line, bytes):
            line = line.decode("utf-8", errors="replace")
        yield line.rstrip("\r\n")


def parse_timestamp(text: str) -> int:
    """ISO-8601 Z-suffixed timestamp -> integer epoch seconds (UTC)."""
    dt = datetime.strptime(text, _TS_FORMAT).replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime(_TS_FORMAT)


def parse_events(stream) -> tuple[list[ListeningEvent], ParseSummary]:
    """Parse tab-separated play-log lines into events.

    Expected layout per line (UTF-8):
    user TAB iso-timestamp TAB artist-id TAB artist-name TAB track-id TAB track-name

    Songs are keyed by artist-name + separator + track-name; the id
    columns are often empty in the raw data so names are the usable
    identity. Lines with fewer than 6 fields, an unparseable timestamp,
    an empty user, or both name fields empty are counted and skipped.

    Returns the events in input order plus a parse summary.
    """
    events: list[ListeningEvent] = []
    summary = ParseSummary()
    for line in _iter_lines(stream):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) < 6:
            summary.skipped += 1
            continue
        user_key, ts_text, _artist_id, artist_name, _track_id, track_name = fields[:6]
        if not user_key or (not artist_name and not track_name):
            summary.skipped += 1
            continue
        try:
            ts = parse_timestamp(ts_text)
        except ValueError:
            summary.skipped += 1
            continue
        events.append(ListeningEvent(user_key, ts, artist_name + SONG_KEY_SEP + track_name))
        summary.parsed += 1
    return events, summary


def open_event_stream(path):
    """Open a raw log file for parsing; .gz paths are decompressed on the fly."""
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, "r", encoding="utf-8", errors="replace")


def build_vocab(events: list[ListeningEvent], cap: int = DEFAULT_VOCAB_CAP) -> VocabMap:
    """Keep the ``cap`` most-played songs.

    Indices are assigned by descending play count; ties broken by first
    appearance in the stream.
    """
    if cap < 1:
        raise ValueError("vocabulary cap must be >= 1")
    if not events:
        raise ValueError("no events: empty vocabulary is unusable")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for pos, ev in enumerate(events):
        counts[ev.song_key] += 1
        if ev.song_key not in first_seen:
            first_seen[ev.song_key] = pos
    ordered = sorted(counts, key=lambda k: (-counts[k], first_seen[k]))
    return VocabMap(ordered[:cap])


def filter_to_vocab(
    events: list[ListeningEvent], vocab: VocabMap
) -> list[ListeningEvent]:
    """Subsequence of events whose song is in the vocabulary; order preserved."""
    return [ev for ev in events if ev.song_key in vocab]


def build_user_index(events: list[ListeningEvent]) -> dict[str, int]:
    """User key -> dense index, by first appearance in the stream."""
    index: dict[str, int] = {}
    for ev in events:
        if ev.user_key not in index:
            index[ev.user_key] = len(index)
    return index


def sessionize(
    events: list[ListeningEvent],
    vocab: VocabMap,
    user_index: dict[str, int],
    gap_seconds: int = DEFAULT_GAP_SECONDS,
) -> list[Session]:
    """Group each user's plays into sessions split at gaps >= ``gap_seconds``.

    Events are grouped per user and stably sorted by timestamp first, so
    input interleaving does not matter. A gap of exactly ``gap_seconds``
    starts a new session (inside a session every gap is strictly
    smaller). Length-1 sessions are kept. Sessions come out ordered by
    user index, chronologically within each user.
    """
    per_user: dict[int, list[ListeningEvent]] = defaultdict(list)
    for ev in events:
        per_user[user_index[ev.user_key]].append(ev)

    sessions: list[Session] = []
    for user in sorted(per_user):
        stream = sorted(per_user[user], key=lambda ev: ev.timestamp)  # stable
        items: list[int] = []
        stamps: list[int] = []
        for ev in stream:
            if stamps and ev.timestamp - stamps[-1] >= gap_seconds:
                sessions.append(Session(user, items, stamps))
                items, stamps = [], []
            items.append(vocab.index(ev.song_key))
            stamps.append(ev.timestamp)
        if items:
            sessions.append(Session(user, items, stamps))
    return sessions


def split_dataset(
    sessions: list[Session],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitDataset:
    """Shuffle sessions by a seeded permutation and cut into train/val/test.

    Validation and test sizes are floors of their ratios; train takes the
    remainder. Within-session order is never disturbed.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("need three non-negative ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(sessions)
    if n < 3:
        raise ValueError(f"need at least 3 sessions to split, got {n}")
    n_val = int(ratios[1] * n)
    n_test = int(ratios[2] * n)
    n_train = n - n_val - n_test
    perm = make_rng(seed).permutation(n)
    shuffled = [sessions[i] for i in perm]
    return SplitDataset(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
        ratios=tuple(ratios),
    )


def split_events(
    events: list[ListeningEvent],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> tuple[list[ListeningEvent], list[ListeningEvent], list[ListeningEvent]]:
    """Record-level alternative to :func:`split_dataset`: shuffle single
    plays and cut; each part is then sessionized on its own."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(events)
    if n < 3:
        raise ValueError(f"need at least 3 events to split, got {n}")
    n_val = int(ratios[1] * n)
    n_test = int(ratios[2] * n)
    n_train = n - n_val - n_test
    perm = make_rng(seed).permutation(n)
    shuffled = [events[i] for i in perm]
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


def _train_song_sets(train: list[Session]) -> dict[int, set[int]]:
    seen: dict[int, set[int]] = defaultdict(set)
    for s in train:
        seen[s.user].update(s.items)
    return seen


def _clean_sessions(
    sessions: list[Session], train_songs: dict[int, set[int]], mode: str
) -> tuple[list[Session], int]:
    """Apply the overlap rule to one part; deletions split sessions apart."""
    out: list[Session] = []
    deleted = 0
    for s in sessions:
        seen = train_songs.get(s.user, set())
        if mode == "drop-seen":
            keep = [i not in seen for i in s.items]
        else:  # keep-only-seen
            keep = [i in seen for i in s.items]
        items: list[int] = []
        stamps: list[int] = []
        for pos, ok in enumerate(keep):
            if ok:
                items.append(s.items[pos])
                if s.timestamps is not None:
                    stamps.append(s.timestamps[pos])
            else:
                deleted += 1
                if items:
                    out.append(Session(s.user, items, stamps or None))
                    items, stamps = [], []
        if items:
            out.append(Session(s.user, items, stamps or None))
    return out, deleted


def delete_train_overlap(
    split: SplitDataset, mode: str = "drop-seen"
) -> tuple[SplitDataset, dict[str, int]]:
    """Remove val/test events by the (user, song)-seen-in-training rule.

    ``mode``:
      drop-seen       remove events whose song the same user already has in
                      their training sessions (the default reading),
      keep-only-seen  the opposite reading: keep only such events,
      none            leave val/test untouched.

    A deletion splits the session at that point; emptied sessions vanish.
    Returns the cleaned split plus deleted-event counts per part.
    """
    if mode not in OVERLAP_MODES:
        raise ValueError(f"overlap mode must be one of {OVERLAP_MODES}, got {mode!r}")
    if mode == "none":
        return split, {"val": 0, "test": 0}
    train_songs = _train_song_sets(split.train)
    val, n_val = _clean_sessions(split.val, train_songs, mode)
    test, n_test = _clean_sessions(split.test, train_songs, mode)
    cleaned = SplitDataset(split.train, val, test, split.seed, split.ratios)
    return cleaned, {"val": n_val, "test": n_test}


def extract_examples(sessions: list[Session], j: int) -> list[TrainingExample]:
    """One example per in-session position with at least j predecessors.

    Contexts never cross session boundaries; a session of length <= j
    yields nothing. Output is ordered by (session order, position).
    """
    if j < 1:
        raise ValueError("context length j must be >= 1")
    examples: list[TrainingExample] = []
    for s in sessions:
        items = s.items
        for t in range(j, len(items)):
            examples.append(TrainingExample(s.user, tuple(items[t - j : t]), items[t]))
    return examples


def examples_to_arrays(
    examples: list[TrainingExample],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(users, contexts, targets) arrays; contexts is (T, j) oldest-first."""
    if not examples:
        raise ValueError("no examples")
    users = np.asarray([e.user for e in examples], dtype=np.int64)
    contexts = np.asarray([e.context for e in examples], dtype=np.int64)
    targets = np.asarray([e.target for e in examples], dtype=np.int64)
    return users, contexts, targets


def drop_unknown_users(
    sessions: list[Session], train_sessions: list[Session]
) -> list[Session]:
    """Drop sessions of users absent from training (their embedding would
    be untrained); warns when anything is dropped."""
    known = {s.user for s in train_sessions}
    kept = [s for s in sessions if s.user in known]
    dropped = len(sessions) - len(kept)
    if dropped:
        logger.warning("dropped %d sessions of users absent from training", dropped)
    return kept


# ---------------------------------------------------------------------------
# Prepared-dataset directory format
# ---------------------------------------------------------------------------
#
#   vocab.txt    one song key per line, line number = song index
#   users.txt    one user key per line, line number = user index
#   train.txt    one session per line: "<user_index> <i1>,<i2>,..."
#   val.txt, test.txt  same layout
#   stats.json   counts, seed, ratios, pipeline settings


@dataclass(slots=True)
class PreparedDataset:
    vocab: VocabMap
    user_keys: list[str]
    split: SplitDataset
    stats: dict = field(default_factory=dict)

    @property
    def n_songs(self) -> int:
        return self.vocab.size

    @property
    def n_users(self) -> int:
        return len(self.user_keys)


def _session_lines(sessions: list[Session]) -> str:
    return "".join(
        f"{s.user} {','.join(str(i) for i in s.items)}\n" for s in sessions
    )


def _parse_session_lines(text: str) -> list[Session]:
    sessions = []
    for line in text.splitlines():
        if not line:
            continue
        user_text, _, items_text = line.partition(" ")
        items = [int(tok) for tok in items_text.split(",")] if items_text else []
        sessions.append(Session(int(user_text), items))
    return sessions


def write_prepared(out_dir, prepared: PreparedDataset) -> None:
    """Write the prepared-dataset directory (see module comment for layout)."""
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(
        os.path.join(out_dir, "vocab.txt"),
        "".join(k + "\n" for k in prepared.vocab.reverse),
    )
    atomic_write_text(
        os.path.join(out_dir, "users.txt"),
        "".join(k + "\n" for k in prepared.user_keys),
    )
    for name, sessions in prepared.split.parts().items():
        atomic_write_text(os.path.join(out_dir, f"{name}.txt"), _session_lines(sessions))
    atomic_write_json(os.path.join(out_dir, "stats.json"), prepared.stats)


def read_prepared(out_dir) -> PreparedDataset:
    """Read back a prepared-dataset directory. Sessions lose timestamps."""

    def read(name):
        with open(os.path.join(out_dir, name), "r", encoding="utf-8") as fh:
            return fh.read()

    vocab = VocabMap(read("vocab.txt").splitlines())
    user_keys = read("users.txt").splitlines()
    stats = json.loads(read("stats.json"))
    split = SplitDataset(
        train=_parse_session_lines(read("train.txt")),
        val=_parse_session_lines(read("val.txt")),
        test=_parse_session_lines(read("test.txt")),
        seed=stats.get("seed", 0),
        ratios=tuple(stats.get("ratios", DEFAULT_RATIOS)),
    )
    return PreparedDataset(vocab, user_keys, split, stats)


def prepare(
    events: list[ListeningEvent],
    vocab_cap: int = DEFAULT_VOCAB_CAP,
    gap_seconds: int = DEFAULT_GAP_SECONDS,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    overlap_mode: str = "drop-seen",
    shuffle_unit: str = "session",
) -> PreparedDataset:
    """Full pipeline: vocabulary, filter, sessionize, split, overlap deletion.

    ``shuffle_unit`` picks what gets shuffled before the cut: whole
    sessions (default, preserves the sequences the models consume) or
    single records (each part is then sessionized on its own).
    """
    if shuffle_unit not in SHUFFLE_UNITS:
        raise ValueError(f"shuffle unit must be one of {SHUFFLE_UNITS}, got {shuffle_unit!r}")
    vocab = build_vocab(events, vocab_cap)
    kept = filter_to_vocab(events, vocab)
    if not kept:
        raise ValueError("no events survive vocabulary filtering")
    user_index = build_user_index(kept)
    user_keys = sorted(user_index, key=user_index.get)

    if shuffle_unit == "session":
        sessions = sessionize(kept, vocab, user_index, gap_seconds)
        n_sessions_in = len(sessions)
        split = split_dataset(sessions, ratios, seed)
    else:
        parts = split_events(kept, ratios, seed)
        by_part = [sessionize(p, vocab, user_index, gap_seconds) for p in parts]
        n_sessions_in = sum(len(p) for p in by_part)
        split = SplitDataset(*by_part, seed=seed, ratios=tuple(ratios))

    split, deleted = delete_train_overlap(split, overlap_mode)

    stats = {
        "users": len(user_keys),
        "songs": vocab.size,
        "records": len(kept),
        "records_raw": len(events),
        "sessions_before_overlap": n_sessions_in,
        "sessions": {k: len(v) for k, v in split.parts().items()},
        "events": {k: sum(len(s) for s in v) for k, v in split.parts().items()},
        "deleted_overlap": deleted,
        "seed": seed,
        "ratios": list(ratios),
        "vocab_cap": vocab_cap,
        "gap_seconds": gap_seconds,
        "overlap_mode": overlap_mode,
        "shuffle_unit": shuffle_unit,
    }
    return PreparedDataset(vocab, user_keys, split, stats)
