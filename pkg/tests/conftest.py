"""Shared synthetic corpora and oracle helpers for the test suite."""

import numpy as np
import pytest

from songrec.data import Session, parse_events
from songrec.util import make_rng

T0 = 1241395200  # 2009-05-04T00:00:00Z

# one sub-hour gap (3599 s) that must NOT split; groups are separated by
# exactly 3600 s, which must split
ALICE_GAPS = [60, 60, 60, 3599, 60, 60, 60, 60, 60]
BOB_GAPS = [120] * 9

# per group: 5 shared tracks (played in every group) and 5 group-unique
# ones, interleaved so overlap deletion splits the survivors into runs
# of lengths 1, 3, 1
_SLOT_PATTERN = ["s0", "u0", "s1", "s2", "u1", "u2", "u3", "s3", "u4", "s4"]


def _iso(epoch: int) -> str:
    from songrec.data import format_timestamp

    return format_timestamp(epoch)


def _user_lines(user, artist, gaps, group_offset, start0):
    lines = []
    group_span = sum(gaps)
    for g in range(10):
        ts = start0 + g * (group_span + group_offset)
        for slot, code in enumerate(_SLOT_PATTERN):
            if code.startswith("s"):
                track = f"shared-{code[1]}"
            else:
                track = f"only-{g}-{code[1]}"
            lines.append(f"{user}\t{_iso(ts)}\t\t{artist}\t\t{track}")
            if slot < 9:
                ts += gaps[slot]
    return lines


def lastfm_fixture_lines():
    """200 hand-designed play-log lines: 2 users x 10 groups x 10 plays.

    Known outcomes: 20 sessions of length 10; the 3599 s gap keeps a
    session together while the exact 3600 s inter-group gaps split;
    every user's shared tracks appear in all their groups, so overlap
    deletion removes exactly 5 events from any val/test session and
    leaves survivor runs of lengths (1, 3, 1).
    """
    lines = _user_lines("alice", "Alpha Ensemble", ALICE_GAPS, 3600, T0)
    lines += _user_lines("bob", "Beta Crew", BOB_GAPS, 7200, T0 + 30)
    return lines


def lastfm_fixture_events():
    events, summary = parse_events(lastfm_fixture_lines())
    assert summary.parsed == 200 and summary.skipped == 0
    return events


@pytest.fixture
def fixture_events():
    return lastfm_fixture_events()


@pytest.fixture
def fixture_tsv(tmp_path):
    path = tmp_path / "plays.tsv"
    path.write_text("\n".join(lastfm_fixture_lines()) + "\n", encoding="utf-8")
    return path


def playlist_sessions(n_users=20, n_songs=50, cycle=10, repeats=3, seed=123):
    """Each user deterministically cycles a private playlist of ``cycle``
    songs drawn from the shared catalog."""
    rng = make_rng(seed)
    sessions = []
    for u in range(n_users):
        playlist = rng.choice(n_songs, size=cycle, replace=False)
        sessions.append(Session(u, [int(i) for i in np.tile(playlist, repeats)]))
    return sessions


def third_order_sessions(n_sessions, length=12, n_songs=30, perm_seed=77, seed=1, user=0):
    """The next song is a fixed permutation of the 3rd-previous one; the
    first three songs of each session are uniform."""
    perm = make_rng(perm_seed).permutation(n_songs)
    rng = make_rng(seed)
    sessions = []
    for _ in range(n_sessions):
        items = [int(x) for x in rng.integers(0, n_songs, size=3)]
        while len(items) < length:
            items.append(int(perm[items[-3]]))
        sessions.append(Session(user, items))
    return sessions


def markov_chain_sessions(n_songs=20, n_users=5, sessions_per_user=10,
                          session_len=40, succ_seed=11, start_seed=100):
    """First-order data: every song has one deterministic successor."""
    succ = make_rng(succ_seed).permutation(n_songs)
    sessions = []
    for u in range(n_users):
        rng = make_rng(start_seed + u)
        for _ in range(sessions_per_user):
            items = [int(rng.integers(n_songs))]
            for _ in range(session_len - 1):
                items.append(int(succ[items[-1]]))
            sessions.append(Session(u, items))
    return sessions


def two_pool_sessions(pool_size=25, sessions_per_pool=200, length=10, seed=55):
    """Sessions drawn entirely from one of two disjoint song pools."""
    rng = make_rng(seed)
    sessions = []
    for base in (0, pool_size):
        for _ in range(sessions_per_pool):
            items = [int(base + i) for i in rng.integers(0, pool_size, size=length)]
            sessions.append(Session(0, items))
    return sessions


class UniformScorer:
    """Stub model: independent uniform scores for every candidate."""

    def __init__(self, n_songs, seed=0):
        self.n_songs = n_songs
        self.rng = make_rng(seed)

    def score_catalog(self, u, context):
        return self.rng.random(self.n_songs)


class StatelessScorer:
    """Stub model whose scores are a pure function of (user, context)."""

    def __init__(self, n_songs, salt=0):
        self.n_songs = n_songs
        self.salt = salt

    def score_catalog(self, u, context):
        from songrec.util import derive_seed

        key = f"{self.salt}:{u}:{','.join(str(c) for c in context)}"
        return make_rng(derive_seed(0, key)).random(self.n_songs)


class PerfectScorer:
    """Stub model that ranks the true target first: it memorizes the
    (user, context) -> target mapping of the given examples."""

    def __init__(self, examples, n_songs):
        self.n_songs = n_songs
        self.lookup = {(e.user, tuple(e.context)): e.target for e in examples}

    def score_catalog(self, u, context):
        scores = np.zeros(self.n_songs)
        scores[self.lookup[(u, tuple(context))]] = 1.0
        return scores


def pairwise_auc(factors, examples, n_songs):
    """AUC by exhaustive enumeration of (observed, other) score pairs."""
    total = 0.0
    for e in examples:
        scores = factors.score_catalog(e.user, e.context)
        s_pos = scores[e.target]
        wins = np.count_nonzero(scores < s_pos)
        ties = np.count_nonzero(scores == s_pos) - 1
        total += (wins + 0.5 * ties) / (n_songs - 1)
    return total / len(examples)
