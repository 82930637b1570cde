"""Synthetic 2-D point-mass corpus, oracles and query-pair machinery.

Episodes are generated by scripted controllers: each behavior mode m has a
turn rate omega_m and a cruise speed v_m, and initial headings cover the
full circle.  The corpus is therefore rotation-invariant and behaviorally
diverse: what identifies a mode is how fast it moves and how strongly it
curves, not where it goes.

Preference oracles are hidden analytic reward functions over segments,
standing in for human judgments during automated evaluation.
"""

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

DT = 0.1
MAX_ACTION_NORM = 1.0


@dataclass
class FullTrajectory:
    states: np.ndarray  # (L, S) positions
    actions: np.ndarray  # (L, A) velocity commands, already clamped
    mode_id: int
    episode_id: int = 0

    @property
    def length(self):
        return self.states.shape[0]


@dataclass
class Segment:
    matrix: np.ndarray  # (H, S+A), states then actions per row
    source: tuple = (0, 0)  # (episode_id, start index)


@dataclass
class QueryPair:
    a: Segment
    b: Segment
    pair_id: str

    def __post_init__(self):
        if self.a.matrix.shape != self.b.matrix.shape:
            raise ValueError("pair members must have identical shape")


@dataclass
class PreferenceLabel:
    pair_id: str
    winner: str  # "a" or "b"
    source: str = "oracle"


@dataclass(frozen=True)
class OracleSpec:
    kind: str  # speed | smoothness | curl
    sign: int = 1

    def __post_init__(self):
        if self.kind not in ("speed", "smoothness", "curl"):
            raise ValueError(f"unknown oracle kind: {self.kind!r}")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")


def clamp_action(action):
    action = np.asarray(action, dtype=float)
    norm = np.linalg.norm(action)
    if norm > MAX_ACTION_NORM:
        return action * (MAX_ACTION_NORM / norm)
    return action


def step_dynamics(state, action):
    """Kinematic step: state + dt * action, action norm clamped to 1."""
    return np.asarray(state, dtype=float) + DT * clamp_action(action)


def mode_params(mode_id, n_modes):
    """Scripted controller parameters for one behavior mode.

    Cruise speed is the dominant axis of variation; turn rate increases
    mildly with the mode index, which keeps the per-mode mean curl
    strictly ordered by omega without entangling the speed signal.
    """
    t = mode_id / (n_modes - 1) if n_modes > 1 else 0.0
    omega = 0.05 + (0.20 - 0.05) * t  # rad/s, all counter-clockwise
    speed = 0.25 + (0.95 - 0.25) * t
    return omega, speed


def _generate_episode(mode_id, n_modes, length, rng):
    omega, speed = mode_params(mode_id, n_modes)
    theta0 = rng.uniform(0.0, 2.0 * math.pi)
    states = np.empty((length, 2))
    actions = np.empty((length, 2))
    states[0] = rng.uniform(-0.5, 0.5, size=2)
    for t in range(length):
        heading = theta0 + omega * t * DT + 0.03 * rng.standard_normal()
        v = speed * (1.0 + 0.03 * rng.standard_normal())
        a = clamp_action(v * np.array([math.cos(heading), math.sin(heading)]))
        actions[t] = a
        if t + 1 < length:
            states[t + 1] = states[t] + DT * a
    return states, actions


def generate_corpus(n_episodes, length, n_modes, seed):
    """Scripted quality-diverse corpus; deterministic given seed.

    Modes are assigned round-robin so they stay balanced, and each episode
    draws from an rng derived from (seed, episode index), which makes
    per-episode generation order-independent.
    """
    if n_modes < 2:
        raise ValueError(f"n_modes must be >= 2, got {n_modes}")
    corpus = []
    for ep in range(n_episodes):
        mode_id = ep % n_modes
        rng = np.random.default_rng([seed, ep])
        states, actions = _generate_episode(mode_id, n_modes, length, rng)
        corpus.append(FullTrajectory(states, actions, mode_id, episode_id=ep))
    return corpus


def random_policy_episode(length, rng):
    """Uniform random actions in [-1, 1]^2, clamped; used for score baselines."""
    states = np.empty((length, 2))
    actions = np.empty((length, 2))
    states[0] = rng.uniform(-0.5, 0.5, size=2)
    for t in range(length):
        a = clamp_action(rng.uniform(-1.0, 1.0, size=2))
        actions[t] = a
        if t + 1 < length:
            states[t + 1] = states[t] + DT * a
    return FullTrajectory(states, actions, mode_id=-1, episode_id=-1)


# ---------------------------------------------------------------------------
# Normalization

@dataclass
class Normalizer:
    lo: np.ndarray  # per-dimension minima over the corpus (S+A entries)
    hi: np.ndarray
    degenerate: np.ndarray = None  # dims with hi == lo

    def __post_init__(self):
        if self.degenerate is None:
            self.degenerate = self.hi - self.lo <= 0

    def normalize(self, mat):
        mat = np.asarray(mat, dtype=float)
        span = np.where(self.degenerate, 1.0, self.hi - self.lo)
        out = 2.0 * (mat - self.lo) / span - 1.0
        if self.degenerate.any():
            out[..., self.degenerate] = 0.0
        return out

    def denormalize(self, mat):
        mat = np.asarray(mat, dtype=float)
        span = np.where(self.degenerate, 0.0, self.hi - self.lo)
        out = (mat + 1.0) / 2.0 * span + self.lo
        return out


def segment_matrix(traj: FullTrajectory, start, horizon):
    if start < 0 or start + horizon > traj.length:
        raise ValueError(f"segment [{start}, {start + horizon}) outside episode of length {traj.length}")
    return np.concatenate([traj.states[start : start + horizon], traj.actions[start : start + horizon]], axis=1)


def full_matrix(traj: FullTrajectory):
    return np.concatenate([traj.states, traj.actions], axis=1)


def fit_normalizer(corpus) -> Normalizer:
    """Per-dimension min/max over the whole corpus; maps data into [-1, 1]."""
    stacked = np.concatenate([full_matrix(tr) for tr in corpus], axis=0)
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    if np.any(hi <= lo):
        warnings.warn("degenerate (constant) dimensions map to 0", stacklevel=2)
    return Normalizer(lo=lo, hi=hi)


# ---------------------------------------------------------------------------
# Oracles

def oracle_reward(oracle: OracleSpec, matrix, state_dim=2):
    """Deterministic scalar reward of a segment matrix under an oracle."""
    matrix = np.asarray(matrix, dtype=float)
    states = matrix[:, :state_dim]
    actions = matrix[:, state_dim:]
    if oracle.kind == "speed":
        r = float(np.linalg.norm(actions, axis=1).mean())
    elif oracle.kind == "smoothness":
        r = -float(np.linalg.norm(np.diff(actions, axis=0), axis=1).mean())
    else:  # curl: signed mean cross-product of successive displacements
        d = np.diff(states, axis=0)
        cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
        r = float(cross.mean())
    return oracle.sign * r


def oracle_label(pair: QueryPair, oracle: OracleSpec, tie_tol=1e-9):
    """Label a pair, or return None on a tie (|reward gap| < tie_tol)."""
    ra = oracle_reward(oracle, pair.a.matrix)
    rb = oracle_reward(oracle, pair.b.matrix)
    if abs(ra - rb) < tie_tol:
        return None
    return PreferenceLabel(pair_id=pair.pair_id, winner="a" if ra > rb else "b", source="oracle")


# ---------------------------------------------------------------------------
# Query pairs

def make_query_pairs(corpus, n_query, horizon, seed):
    """Uniformly sampled segment pairs, distinct segments within the batch."""
    n_starts = corpus[0].length - horizon + 1
    if n_starts < 1:
        raise ValueError(f"horizon {horizon} exceeds episode length {corpus[0].length}")
    budget = len(corpus) * n_starts
    if 2 * n_query > budget:
        raise ValueError(f"n_query={n_query} needs {2 * n_query} distinct segments, corpus has {budget}")
    rng = np.random.default_rng(seed)
    flat = rng.choice(budget, size=2 * n_query, replace=False)
    pairs = []
    for i in range(n_query):
        segs = []
        for j in (2 * i, 2 * i + 1):
            ep, start = divmod(int(flat[j]), n_starts)
            segs.append(Segment(segment_matrix(corpus[ep], start, horizon), source=(corpus[ep].episode_id, start)))
        pairs.append(QueryPair(a=segs[0], b=segs[1], pair_id=f"p{seed & 0xFFFFFFFF:08x}-{i:04d}"))
    return pairs


def resolve_labels(pairs, labels, normalizer=None):
    """Map labels back to (winner, loser) segment matrices.

    Unknown pair_ids are rejected.  When a normalizer is given the matrices
    are returned in normalized (model) units.
    """
    by_id = {p.pair_id: p for p in pairs}
    resolved = []
    for lab in labels:
        pair = by_id.get(lab.pair_id)
        if pair is None:
            raise KeyError(f"label references unknown pair_id {lab.pair_id!r}")
        win, lose = (pair.a, pair.b) if lab.winner == "a" else (pair.b, pair.a)
        w, l = win.matrix, lose.matrix
        if normalizer is not None:
            w, l = normalizer.normalize(w), normalizer.normalize(l)
        resolved.append((w, l))
    return resolved


# ---------------------------------------------------------------------------
# File formats (newline-delimited canonical JSON)

def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_corpus(path, corpus):
    with open(path, "w", encoding="utf-8") as fh:
        for tr in corpus:
            fh.write(
                _dumps(
                    {
                        "episode_id": tr.episode_id,
                        "mode_id": tr.mode_id,
                        "states": tr.states.tolist(),
                        "actions": tr.actions.tolist(),
                    }
                )
                + "\n"
            )


def load_corpus(path):
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            corpus.append(
                FullTrajectory(
                    states=np.array(rec["states"], dtype=float),
                    actions=np.array(rec["actions"], dtype=float),
                    mode_id=int(rec["mode_id"]),
                    episode_id=int(rec["episode_id"]),
                )
            )
    return corpus


def save_labels(path, labels, pairs=None, timestamps=None):
    """Write labels as JSONL; segment refs are included when pairs are given."""
    refs = {}
    if pairs:
        refs = {p.pair_id: {"a": list(p.a.source), "b": list(p.b.source)} for p in pairs}
    with open(path, "w", encoding="utf-8") as fh:
        for i, lab in enumerate(labels):
            rec = {
                "pair_id": lab.pair_id,
                "winner": lab.winner,
                "source": lab.source,
                "timestamp": (timestamps[i] if timestamps else 0),
            }
            if lab.pair_id in refs:
                rec["segments"] = refs[lab.pair_id]
            fh.write(_dumps(rec) + "\n")


def load_labels(path, with_refs=False):
    labels, refs = [], {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            labels.append(PreferenceLabel(pair_id=rec["pair_id"], winner=rec["winner"], source=rec["source"]))
            if "segments" in rec:
                refs[rec["pair_id"]] = rec["segments"]
    return (labels, refs) if with_refs else labels


def pairs_from_refs(corpus, refs, horizon):
    """Rebuild QueryPairs from {pair_id: {a: [episode, start], b: ...}}."""
    by_ep = {tr.episode_id: tr for tr in corpus}
    pairs = []
    for pair_id, seg_refs in refs.items():
        segs = {}
        for side in ("a", "b"):
            ep, start = seg_refs[side]
            if ep not in by_ep:
                raise KeyError(f"label {pair_id!r} references unknown episode {ep}")
            segs[side] = Segment(segment_matrix(by_ep[ep], start, horizon), source=(ep, start))
        pairs.append(QueryPair(a=segs["a"], b=segs["b"], pair_id=pair_id))
    return pairs
