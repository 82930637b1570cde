"""Metrics and experiment harnesses.

Reproduces the evaluation protocol at desk scale: normalized scores against
scripted random/expert controllers, oracle win-rate comparisons between
sample sets, a linear probe + PCA export over the latent space, and sweep
harnesses over query counts, adaptation lengths, loser-guidance strength,
priors and embedding dimensions.
"""

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines as bl
from .envdata import (
    OracleSpec,
    full_matrix,
    make_query_pairs,
    oracle_label,
    oracle_reward,
    random_policy_episode,
    resolve_labels,
    segment_matrix,
)
from .ple import InversionConfig, PriorSpec, invert_preferences, map_trajectory
from .sampling import GuidanceWeights, ancestral_sample_batch, dual_cfg_predict, predict_batch


def normalized_score(score, random_score, expert_score):
    """100 * (score - random) / (expert - random); may leave [0, 100]."""
    denom = expert_score - random_score
    if denom == 0:
        raise ValueError("expert_score equals random_score")
    return 100.0 * (score - random_score) / denom


def win_rate(samples_a, samples_b, oracle: OracleSpec, seed):
    """Fraction of seeded pairings where the oracle prefers an a-sample.

    Both sides are truncated to the same count and paired through one
    shared permutation, which makes win_rate(a,b) + win_rate(b,a) = 1 exact
    under the same seed.  Ties count one half.
    """
    if len(samples_a) == 0 or len(samples_b) == 0:
        raise ValueError("sample lists must be nonempty")
    n = min(len(samples_a), len(samples_b))
    perm = np.random.default_rng(seed).permutation(n)
    total = 0.0
    for j in perm:
        ra = oracle_reward(oracle, samples_a[j])
        rb = oracle_reward(oracle, samples_b[j])
        total += 0.5 if ra == rb else float(ra > rb)
    return total / n


# ---------------------------------------------------------------------------
# scripted controllers for score anchors

def baseline_scores(corpus, horizon, oracles, seed=0, n_random=200):
    """Random-policy and best-mode score anchors for normalized_score.

    The random anchor averages oracle reward over segments of scripted
    random-action episodes; the expert anchor is the best per-mode mean
    over the corpus itself.
    """
    rng = np.random.default_rng(seed)
    length = corpus[0].length
    rand_segs = []
    for _ in range(n_random):
        tr = random_policy_episode(length, rng)
        start = int(rng.integers(0, length - horizon + 1))
        rand_segs.append(segment_matrix(tr, start, horizon))

    by_mode = {}
    for tr in corpus:
        by_mode.setdefault(tr.mode_id, []).append(tr)
    out = {}
    for oracle in oracles:
        rnd = float(np.mean([oracle_reward(oracle, s) for s in rand_segs]))
        mode_means = []
        for mode, eps in sorted(by_mode.items()):
            segs = [segment_matrix(tr, (length - horizon) // 2, horizon) for tr in eps]
            mode_means.append(float(np.mean([oracle_reward(oracle, s) for s in segs])))
        key = f"{oracle.kind}{'+' if oracle.sign > 0 else '-'}"
        out[key] = {"random_score": rnd, "expert_score": max(mode_means)}
    return out


def score_key(oracle: OracleSpec):
    return f"{oracle.kind}{'+' if oracle.sign > 0 else '-'}"


# ---------------------------------------------------------------------------
# latent probe

def latent_probe(mapper, corpus, normalizer, oracle: OracleSpec = None, seed=0):
    """Probe accuracy of mode_id from the embeddings + 2-D PCA export.

    Fits a multinomial logistic probe on an 80/20 split (no feature
    rescaling, default regularization) and reports held-out accuracy.  The
    PCA projection uses a fixed sign convention so exports are
    deterministic.  Returns (accuracy, projection (n, 2), rewards (n,)).
    """
    from sklearn.linear_model import LogisticRegression

    modes = np.array([tr.mode_id for tr in corpus])
    counts = np.bincount(modes)
    if counts.min() < 10:
        raise ValueError(f"need >= 10 episodes per mode, got counts {counts.tolist()}")
    zs = np.stack([map_trajectory(mapper, normalizer.normalize(full_matrix(tr))).z for tr in corpus])

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(corpus))
    n_train = int(0.8 * len(corpus))
    tr_idx, te_idx = perm[:n_train], perm[n_train:]
    probe = LogisticRegression(max_iter=2000, random_state=0)
    probe.fit(zs[tr_idx], modes[tr_idx])
    accuracy = float(probe.score(zs[te_idx], modes[te_idx]))

    centered = zs - zs.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(2):  # sign convention: largest-magnitude loading positive
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    projection = centered @ comps.T

    oracle = oracle or OracleSpec("speed")
    rewards = np.array([oracle_reward(oracle, full_matrix(tr)) for tr in corpus])
    return accuracy, projection, rewards


# ---------------------------------------------------------------------------
# sampling helpers shared by harness and service

def sample_null(params, schedule, n, seed, constraints=None):
    """Unconditional (null-context) ancestral samples, normalized units."""
    shape = (params.config.horizon, params.config.feature_dim)

    def predict(x, k):
        return predict_batch(params, x, k, None)

    return ancestral_sample_batch(predict, schedule, shape, n, seed, constraints)


def sample_dual(params, schedule, z_w, z_l, weights, n, seed, constraints=None):
    """Dual winner/loser guided samples, normalized units."""
    shape = (params.config.horizon, params.config.feature_dim)

    def predict(x, k):
        return dual_cfg_predict(params, x, k, z_w, z_l, weights)

    return ancestral_sample_batch(predict, schedule, shape, n, seed, constraints)


def derive_seed(*parts):
    """Stable 64-bit seed from a tuple of integers/strings."""
    ints = []
    for p in parts:
        if isinstance(p, str):
            ints.extend(p.encode("utf-8"))
        else:
            ints.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# experiment harness

METHODS = ("inversion", "diffuser", "guided", "finetune_full", "finetune_lora")


@dataclass
class ExperimentPlan:
    methods: tuple = ("inversion", "diffuser")
    n_queries: tuple = (10, 25, 50, 100)
    seeds: tuple = (0, 1, 2, 3, 4)
    n_adapt: int = 5000
    n_samples: int = 100
    oracle: OracleSpec = field(default_factory=lambda: OracleSpec("speed"))
    weights: GuidanceWeights = field(default_factory=GuidanceWeights)
    prior: PriorSpec = field(default_factory=PriorSpec)


@dataclass
class EvalReport:
    method: str
    n_query: int
    n_adapt: int
    seeds: list
    per_seed_mean_reward: list
    per_seed_win_rate: list
    win_rate_vs_base: float
    normalized_score: float
    runtime_seconds: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)


def _labeled_pairs(assets, n_query, oracle, seed):
    pairs = make_query_pairs(assets.corpus, n_query, assets.result.config.model.horizon, seed)
    labels = [lab for p in pairs if (lab := oracle_label(p, oracle)) is not None]
    if not labels:
        raise ValueError("every query pair tied under the oracle")
    return resolve_labels(pairs, labels, assets.result.normalizer)


def adapt_method(assets, method, resolved, n_adapt, seed, plan):
    """Run one method's adaptation; returns a sampler closure (n, seed) -> samples."""
    res = assets.result
    params, sched = res.params, res.schedule
    if method == "diffuser":
        return lambda n, s: sample_null(params, sched, n, s)
    if method == "inversion":
        inv = InversionConfig(n_adapt=n_adapt, seed=seed, prior=plan.prior)
        z_w, z_l, _ = invert_preferences(params, sched, resolved, inv)
        return lambda n, s: sample_dual(params, sched, z_w.z, z_l.z, plan.weights, n, s)
    if method == "guided":
        rm, _, _ = bl.train_reward_model(resolved, bl.RewardTrainConfig(seed=seed))
        shape = (params.config.horizon, params.config.feature_dim)
        return lambda n, s: bl.guided_sample_batch(params, rm, sched, plan.weights, shape, n, s)
    if method == "finetune_full":
        cfg = bl.FinetuneConfig(n_updates=n_adapt, seed=seed)
        tuned, _, _ = bl.finetune_full(params, resolved, sched, cfg)
        return lambda n, s: sample_null(tuned, sched, n, s)
    if method == "finetune_lora":
        cfg = bl.FinetuneConfig(n_updates=n_adapt, seed=seed)
        deltas, _, _ = bl.finetune_lora(params, resolved, sched, cfg)
        tuned = bl.apply_deltas(params, deltas)
        return lambda n, s: sample_null(tuned, sched, n, s)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _denorm_all(normalizer, samples):
    return [normalizer.denormalize(s) for s in samples]


def run_cell(assets, method, n_query, n_adapt, seed, plan):
    """One (method, n_query, seed) cell: adapt, sample, score against base."""
    res = assets.result
    resolved = _labeled_pairs(assets, n_query, plan.oracle, derive_seed(seed, "pairs", n_query))
    sampler = adapt_method(assets, method, resolved, n_adapt, seed, plan)
    samples = _denorm_all(res.normalizer, sampler(plan.n_samples, derive_seed(seed, "samples")))
    base = _denorm_all(
        res.normalizer, sample_null(res.params, res.schedule, plan.n_samples, derive_seed(seed, "base"))
    )
    mean_reward = float(np.mean([oracle_reward(plan.oracle, s) for s in samples]))
    wr = win_rate(samples, base, plan.oracle, derive_seed(seed, "pairing"))
    return mean_reward, wr


def run_experiment(assets, plan: ExperimentPlan):
    """Full (method x n_query) grid over the plan's seeds."""
    reports = []
    anchors = assets.scores[score_key(plan.oracle)]
    for method in plan.methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        for n_query in plan.n_queries:
            t0 = time.perf_counter()
            rewards, wrs = [], []
            for seed in plan.seeds:
                mr, wr = run_cell(assets, method, n_query, plan.n_adapt, seed, plan)
                rewards.append(mr)
                wrs.append(wr)
            reports.append(
                EvalReport(
                    method=method,
                    n_query=n_query,
                    n_adapt=plan.n_adapt,
                    seeds=list(plan.seeds),
                    per_seed_mean_reward=rewards,
                    per_seed_win_rate=wrs,
                    win_rate_vs_base=float(np.mean(wrs)),
                    normalized_score=normalized_score(
                        float(np.mean(rewards)), anchors["random_score"], anchors["expert_score"]
                    ),
                    runtime_seconds=time.perf_counter() - t0,
                )
            )
    return reports


@dataclass
class Assets:
    """Everything a harness cell needs: pretrained model + data + anchors."""

    result: object  # PretrainResult
    corpus: list
    scores: dict  # oracle key -> {random_score, expert_score}


# ---------------------------------------------------------------------------
# ablation sweeps

ADAPT_SWEEP_STEPS = (1000, 5000, 15000, 20000, 30000)
U_SWEEP = (0.0, 0.005, 0.02, 0.05, 0.1)
DIM_SWEEP = (2, 4, 8, 16, 32)
PRIOR_SWEEP = ("uniform01", "gaussian_half", "fixed_half")


def _wr_of_samples(assets, samples_norm, plan, seed):
    res = assets.result
    samples = _denorm_all(res.normalizer, samples_norm)
    base = _denorm_all(
        res.normalizer, sample_null(res.params, res.schedule, plan.n_samples, derive_seed(seed, "base"))
    )
    return win_rate(samples, base, plan.oracle, derive_seed(seed, "pairing"))


def run_adapt_sweep(assets, plan, n_query=50, steps=ADAPT_SWEEP_STEPS, methods=("inversion", "finetune_full")):
    """Win-rate as a function of adaptation length (one run, snapshots)."""
    res = assets.result
    by_cell = {m: {s: [] for s in steps} for m in methods}
    for seed in plan.seeds:
        resolved = _labeled_pairs(assets, n_query, plan.oracle, derive_seed(seed, "pairs", n_query))
        if "inversion" in methods:
            inv = InversionConfig(n_adapt=max(steps), seed=seed, prior=plan.prior)
            _, _, _, snaps = invert_preferences(res.params, res.schedule, resolved, inv, snapshot_steps=steps)
            for s in steps:
                z_w, z_l = snaps[s]
                samples = sample_dual(
                    res.params, res.schedule, z_w.z, z_l.z, plan.weights, plan.n_samples, derive_seed(seed, "samples", s)
                )
                by_cell["inversion"][s].append(_wr_of_samples(assets, samples, plan, seed))
        if "finetune_full" in methods:
            cfg = bl.FinetuneConfig(n_updates=max(steps), seed=seed)
            _, _, snaps = bl.finetune_full(res.params, resolved, res.schedule, cfg, snapshot_steps=steps)
            for s in steps:
                samples = sample_null(snaps[s], res.schedule, plan.n_samples, derive_seed(seed, "samples", s))
                by_cell["finetune_full"][s].append(_wr_of_samples(assets, samples, plan, seed))
    reports = []
    for method in methods:
        for s in steps:
            wrs = by_cell[method][s]
            reports.append(
                EvalReport(
                    method=method,
                    n_query=n_query,
                    n_adapt=s,
                    seeds=list(plan.seeds),
                    per_seed_mean_reward=[],
                    per_seed_win_rate=wrs,
                    win_rate_vs_base=float(np.mean(wrs)),
                    normalized_score=float("nan"),
                    runtime_seconds=0.0,
                    extra={"sweep": "n_adapt"},
                )
            )
    return reports


def summarize_stability(reports):
    """Stability claims from an adaptation-length sweep.

    The inversion route should hold >= 90% of its 5000-step win-rate at
    20000 steps; full finetuning is expected to decline by >= 5 points from
    its own peak to 30000 steps, and the summary flags the claim as not
    reproduced at this scale when it does not.
    """
    inv = {r.n_adapt: r.win_rate_vs_base for r in reports if r.method == "inversion"}
    ft = {r.n_adapt: r.win_rate_vs_base for r in reports if r.method == "finetune_full"}
    out = {}
    if inv:
        out["inversion_wr_5000"] = inv.get(5000)
        out["inversion_wr_20000"] = inv.get(20000)
        out["inversion_stable"] = inv.get(20000, 0.0) >= 0.9 * inv.get(5000, 0.0)
    if ft:
        peak = max(ft.values())
        decline_points = 100.0 * (peak - ft[max(ft)])
        out["finetune_peak_wr"] = peak
        out["finetune_final_wr"] = ft[max(ft)]
        out["finetune_decline_points"] = decline_points
        out["finetune_decline_reproduced"] = decline_points >= 5.0
        if not out["finetune_decline_reproduced"]:
            out["flags"] = ["finetune-decline-not-reproduced-at-desk-scale"]
    return out


def run_u_sweep(assets, plan, n_query=50, us=U_SWEEP):
    """Loser-influence ablation; embeddings are inverted once per seed."""
    res = assets.result
    by_u = {u: [] for u in us}
    for seed in plan.seeds:
        resolved = _labeled_pairs(assets, n_query, plan.oracle, derive_seed(seed, "pairs", n_query))
        inv = InversionConfig(n_adapt=plan.n_adapt, seed=seed, prior=plan.prior)
        z_w, z_l, _ = invert_preferences(res.params, res.schedule, resolved, inv)
        for u in us:
            w = GuidanceWeights(v=plan.weights.v, u=u)
            samples = sample_dual(
                res.params, res.schedule, z_w.z, z_l.z, w, plan.n_samples, derive_seed(seed, "samples")
            )
            by_u[u].append(_wr_of_samples(assets, samples, plan, seed))
    return [
        EvalReport(
            method="inversion",
            n_query=n_query,
            n_adapt=plan.n_adapt,
            seeds=list(plan.seeds),
            per_seed_mean_reward=[],
            per_seed_win_rate=by_u[u],
            win_rate_vs_base=float(np.mean(by_u[u])),
            normalized_score=float("nan"),
            runtime_seconds=0.0,
            extra={"sweep": "u", "u": u},
        )
        for u in us
    ]


def run_prior_sweep(assets, plan, n_query=50, priors=PRIOR_SWEEP):
    """Initialization-prior ablation for the inversion method."""
    reports = []
    for kind in priors:
        wrs = []
        for seed in plan.seeds:
            resolved = _labeled_pairs(assets, n_query, plan.oracle, derive_seed(seed, "pairs", n_query))
            inv = InversionConfig(n_adapt=plan.n_adapt, seed=seed, prior=PriorSpec(kind))
            z_w, z_l, _ = invert_preferences(assets.result.params, assets.result.schedule, resolved, inv)
            samples = sample_dual(
                assets.result.params,
                assets.result.schedule,
                z_w.z,
                z_l.z,
                plan.weights,
                plan.n_samples,
                derive_seed(seed, "samples"),
            )
            wrs.append(_wr_of_samples(assets, samples, plan, seed))
        reports.append(
            EvalReport(
                method="inversion",
                n_query=n_query,
                n_adapt=plan.n_adapt,
                seeds=list(plan.seeds),
                per_seed_mean_reward=[],
                per_seed_win_rate=wrs,
                win_rate_vs_base=float(np.mean(wrs)),
                normalized_score=float("nan"),
                runtime_seconds=0.0,
                extra={"sweep": "prior", "prior": kind},
            )
        )
    return reports


def run_dim_sweep(corpus, base_config, plan, n_query=50, dims=DIM_SWEEP):
    """Embedding-dimension ablation; pretrains one model per dimension."""
    import dataclasses as dc

    from .training import pretrain

    reports = []
    for d_e in dims:
        cfg = dc.replace(base_config, model=dc.replace(base_config.model, ple_dim=d_e))
        result = pretrain(corpus, cfg)
        assets = Assets(result=result, corpus=corpus, scores={})
        wrs = []
        for seed in plan.seeds:
            resolved = _labeled_pairs(assets, n_query, plan.oracle, derive_seed(seed, "pairs", n_query))
            inv = InversionConfig(n_adapt=plan.n_adapt, seed=seed, prior=plan.prior)
            z_w, z_l, _ = invert_preferences(result.params, result.schedule, resolved, inv)
            samples = sample_dual(
                result.params, result.schedule, z_w.z, z_l.z, plan.weights, plan.n_samples, derive_seed(seed, "samples")
            )
            wrs.append(_wr_of_samples(assets, samples, plan, seed))
        reports.append(
            EvalReport(
                method="inversion",
                n_query=n_query,
                n_adapt=plan.n_adapt,
                seeds=list(plan.seeds),
                per_seed_mean_reward=[],
                per_seed_win_rate=wrs,
                win_rate_vs_base=float(np.mean(wrs)),
                normalized_score=float("nan"),
                runtime_seconds=0.0,
                extra={"sweep": "d_e", "d_e": d_e},
            )
        )
    return reports


def save_reports(path_jsonl, path_csv, reports):
    with open(path_jsonl, "w", encoding="utf-8") as fh:
        for r in sorted(reports, key=lambda r: (r.method, r.n_query, r.n_adapt)):
            fh.write(json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")
    with open(path_csv, "w", encoding="utf-8") as fh:
        fh.write("method,n_query,n_adapt,seed,metric,value\n")
        for r in sorted(reports, key=lambda r: (r.method, r.n_query, r.n_adapt)):
            for seed, mr, wr in zip(r.seeds, r.per_seed_mean_reward, r.per_seed_win_rate):
                fh.write(f"{r.method},{r.n_query},{r.n_adapt},{seed},mean_reward,{mr!r}\n")
                fh.write(f"{r.method},{r.n_query},{r.n_adapt},{seed},win_rate,{wr!r}\n")
            fh.write(f"{r.method},{r.n_query},{r.n_adapt},-1,normalized_score,{r.normalized_score!r}\n")
