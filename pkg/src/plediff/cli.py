"""Command-line entry points.

All subcommands share --config / --seed / --out and operate on a working
directory:

    plediff gen-data  --out run/                       # corpus + manifest
    plediff pretrain  --out run/                       # -> run/model.ckpt
    plediff adapt     --out run/ --oracle speed -n 50  # -> run/embeddings.json
    plediff sample    --out run/ -n 100                # -> run/samples.jsonl
    plediff eval      --out run/ --suite main          # -> run/reports.*
    plediff serve     --out run/ --port 8000
"""

import dataclasses
import hashlib
import json
from pathlib import Path

import click
import numpy as np

from .util import limit_blas_threads

limit_blas_threads(1)

from . import envdata as ed  # noqa: E402
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # noqa: E402
from .config import RunConfig, load_run_config, run_config_to_dict  # noqa: E402
from .evaluation import (  # noqa: E402
    Assets,
    ExperimentPlan,
    baseline_scores,
    run_adapt_sweep,
    run_dim_sweep,
    run_experiment,
    run_prior_sweep,
    run_u_sweep,
    sample_dual,
    sample_null,
    save_reports,
    score_key,
    summarize_stability,
)
from .ple import InversionConfig, invert_preferences  # noqa: E402
from .sampling import GuidanceWeights  # noqa: E402
from .training import PretrainResult, pretrain  # noqa: E402


def _load_config(path, seed):
    cfg = load_run_config(path) if path else RunConfig()
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _out_dir(out):
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_corpus(out):
    path = Path(out) / "corpus.jsonl"
    if not path.exists():
        raise click.ClickException(f"no corpus at {path}; run gen-data first")
    return ed.load_corpus(path)


def _load_manifest(out):
    path = Path(out) / "manifest.json"
    if not path.exists():
        raise click.ClickException(f"no manifest at {path}; run gen-data first")
    return json.loads(path.read_text())


def _result_from_checkpoint(ckpt: Checkpoint) -> PretrainResult:
    from .schedule import make_cosine_schedule

    return PretrainResult(
        params=ckpt.params,
        mapper=ckpt.mapper,
        normalizer=ckpt.normalizer,
        schedule=make_cosine_schedule(ckpt.config.schedule_steps),
        loss_history=np.empty(0),
        config=ckpt.config,
    )


def _load_model(out) -> PretrainResult:
    path = Path(out) / "model.ckpt"
    if not path.exists():
        raise click.ClickException(f"no checkpoint at {path}; run pretrain first")
    ckpt = load_checkpoint(path)
    if ckpt.type != "denoiser":
        raise click.ClickException(f"{path} is a {ckpt.type} checkpoint, expected denoiser")
    return _result_from_checkpoint(ckpt)


shared = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="YAML run config"),
    click.option("--seed", type=int, default=None, help="override the config seed"),
    click.option("--out", type=click.Path(), default="run", show_default=True, help="working directory"),
]


def with_shared(fn):
    for opt in reversed(shared):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Preference-aligned diffusion trajectory planner."""


@main.command("gen-data")
@with_shared
def gen_data(config_path, seed, out):
    """Generate the scripted corpus, manifest and score anchors."""
    cfg = _load_config(config_path, seed)
    out = _out_dir(out)
    corpus = ed.generate_corpus(cfg.env.n_episodes, cfg.env.episode_length, cfg.env.n_modes, cfg.seed)
    ed.save_corpus(out / "corpus.jsonl", corpus)
    oracles = [ed.OracleSpec(kind, sgn) for kind in ("speed", "smoothness", "curl") for sgn in (1, -1)]
    nz = ed.fit_normalizer(corpus)
    manifest = {
        "S": 2,
        "A": 2,
        "L": cfg.env.episode_length,
        "dt": ed.DT,
        "n_modes": cfg.env.n_modes,
        "n_episodes": cfg.env.n_episodes,
        "seed": cfg.seed,
        "horizon": cfg.model.horizon,
        "feature_min": nz.lo.tolist(),
        "feature_max": nz.hi.tolist(),
        "baseline_scores": baseline_scores(corpus, cfg.model.horizon, oracles, seed=cfg.seed),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    click.echo(f"wrote {len(corpus)} episodes to {out / 'corpus.jsonl'}")


@main.command("pretrain")
@with_shared
def pretrain_cmd(config_path, seed, out):
    """Pretrain the conditional denoiser and mapper on the corpus."""
    cfg = _load_config(config_path, seed)
    out = _out_dir(out)
    corpus = _load_corpus(out)
    manifest = _load_manifest(out)
    if manifest["L"] != cfg.env.episode_length or manifest["n_modes"] != cfg.env.n_modes:
        raise click.ClickException(
            f"corpus manifest (L={manifest['L']}, n_modes={manifest['n_modes']}) does not match "
            f"config (L={cfg.env.episode_length}, n_modes={cfg.env.n_modes})"
        )

    def progress(step, loss):
        if step % 500 == 0 or step == 1:
            click.echo(f"update {step}/{cfg.pretrain.n_updates} loss {loss:.4f}")

    result = pretrain(corpus, cfg, progress=progress)
    ckpt = Checkpoint(
        type="denoiser",
        config=cfg,
        params=result.params,
        mapper=result.mapper,
        normalizer=result.normalizer,
    )
    save_checkpoint(out / "model.ckpt", ckpt)
    np.savetxt(out / "pretrain_loss.csv", result.loss_history, header="loss", comments="")
    click.echo(f"saved checkpoint to {out / 'model.ckpt'}")


@main.command()
@with_shared
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None, help="human label file")
@click.option("--oracle", type=str, default=None, help="synthesize labels with this oracle (speed|smoothness|curl)")
@click.option("--n-query", type=int, default=50, show_default=True, help="query pairs for oracle labeling")
@click.option("--n-adapt", type=int, default=None, help="inversion updates (default from config)")
def adapt(config_path, seed, out, labels_path, oracle, n_query, n_adapt):
    """Optimize winner/loser embeddings against the frozen checkpoint."""
    out = _out_dir(out)
    result = _load_model(out)
    cfg = result.config if config_path is None else _load_config(config_path, seed)
    corpus = _load_corpus(out)
    rng_seed = cfg.seed if seed is None else seed

    if labels_path is not None:
        labels, refs = ed.load_labels(labels_path, with_refs=True)
        missing = [l.pair_id for l in labels if l.pair_id not in refs]
        if missing:
            raise click.ClickException(f"label file lacks segment refs for pair_id {missing[0]!r}")
        pairs = ed.pairs_from_refs(corpus, refs, cfg.model.horizon)
    elif oracle is not None:
        spec = ed.OracleSpec(oracle)
        pairs = ed.make_query_pairs(corpus, n_query, cfg.model.horizon, rng_seed)
        labels = [lab for p in pairs if (lab := ed.oracle_label(p, spec)) is not None]
        ed.save_labels(out / "labels.jsonl", labels, pairs)
        click.echo(f"labeled {len(labels)}/{len(pairs)} pairs with oracle {oracle}")
    else:
        raise click.ClickException("provide --labels FILE or --oracle KIND")

    resolved = ed.resolve_labels(pairs, labels, result.normalizer)
    inv = dataclasses.replace(
        cfg.inversion, seed=rng_seed, n_adapt=n_adapt or cfg.inversion.n_adapt
    )
    z_w, z_l, history = invert_preferences(result.params, result.schedule, resolved, inv)
    label_hash = hashlib.sha256(
        json.dumps([(l.pair_id, l.winner) for l in labels], sort_keys=True).encode()
    ).hexdigest()[:16]
    (out / "embeddings.json").write_text(
        json.dumps(
            {
                "z_w": z_w.z.tolist(),
                "z_l": z_l.z.tolist(),
                "n_adapt": inv.n_adapt,
                "n_labels": len(resolved),
                "label_set_hash": label_hash,
                "final_loss": float(history[-1]),
                "seed": rng_seed,
            },
            indent=2,
            sort_keys=True,
        )
    )
    click.echo(f"adapted embeddings written to {out / 'embeddings.json'} (final loss {history[-1]:.4f})")


@main.command()
@with_shared
@click.option("-n", "n_samples", type=int, default=100, show_default=True)
@click.option("--unconditional", is_flag=True, help="sample the unaligned base model")
@click.option("--u", type=float, default=None, help="loser-guidance strength")
@click.option("--v", type=float, default=None, help="guidance strength")
def sample(config_path, seed, out, n_samples, unconditional, u, v):
    """Generate trajectories (environment units) from the checkpoint."""
    out = _out_dir(out)
    result = _load_model(out)
    cfg = result.config
    rng_seed = cfg.seed if seed is None else seed
    weights = GuidanceWeights(
        v=cfg.guidance.v if v is None else v, u=cfg.guidance.u if u is None else u
    )
    if unconditional:
        raw = sample_null(result.params, result.schedule, n_samples, rng_seed)
    else:
        emb_path = out / "embeddings.json"
        if not emb_path.exists():
            raise click.ClickException(f"no embeddings at {emb_path}; run adapt first (or pass --unconditional)")
        emb = json.loads(emb_path.read_text())
        raw = sample_dual(
            result.params, result.schedule, np.array(emb["z_w"]), np.array(emb["z_l"]), weights, n_samples, rng_seed
        )
    spec = ed.OracleSpec(cfg.oracle)
    with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
        for s in raw:
            mat = result.normalizer.denormalize(s)
            rec = {
                "states": mat[:, :2].tolist(),
                "actions": mat[:, 2:].tolist(),
                "oracle": cfg.oracle,
                "reward": ed.oracle_reward(spec, mat),
            }
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    click.echo(f"wrote {n_samples} samples to {out / 'samples.jsonl'}")


@main.command("eval")
@with_shared
@click.option(
    "--suite",
    type=click.Choice(["main", "stability", "loser", "prior", "dimension"]),
    default="main",
    show_default=True,
)
@click.option("--methods", type=str, default="inversion,diffuser", show_default=True)
@click.option("--n-samples", type=int, default=100, show_default=True)
@click.option("--seeds", type=str, default="0,1,2,3,4", show_default=True)
def eval_cmd(config_path, seed, out, suite, methods, n_samples, seeds):
    """Run the experiment harness and write reports + tables."""
    out = _out_dir(out)
    result = _load_model(out)
    cfg = result.config
    corpus = _load_corpus(out)
    manifest = _load_manifest(out)
    assets = Assets(result=result, corpus=corpus, scores=manifest["baseline_scores"])
    plan = ExperimentPlan(
        methods=tuple(m.strip() for m in methods.split(",")),
        seeds=tuple(int(s) for s in seeds.split(",")),
        n_adapt=cfg.inversion.n_adapt,
        n_samples=n_samples,
        oracle=ed.OracleSpec(cfg.oracle),
        weights=cfg.guidance,
        prior=cfg.inversion.prior,
    )
    extra = {}
    if suite == "main":
        reports = run_experiment(assets, plan)
    elif suite == "stability":
        reports = run_adapt_sweep(assets, plan)
        extra = summarize_stability(reports)
    elif suite == "loser":
        reports = run_u_sweep(assets, plan)
    elif suite == "prior":
        reports = run_prior_sweep(assets, plan)
    else:
        reports = run_dim_sweep(corpus, cfg, plan)
    save_reports(out / "reports.jsonl", out / "table.csv", reports)
    if extra:
        (out / "stability.json").write_text(json.dumps(extra, indent=2, sort_keys=True))
    for r in reports:
        tag = ", ".join(f"{k}={v}" for k, v in r.extra.items() if k != "sweep")
        click.echo(
            f"{r.method:14s} n_query={r.n_query:4d} n_adapt={r.n_adapt:6d} {tag:16s} "
            f"win_rate={r.win_rate_vs_base:.3f} score={r.normalized_score:.1f}"
        )
    click.echo(f"reports in {out / 'reports.jsonl'} and {out / 'table.csv'}")


@main.command()
@with_shared
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--n-query", type=int, default=100, show_default=True, help="pairs issued per session")
def serve(config_path, seed, out, port, host, n_query):
    """Serve the labeling/adaptation HTTP API (and the UI if built)."""
    import errno

    import uvicorn

    from .service import LabelService, create_app

    out = _out_dir(out)
    result = _load_model(out)
    corpus = _load_corpus(out)
    service = LabelService(
        result, corpus, out, oracle=ed.OracleSpec(result.config.oracle), default_n_query=n_query
    )
    static = Path(__file__).resolve().parent.parent.parent / "frontend"
    app = create_app(service, static_dir=static if (static / "index.html").is_file() else None)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise click.ClickException(f"port {port} is already in use")
        raise


if __name__ == "__main__":
    main()
