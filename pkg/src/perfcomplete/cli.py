"""Command-line interface: ``perfcomplete <command> [flags]``.

Every command is deterministic given its flags. Failures print a single line
``error: <what>: <detail>`` on stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .active import STRATEGIES, ActiveConfig, run_active
from .analysis import dimension_sweep, informativeness, profile_effect, singular_spectrum, write_rows
from .inference import FitResult, build_model, fit
from .models import VARIANTS, ModelSpec
from .predict import (PredictionReport, evaluate, global_mean_baseline, mean_of_means_baseline, predict,
                      write_json, write_prediction_csv)
from .profiles import load_profiles
from .sampler import PosteriorSamples, SamplerConfig
from .synth import PLANTS, generate
from .tensor import ScoreTensor, load_scores, split_mask, write_scores, write_validity


class CLIError(Exception):
    def __init__(self, what, detail):
        super().__init__(f"{what}: {detail}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: usage: {message}\n")


# hard defaults; a --config file overrides these and explicit flags override both
DEFAULTS = {
    "variant": "PMF", "d": 5, "tune": 500, "draws": 100, "seed": 0, "chains": 1,
    "target_accept": 0.8, "max_depth": 10, "noise": None, "eta": 2.0, "lam": 1.0,
    "test_ratio": 0.2, "init": 0.2, "batch": 0.05, "budget": 0.1, "seeds": 10,
    "threads": os.cpu_count() or 1, "m": 40, "n": 60, "s": 1, "which": "global",
    "strategy": "uncertainty", "axis": "model", "dims": "1,2,5,10", "plant": None,
    "metric": None, "train_ratio": 0.2, "validity": None, "profiles": None, "cluster_k": None,
}


def _spec(a) -> ModelSpec:
    return ModelSpec(variant=a.variant, D=a.d, eta=a.eta, lam=a.lam, noise=a.noise)


def _sampler(a, seed=None) -> SamplerConfig:
    return SamplerConfig(n_tune=a.tune, n_draws=a.draws, target_accept=a.target_accept,
                         max_tree_depth=a.max_depth, seed=a.seed if seed is None else seed,
                         n_chains=a.chains)


def _ratio(value, flag):
    if value is None or not 0.0 < value < 1.0:
        raise CLIError(f"--{flag}", f"must lie in (0, 1), got {value}")
    return value


def _load(a) -> ScoreTensor:
    if not Path(a.scores).exists():
        raise CLIError("--scores", f"no such file {a.scores}")
    return load_scores(a.scores, validity=a.validity)


def _profiles(a, tensor):
    if a.profiles is None:
        return None
    return load_profiles(a.profiles, tensor.model_ids, tensor.dataset_ids,
                         cluster_k=a.cluster_k, seed=a.seed)


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True)


# ---------------------------------------------------------------- commands

def cmd_synth(a):
    spec = ModelSpec(variant=a.variant, D=a.d, eta=a.eta, lam=a.lam)
    tensor, state, profiles = generate(spec, a.m, a.n, a.s, a.noise_sd, a.seed, plant=a.plant)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(tensor, out / "scores.csv")
    write_validity(tensor, out / "validity.csv")
    (out / "state.json").write_text(state.to_json(spec) + "\n", encoding="utf-8")
    if profiles is not None:
        profiles.save(out / "profiles", tensor.model_ids, tensor.dataset_ids)
    return {"out": str(out), "shape": list(tensor.shape)}


def _run_config(a) -> dict:
    def absolute(p):
        return None if p is None else str(Path(p).resolve())
    return {"scores": absolute(a.scores), "validity": absolute(a.validity),
            "profiles": absolute(a.profiles),
            "cluster_k": a.cluster_k, "test_ratio": a.test_ratio, "split_seed": a.seed,
            "spec": _spec(a).to_dict(),
            "sampler": {"n_tune": a.tune, "n_draws": a.draws, "target_accept": a.target_accept,
                        "max_tree_depth": a.max_depth, "seed": a.seed, "n_chains": a.chains},
            "meta": {"version": __version__}}


def cmd_fit(a):
    _ratio(a.test_ratio, "test-ratio")
    tensor = _load(a)
    spec, cfg = _spec(a), _sampler(a)
    profiles = _profiles(a, tensor)
    split = split_mask(tensor, a.test_ratio, a.seed)
    res = fit(tensor, split.train, spec, cfg, profiles)
    report = predict(res)
    metrics = {"model": evaluate(report.mean, tensor, split.test),
               "global_mean": evaluate(global_mean_baseline(tensor, split.train), tensor, split.test),
               "mean_of_means": evaluate(mean_of_means_baseline(tensor, split.train), tensor, split.test)}
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _run_config(a)
    config["normalizer"] = res.normalizer.to_dict()
    write_json(out / "config.json", config)
    samples = res.samples.to_dict()
    samples["blocks"] = {k: [v.start, v.stop] for k, v in res.model.layout.slices.items()}
    (out / "samples.json").write_text(_json_text(samples) + "\n", encoding="utf-8")
    write_prediction_csv(out / "predictions.csv", tensor, report, split.test)
    write_json(out / "metrics.json", metrics)
    write_json(out / "diagnostics.json", res.samples.diagnostics())
    return {"out": str(out), "rmse": metrics["model"]["overall"]["rmse"]}


def load_run(run_dir) -> tuple[FitResult, ScoreTensor, np.ndarray]:
    """Rebuild the fit stored in a run directory from its config and samples."""
    from .tensor import Normalizer

    run = Path(run_dir)
    for name in ("config.json", "samples.json"):
        if not (run / name).exists():
            raise CLIError("--run", f"missing {name} in {run}")
    config = json.loads((run / "config.json").read_text(encoding="utf-8"))
    tensor = load_scores(config["scores"], validity=config.get("validity"))
    spec = ModelSpec.from_dict(config["spec"])
    profiles = None
    if config.get("profiles"):
        profiles = load_profiles(config["profiles"], tensor.model_ids, tensor.dataset_ids,
                                 cluster_k=config.get("cluster_k"), seed=config["split_seed"])
    split = split_mask(tensor, config["test_ratio"], config["split_seed"])
    norm = Normalizer.from_dict(config["normalizer"])
    model, _ = build_model(tensor, split.train, spec, profiles, normalizer=norm)
    samples = PosteriorSamples.from_dict(
        json.loads((run / "samples.json").read_text(encoding="utf-8")))
    cfg = SamplerConfig(**config["sampler"])
    return FitResult(spec, cfg, model, norm, samples, profiles), tensor, split.test


def cmd_predict(a):
    res, tensor, test = load_run(a.run)
    write_prediction_csv(a.out, tensor, predict(res), test)
    return {"out": str(a.out)}


def cmd_baseline(a):
    _ratio(a.test_ratio, "test-ratio")
    tensor = _load(a)
    split = split_mask(tensor, a.test_ratio, a.seed)
    fn = {"global": global_mean_baseline, "means": mean_of_means_baseline}[a.which]
    pred = fn(tensor, split.train)
    write_prediction_csv(a.out, tensor, PredictionReport(pred, np.zeros_like(pred)), split.test)
    return {"out": str(a.out), "metrics": evaluate(pred, tensor, split.test)["overall"]}


def cmd_active(a):
    for flag in ("init", "batch", "budget"):
        _ratio(getattr(a, flag), flag)
    tensor = _load(a)
    strategies = [s.strip() for s in a.strategy.split(",")]
    for s in strategies:
        if s not in STRATEGIES:
            raise CLIError("--strategy", f"unknown strategy {s!r}")
    cfg = ActiveConfig(strategies[0], a.init, a.batch, a.budget,
                       tuple(range(a.seed, a.seed + a.seeds)), _spec(a), _sampler(a))
    curve = run_active(tensor, cfg, strategies, profiles=_profiles(a, tensor), threads=a.threads)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    curve.write_csv(out / "curve.csv")
    curve.write_raw_csv(out / "raw.csv")
    return {"out": str(out)}


def _main_matrix(tensor: ScoreTensor, metric):
    s = 0 if metric is None else tensor.metric_ids.index(metric)
    if not tensor.observed[:, :, s].all():
        raise CLIError("--scores", "spectrum needs a fully observed matrix for the chosen metric")
    return tensor.values[:, :, s]


def cmd_analyze(a):
    out = Path(a.out)
    if a.analysis == "spectrum":
        tensor = _load(a)
        sig = singular_spectrum(_main_matrix(tensor, a.metric))
        write_rows(out, ["index", "sigma"], [(i, float(x)) for i, x in enumerate(sig)])
    elif a.analysis == "sweep":
        _ratio(a.test_ratio, "test-ratio")
        tensor = _load(a)
        dims = [int(x) for x in str(a.dims).split(",")]
        rows = dimension_sweep(tensor, dims, _spec(a), _sampler(a), a.test_ratio, a.seed,
                               _profiles(a, tensor))
        write_rows(out, ["D", "train_rmse", "test_rmse"],
                   [(r["D"], r["train_rmse"], r["test_rmse"]) for r in rows])
    elif a.analysis == "effect":
        if a.run is None or a.feature is None:
            raise CLIError("--run/--feature", "effect analysis needs a run directory and a feature")
        res, tensor, _ = load_run(a.run)
        eff = profile_effect(res, a.feature)
        write_rows(out, ["dataset_id", "effect"], list(zip(tensor.dataset_ids, map(float, eff))))
    elif a.analysis == "informativeness":
        tensor = _load(a)
        _ratio(a.train_ratio, "train-ratio")
        train = split_mask(tensor, 1.0 - a.train_ratio, a.seed).train
        ranked = informativeness(tensor, train, _spec(a), _sampler(a), a.axis, _profiles(a, tensor),
                                 threads=a.threads)
        write_rows(out, ["entity_id", "delta_rmse"], ranked)
    return {"out": str(out)}


# ---------------------------------------------------------------- parser

def _model_flags(p, noise=True):
    p.add_argument("--variant", choices=VARIANTS, help="factor model (default PMF)")
    p.add_argument("--d", type=int, help="latent dimension D (default 5)")
    if noise:
        p.add_argument("--noise", type=float, help="fixed observation sd; learned when omitted")
    p.add_argument("--eta", type=float, help="LKJ shape for BPTF/BCPTF (default 2)")
    p.add_argument("--lam", type=float, help="Exponential rate of the scale prior (default 1)")


def _sampler_flags(p):
    p.add_argument("--tune", type=int, help="tuning iterations (default 500)")
    p.add_argument("--draws", type=int, help="post-tuning draws per chain (default 100)")
    p.add_argument("--chains", type=int, help="number of chains (default 1)")
    p.add_argument("--target-accept", type=float, help="dual-averaging target (default 0.8)")
    p.add_argument("--max-depth", type=int, help="maximum NUTS tree depth (default 10)")


def _data_flags(p, scores=True):
    if scores:
        p.add_argument("--scores", help="long-csv or json score file")
    p.add_argument("--validity", help="optional dataset_id,metric_id,valid CSV")
    p.add_argument("--profiles", help="directory with H.csv+G.csv or model_features.csv+dataset_embeddings.csv")
    p.add_argument("--cluster-k", type=int, help="dataset embedding clusters (elbow when omitted)")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = _Parser(prog="perfcomplete", description=__doc__.splitlines()[0], argument_default=S)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON file of flag values; explicit flags take precedence")
    p.add_argument("--threads", type=int, help="worker processes for independent seeds")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic score tensor", argument_default=S)
    s.add_argument("--out", required=True, help="output directory")
    _model_flags(s, noise=False)
    for flag in ("m", "n", "s"):
        s.add_argument(f"--{flag}", type=int, help=f"{flag.upper()} (models, datasets, metrics)")
    s.add_argument("--noise", dest="noise_sd", type=float,
                   help="observation noise sd of the generated scores (default 0.1)")
    s.add_argument("--seed", type=int, help="random seed (default 0)")
    s.add_argument("--plant", choices=PLANTS, help="planted structure")

    f = sub.add_parser("fit", help="fit a model on a train split and report test metrics",
                       argument_default=S)
    _data_flags(f)
    f.add_argument("--test-ratio", type=float, help="fraction of observed cells held out (default 0.2)")
    _model_flags(f)
    _sampler_flags(f)
    f.add_argument("--seed", type=int, help="split and sampler seed (default 0)")
    f.add_argument("--out", required=True, help="run directory")

    pr = sub.add_parser("predict", help="write predictions of a stored run", argument_default=S)
    pr.add_argument("--run", required=True, help="run directory written by fit")
    pr.add_argument("--out", required=True, help="prediction CSV path")

    b = sub.add_parser("baseline", help="global-mean or mean-of-means predictions", argument_default=S)
    _data_flags(b)
    b.add_argument("--test-ratio", type=float, help="fraction held out (default 0.2)")
    b.add_argument("--which", choices=("global", "means"), help="baseline (default global)")
    b.add_argument("--seed", type=int, help="split seed (default 0)")
    b.add_argument("--out", required=True, help="prediction CSV path")

    ac = sub.add_parser("active", help="simulate active evaluation", argument_default=S)
    _data_flags(ac)
    ac.add_argument("--strategy", help="comma-separated subset of uncertainty,random,oracle")
    ac.add_argument("--init", type=float, help="initially observed fraction (default 0.2)")
    ac.add_argument("--batch", type=float, help="fraction revealed per round (default 0.05)")
    ac.add_argument("--budget", type=float, help="total fraction revealed (default 0.1)")
    ac.add_argument("--seeds", type=int, help="number of seeds (default 10)")
    ac.add_argument("--seed", type=int, help="first seed (default 0)")
    _model_flags(ac)
    _sampler_flags(ac)
    ac.add_argument("--out", required=True, help="output directory")

    an = sub.add_parser("analyze", help="spectrum, sweep, effect or informativeness",
                        argument_default=S)
    an.add_argument("analysis", choices=("spectrum", "sweep", "effect", "informativeness"))
    _data_flags(an)
    an.add_argument("--metric", help="metric id for spectrum (default first)")
    an.add_argument("--dims", help="comma-separated latent dimensions for sweep")
    an.add_argument("--test-ratio", type=float, help="held-out fraction for sweep")
    an.add_argument("--train-ratio", type=float, help="observed fraction for informativeness")
    an.add_argument("--axis", choices=("model", "dataset"), help="informativeness axis")
    an.add_argument("--run", help="run directory for effect")
    an.add_argument("--feature", help="model profile column for effect")
    an.add_argument("--seed", type=int, help="split and sampler seed (default 0)")
    _model_flags(an)
    _sampler_flags(an)
    an.add_argument("--out", required=True, help="output CSV path")
    return p


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "predict": cmd_predict, "baseline": cmd_baseline,
            "active": cmd_active, "analyze": cmd_analyze}


def _resolve(ns) -> argparse.Namespace:
    values = dict(DEFAULTS, noise_sd=0.1, run=None, feature=None, scores=None)
    if getattr(ns, "config", None):
        try:
            cfg = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError("--config", str(exc)) from exc
        values.update({k.replace("-", "_"): v for k, v in cfg.items()})
    values.update(vars(ns))
    return argparse.Namespace(**values)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        a = _resolve(ns)
        if a.command in ("fit", "baseline", "active") or (
                a.command == "analyze" and a.analysis != "effect"):
            if a.scores is None:
                raise CLIError("--scores", "required")
        result = COMMANDS[a.command](a)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {a.command if 'a' in locals() else 'cli'}: {type(exc).__name__}: {msg}",
              file=sys.stderr)
        return 1
    print(_json_text(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
