"""Command-line entry point: train, eval, rollout, analyze, replay-dump, render-debug."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis as A
from . import env as E
from . import plots, ppo
from .nn import ActorCritic
from .render import render, to_ppm
from .replay import read_replay, write_replay

log = logging.getLogger("hideseek")


class CLIError(RuntimeError):
    pass


def _parse_overrides(items, cls) -> dict:
    """key=value pairs typed by the dataclass field defaults of ``cls``."""
    types = {f.name: type(f.default) for f in dataclasses.fields(cls)
             if f.default is not dataclasses.MISSING}
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or key not in types:
            raise CLIError(f"bad override {item!r}")
        t = types[key]
        if t is bool:
            if raw.lower() not in ("true", "false", "1", "0"):
                raise CLIError(f"bad boolean for {key}: {raw!r}")
            out[key] = raw.lower() in ("true", "1")
        else:
            out[key] = t(float(raw)) if t is int else t(raw)
    return out


def _variant(args) -> E.VariantConfig:
    return E.get_variant(args.variant, **_parse_overrides(args.override, E.VariantConfig))


def _write_csv(rows, header, out_path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text)
    return text


def _num(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def _manifest(out: Path, args, **extra) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.command}_manifest.json").write_text(json.dumps(cfg, indent=1, sort_keys=True, default=str))


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    variant = _variant(args)
    hp_over = _parse_overrides(args.set, ppo.Hyperparams)
    if args.steps is not None:
        hp_over["total_steps"] = args.steps
    hp = ppo.Hyperparams(**hp_over)
    saved = ppo.train(variant, hp, args.seed, args.out, resume=args.resume)
    print(json.dumps({"out": str(args.out), "checkpoints": [str(p) for p in saved]}))
    return 0


def _load(args):
    model, params, manifest = ppo.load_policy(args.checkpoint)
    trained = E.VariantConfig.from_dict(manifest["variant"])
    if args.variant is None and not args.override:
        variant = trained
    else:
        variant = E.get_variant(args.variant or trained.name,
                                **_parse_overrides(args.override, E.VariantConfig))
        A.check_variant(manifest, variant)
    return model, params, manifest, variant


def cmd_eval(args) -> int:
    model, params, manifest, variant = _load(args)
    trained = A.evaluate(model, params, variant, args.episodes, args.seed, mode="greedy")
    random = A.evaluate(None, None, variant, args.episodes, args.seed, mode="random")
    report = {
        "variant": variant.name,
        "checkpoint": str(args.checkpoint),
        "seed": args.seed,
        "trained": trained.to_dict(),
        "random": random.to_dict(),
    }
    text = json.dumps(report, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        _manifest(out, args)
        (out / "eval.json").write_text(text + "\n")
        _write_csv(
            [[i, s, a, int(ca), b, int(cb)] for i, (s, a, ca, b, cb) in enumerate(zip(
                A.eval_seeds(args.seed, args.episodes), trained.episode_lengths, trained.caught,
                random.episode_lengths, random.caught))],
            ["episode", "seed", "trained_length", "trained_caught", "random_length", "random_caught"],
            out / "eval.csv",
        )
    return 0


def cmd_rollout(args) -> int:
    rng = np.random.default_rng(args.seed)
    extra = {}
    if args.policy == "random":
        model, params, variant = None, None, _variant(args)
        policy = A.Policy(None, None, "random", rng)
    elif args.policy == "random-init":
        variant = _variant(args)
        model = ActorCritic()
        params = model.init_params(np.random.default_rng(args.init_seed))
        policy = A.Policy(model, params, "sample", rng)
        extra["init_seed"] = args.init_seed
    else:
        if args.checkpoint is None:
            raise CLIError(f"--policy {args.policy} needs --checkpoint")
        model, params, _, variant = _load(args)
        policy = A.Policy(model, params, args.policy, rng)
        extra["checkpoint"] = str(args.checkpoint)
    extra["policy_source"] = args.policy
    lg = A.rollout(variant, args.seed, args.steps, policy, header_extra=extra)
    out = Path(args.out)
    _manifest(out, args)
    path = write_replay(lg, out / "rollout.jsonl")
    if args.features:
        if model is None:
            raise CLIError("--features needs a network policy")
        feats = A.extract_features(model, params, A.observations(lg, range(len(lg))))
        np.savetxt(out / "features.csv", feats, delimiter=",", fmt="%.7g")
    print(json.dumps({"log": str(path), "steps": len(lg)}))
    return 0


def _analyze_freq(args, out):
    if not args.baseline_log:
        raise CLIError("freq analysis needs --baseline-log")
    lg, base = read_replay(args.log), read_replay(args.baseline_log)
    rel, p, q = A.state_frequency(lg, base, min_steps=args.min_steps)
    rows = [[E.STATE_LABELS[i], _num(p[i]), _num(q[i]), _num(rel[i])] for i in range(A.N_STATES)]
    text = _write_csv(rows, ["state", "policy", "baseline", "relative"], out and out / "freq.csv")
    if out:
        plots.export_chart(dict(zip(E.STATE_LABELS, rel)), "bar", out / "freq.svg",
                           ylabel="relative frequency over chance")
    return text


def _analyze_transitions(args, out):
    probs = A.transition_probabilities(read_replay(args.log))
    rows = A.transition_rows(probs)
    text = _write_csv([[a, b, _num(p)] for a, b, p in rows], ["from", "to", "probability"],
                      out and out / "transitions.csv")
    if out:
        plots.export_chart({f"{a}→{b}": (0.0 if np.isnan(p) else p) for a, b, p in rows},
                           "bar", out / "transitions.svg", ylabel="transition probability")
    return text


def _analyze_distance(args, out):
    ds = A.distance_series(read_replay(args.log))
    rows = [[t, _num(m), int(c)] for t, (m, c) in enumerate(zip(ds.mean, ds.counts))]
    text = _write_csv(rows, ["step", "mean_distance", "episodes"], out and out / "distance.csv")
    if out:
        plots.export_chart({"mean": (np.arange(len(ds.mean)), ds.mean)}, "line",
                           out / "distance.svg", xlabel="decision step", ylabel="distance")
    return text


def _analyze_probe(args, out):
    if args.checkpoint is None:
        raise CLIError("probe analysis needs --checkpoint")
    lg = read_replay(args.log)
    model, params, _ = ppo.load_policy(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    n = len(lg)
    idx = np.arange(n) if n <= args.max_samples else np.sort(rng.choice(n, args.max_samples, replace=False))
    obs = A.observations(lg, idx)
    labels = A.probe_labels(lg, idx, args.task)
    rand_params = model.init_params(np.random.default_rng(args.init_seed))
    rows = []
    for name, p in (("trained", params), ("random_init", rand_params)):
        feats = A.extract_features(model, p, obs)
        ds = A.make_probe_dataset(feats, labels, args.task, seed=args.seed)
        res = A.fit_probe(ds)
        rows.append([name, args.task, _num(res.test_accuracy), _num(res.train_accuracy), res.n_train, res.n_test])
    text = _write_csv(rows, ["features", "task", "test_accuracy", "train_accuracy", "n_train", "n_test"],
                      out and out / f"probe_{args.task}.csv")
    if out:
        plots.export_chart({r[0]: float(r[2]) for r in rows}, "bar", out / f"probe_{args.task}.svg",
                           ylabel="test accuracy")
    return text


def _analyze_quadfit(args, out):
    if not args.points:
        raise CLIError("quadfit analysis needs --points")
    with open(args.points, newline="") as fh:
        recs = list(csv.DictReader(fh))
    x = [float(r["x"]) for r in recs]
    y = [float(r["y"]) for r in recs]
    fit = A.quad_fit(x, y)
    text = _write_csv([[_num(fit.a), _num(fit.b), _num(fit.c), _num(fit.residual)]],
                      ["a", "b", "c", "residual"], out and out / "quadfit.csv")
    if out:
        plots.quadfit_plot(x, y, fit, out / "quadfit.svg", labels=[r.get("label", "") for r in recs])
    return text


ANALYSES = {
    "freq": _analyze_freq,
    "transitions": _analyze_transitions,
    "distance": _analyze_distance,
    "probe": _analyze_probe,
    "quadfit": _analyze_quadfit,
}


def cmd_analyze(args) -> int:
    if args.analysis != "quadfit" and not args.log:
        raise CLIError(f"{args.analysis} analysis needs --log")
    out = Path(args.out) if args.out else None
    if out:
        _manifest(out, args)
    sys.stdout.write(ANALYSES[args.analysis](args, out))
    return 0


def cmd_replay_dump(args) -> int:
    lg = read_replay(args.log)
    rows = [
        [r["episode"], r["step"], *r["hider"]["pos"], r["hider"]["heading"], r["hider"]["speed"],
         *r["seeker"]["pos"], r["seeker"]["heading"], r["seeker"]["mode"], r["action"],
         r["reward"], int(r["S"]), int(r["H"]), int(r["O"]), int(r["done"])]
        for r in lg.records
    ]
    header = ["episode", "step", "hider_x", "hider_y", "hider_heading", "hider_speed",
              "seeker_x", "seeker_y", "seeker_heading", "seeker_mode", "action", "reward",
              "S", "H", "O", "done"]
    sys.stdout.write(_write_csv(rows, header, Path(args.out) / "replay.csv" if args.out else None))
    return 0


def cmd_render_debug(args) -> int:
    variant = _variant(args)
    state = E.reset(variant, args.seed)
    rng = np.random.default_rng(args.seed)
    for _ in range(args.steps):
        if state.done:
            break
        E.step(state, int(rng.integers(E.N_ACTIONS)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for viewer in ("hider", "seeker"):
        p = out / f"{viewer}.ppm"
        p.write_bytes(to_ppm(render(state, viewer)))
        written.append(str(p))
    print(json.dumps({"images": written, "decision_step": state.decision_step}))
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hideseek", description="Visual hide-and-seek laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, variant_default="basic"):
        sp.add_argument("--variant", default=variant_default)
        sp.add_argument("--override", action="append", metavar="FIELD=VALUE",
                        help="override a variant field, e.g. hider_speed=3")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("train", help="train a hider policy with PPO")
    common(sp)
    sp.add_argument("--steps", type=int, default=None, help="total decision steps")
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    sp.add_argument("--set", action="append", metavar="HP=VALUE", help="hyperparameter override")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint against the random-policy baseline")
    common(sp, variant_default=None)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int, default=100)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("rollout", help="log decision steps of a policy")
    common(sp, variant_default=None)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--policy", choices=["sample", "greedy", "random", "random-init"], default="sample")
    sp.add_argument("--init-seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=A.MIN_FREQUENCY_STEPS)
    sp.add_argument("--features", action="store_true", help="also export features.csv")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_rollout)

    sp = sub.add_parser("analyze", help="statistics and figures from rollout logs")
    sp.add_argument("--analysis", choices=sorted(ANALYSES), required=True)
    sp.add_argument("--log", default=None)
    sp.add_argument("--baseline-log", default=None)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--task", choices=sorted(A.TASKS), default="seeker")
    sp.add_argument("--points", default=None, help="CSV with x,y[,label] columns")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--init-seed", type=int, default=0)
    sp.add_argument("--max-samples", type=int, default=4000)
    sp.add_argument("--min-steps", type=int, default=A.MIN_FREQUENCY_STEPS)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("replay-dump", help="print a rollout log as CSV")
    sp.add_argument("--log", required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_replay_dump)

    sp = sub.add_parser("render-debug", help="write hider/seeker observations as PPM images")
    common(sp)
    sp.add_argument("--steps", type=int, default=0, help="random decision steps before rendering")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render_debug)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "variant", "") is None and args.command in ("rollout",) and args.policy in ("random", "random-init"):
        args.variant = "basic"
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - one-line machine-readable failure
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
