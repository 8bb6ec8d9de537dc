"""Command-line entry point: ``phasenet {verify,synth,train,eval,bounds,export}``.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.
Seed precedence: ``--seed`` flag > ``PHASE_SEED`` env var > config file > 42.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import math
import os
import sys

import numpy as np

log = logging.getLogger("phasenet")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class IOFailure(Exception):
    pass


def load_json(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise IOFailure(f"not found: {path}")
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path}: {exc.msg} at line {exc.lineno}, column {exc.colno}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top-level JSON value must be an object")
    return data


def resolve_seed(flag, file_value):
    if flag is not None:
        return int(flag), "flag"
    env = os.environ.get("PHASE_SEED")
    if env not in (None, ""):
        try:
            return int(env), "env"
        except ValueError:
            raise UsageError(f"PHASE_SEED must be an integer, got {env!r}") from None
    if file_value is not None:
        return int(file_value), "file"
    return DEFAULT_SEED, "default"


def write_run_json(out_dir, command, resolved):
    os.makedirs(out_dir, exist_ok=True)
    rec = {"command": command, "resolved_config": resolved,
           "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if path:
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_verify(args):
    from .verify import run_checks

    report = run_checks(inject_fault=args.inject_fault)
    dump(report, args.out)
    write_run_json(_dir_of(args.out) if args.out else os.getcwd(), "verify",
                   {"inject_fault": args.inject_fault, "out": args.out})
    for r in report["results"]:
        log.info("%-34s %s  %s", r["check"], r["status"], r["detail"])
    return EXIT_OK if not report["failed"] else EXIT_CHECK


def cmd_synth(args):
    from .synth import SynthConfig, generate_dataset

    raw = load_json(args.config)
    n_clips = int(raw.pop("n_clips", args.n_clips))
    first = int(raw.pop("first_index", 0))
    seed, src = resolve_seed(args.seed, raw.pop("seed", None))
    try:
        cfg = SynthConfig.from_dict({**raw, "seed": seed})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synth config: {exc}") from None
    manifest = generate_dataset(cfg, n_clips, args.out, first_index=first)
    write_run_json(args.out, "synth", {"synth": cfg.to_dict(), "n_clips": n_clips,
                                       "first_index": first, "seed_source": src})
    log.info("wrote %d clips to %s", len(manifest["clips"]), args.out)
    return EXIT_OK


def _load_data(data_dir):
    from .synth import load_dataset

    if not os.path.isdir(data_dir):
        raise IOFailure(f"not found: {data_dir}")
    if not os.path.exists(os.path.join(data_dir, "manifest.json")):
        raise IOFailure(f"not found: {os.path.join(data_dir, 'manifest.json')}")
    return load_dataset(data_dir)


def cmd_train(args):
    from .model import ModelConfig, PhaseNet
    from .synth import to_windows
    from .training import TrainConfig, train

    raw = load_json(args.config)
    model_raw = raw.pop("model", {})
    seed, src = resolve_seed(args.seed, raw.pop("seed", None))
    clips, manifest = _load_data(args.data)
    try:
        tc = TrainConfig.from_dict({**raw, "seed": seed})
        _, T0, H, W = clips[0].frames.shape
        mdefaults = {"T": min(64, T0), "H": H, "W": W}
        mcfg = ModelConfig.from_dict({**mdefaults, **model_raw})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train config: {exc}") from None
    X, Y, _ = to_windows(clips, mcfg.T)
    out_dir = _dir_of(args.out)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(args.out)[0]
    model = PhaseNet(mcfg, seed=seed)
    hist = train(model, X, Y, tc, log_path=stem + "_log.jsonl", ckpt_path=args.out,
                 dump_dir=out_dir, callback=lambda r: log.info("epoch %(epoch)d total %(total).5f", r))
    write_run_json(out_dir, "train", {"train": tc.to_dict(), "model": mcfg.to_dict(),
                                      "data": os.path.abspath(args.data), "seed_source": src,
                                      "n_windows": int(len(X)), "epochs_run": len(hist)})
    return EXIT_OK


def evaluate_dataset(model, clips, fps):
    """Per-clip HR metrics plus mean waveform correlation over windows."""
    from .evaluation import estimate_hr, metrics, pearson_r, stitch_windows
    from .synth import to_windows
    from .training import predict

    X, Y, owner = to_windows(clips, model.cfg.T)
    P = predict(model, X)
    rs = [pearson_r(p, y) for p, y in zip(P, Y)]
    stitched = stitch_windows(P, owner)
    per_clip, hr_pred, hr_gt = [], [], []
    for ci in sorted(stitched):
        est = estimate_hr(stitched[ci], fps)
        hr_pred.append(est.hr_bpm)
        hr_gt.append(clips[ci].hr_gt_bpm)
        per_clip.append({"clip": ci, "hr_pred_bpm": est.hr_bpm, "hr_gt_bpm": clips[ci].hr_gt_bpm,
                         "low_confidence": est.low_confidence})
    rep = metrics(hr_pred, hr_gt).to_dict()
    rep["waveform_r"] = float(np.mean([r if r is not None else 0.0 for r in rs]))
    rep["per_clip"] = per_clip
    return rep


def cmd_eval(args):
    from .model import load_model

    clips, manifest = _load_data(args.data)
    model = _load_model(args.ckpt)
    fps = float(manifest["config"].get("fps", 30.0))
    rep = evaluate_dataset(model, clips, fps)
    dump(rep, args.out)
    write_run_json(_dir_of(args.out), "eval", {"data": os.path.abspath(args.data),
                                                "ckpt": os.path.abspath(args.ckpt), "fps": fps})
    log.info("MAE %.3f bpm, RMSE %.3f bpm, waveform r %.4f", rep["mae_bpm"], rep["rmse_bpm"], rep["waveform_r"])
    return EXIT_OK


def _load_model(path):
    from .model import CheckpointError, config_path_for, load_model

    for p in (path, config_path_for(path)):
        if not os.path.exists(p):
            raise IOFailure(f"not found: {p}")
    try:
        return load_model(path)
    except CheckpointError as exc:
        raise IOFailure(str(exc)) from None


def compute_bounds(raw):
    """Evaluate every bound for a BoundParams JSON object.

    An optional ``system`` entry ({alpha, omega, dt}) derives K, rho, C0, B0
    from the discretized oscillator; ``src_risk`` and ``w1`` enable the
    target-risk bound.
    """
    from .oscillator import (BoundParams, OscillatorParams, discretize, fir_length_for_eps,
                             kernel_constants, rademacher_bound, recommended_R, target_risk_bound)

    raw = dict(raw)
    system = raw.pop("system", None)
    src_risk = raw.pop("src_risk", None)
    w1 = raw.pop("w1", None)
    if system is not None:
        K, rho, C0, B0 = kernel_constants(discretize(OscillatorParams(**system)))
        raw.update({"K": K, "rho": rho, "C0": C0, "B0": B0})
    b = BoundParams.from_dict(raw)
    out = {"params": b.to_dict(),
           "rademacher_bound": rademacher_bound(b),
           "fir_length_for_eps": fir_length_for_eps(b),
           "truncation_tail": b.gamma * b.rho ** b.R,
           "recommended_R": recommended_R(b.n, b.rho) if b.n >= 2 else None}
    if system is not None:
        out["system"] = system
    if src_risk is not None and w1 is not None:
        out["target_risk_bound"] = target_risk_bound(b, float(src_risk), float(w1))
        out["src_risk"], out["w1"] = src_risk, w1
    return out


def cmd_bounds(args):
    raw = load_json(args.config)
    try:
        out = compute_bounds(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid bounds config: {exc}") from None
    dump(out, args.out)
    write_run_json(_dir_of(args.out) if args.out else os.getcwd(), "bounds", raw)
    return EXIT_OK


def cmd_export(args):
    from .evaluation import export_csv, psd
    from .synth import to_windows
    from .training import predict

    clips, manifest = _load_data(args.data)
    if not 0 <= args.clip < len(clips):
        raise UsageError(f"clip index {args.clip} out of range [0, {len(clips)})")
    model = _load_model(args.ckpt)
    fps = float(manifest["config"].get("fps", 30.0))
    rec = clips[args.clip]
    os.makedirs(_dir_of(args.out), exist_ok=True)
    X, Y, _ = to_windows([rec], model.cfg.T)
    P = predict(model, X)
    pred = np.concatenate([(p - p.mean()) / (p.std() or 1.0) for p in P])
    gt = np.concatenate(list(Y))
    t = np.arange(len(pred)) / fps
    export_csv(args.out, t, pred, gt)
    stem = os.path.splitext(args.out)[0]
    n = len(pred)
    f, pp = psd(pred, fps, nperseg=min(256, n), nfft=1024)
    _, pg = psd(gt, fps, nperseg=min(256, n), nfft=1024)
    export_csv(stem + "_psd.csv", f, pp, pg)
    write_run_json(_dir_of(args.out), "export", {"data": os.path.abspath(args.data),
                                                  "ckpt": os.path.abspath(args.ckpt), "clip": args.clip})
    return EXIT_OK


def _dir_of(path):
    return os.path.dirname(os.path.abspath(path))


def build_parser():
    p = argparse.ArgumentParser(prog="phasenet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--out", help="write the JSON report here instead of stdout")
    v.add_argument("--inject-fault", choices=["zas"], help="test mode: corrupt one ZAS index")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--n-clips", type=int, default=8)
    s.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="checkpoint path (.phwt)")
    t.add_argument("--seed", type=int)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)

    b = sub.add_parser("bounds", help="evaluate truncation and generalization bounds")
    b.add_argument("--config", required=True)
    b.add_argument("--out")

    x = sub.add_parser("export", help="export waveform and PSD CSVs for one clip")
    x.add_argument("--data", required=True)
    x.add_argument("--ckpt", required=True)
    x.add_argument("--clip", type=int, required=True)
    x.add_argument("--out", required=True)
    return p


COMMANDS = {"verify": cmd_verify, "synth": cmd_synth, "train": cmd_train,
            "eval": cmd_eval, "bounds": cmd_bounds, "export": cmd_export}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"phasenet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IOFailure, OSError) as exc:
        print(f"phasenet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
