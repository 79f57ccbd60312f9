"""Command-line surface: cost profiling, training, evaluation, ablations and synthetic data.

Config files are JSON objects with any of the keys ``model`` (ModelConfig
fields), ``train`` (TrainConfig fields), ``manifest`` (path to a dataset
manifest, relative to the config file) and ``ablate`` (``axis`` and
``values``). Command-line flags override file fields, and every run
directory receives the merged effective config.

Run directory layout::

    config.json          effective config, with the manifest inlined
    manifest.json        copy of the dataset manifest
    val_windows.npz      the normalised held-out windows used for validation
    seed_<s>/model.bmh   best checkpoint
    seed_<s>/epochs.jsonl, seed_<s>/timing.jsonl, seed_<s>/results.json
    results.json         per-seed macro F1 and their aggregate
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as mdl
from .datapipe import AugmentConfig, DatasetManifest, WindowSet, load_csv, prepare_splits, synth_har, write_csv
from .errors import BabyMambaError, ConfigError, DataError, NumericError
from .metrics import aggregate_seeds, config_hash, content_hash, results_record
from .model import ModelConfig
from .optim import TrainConfig, fit
from .presets import PRESETS, get_preset

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ABLATION_AXES = ("bidir", "pooling", "stem", "d_state", "d_model", "expand", "seq_len")
# config field each axis moves
AXIS_FIELD = {"bidir": "bidirectional", "pooling": "pooling", "stem": "variant", "d_state": "d_state",
              "d_model": "d_model", "expand": "expand", "seq_len": "seq_len"}

MODEL_FILE = "model.bmh"


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(rows, path: Path) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


# ---------------------------------------------------------------------------
# effective configuration


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    manifest: str | None = None
    ablate: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = set(raw) - {"model", "train", "manifest", "ablate"}
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        rc = cls(dict(raw.get("model", {})), dict(raw.get("train", {})), raw.get("manifest"),
                 dict(raw.get("ablate", {})))
        if rc.manifest is not None:
            rc.manifest = str((path.parent / rc.manifest).resolve())
        return rc


def _run_config(args) -> RunConfig:
    rc = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "manifest", None):
        rc.manifest = args.manifest
    for flag, key in (("variant", "variant"), ("seq_len", "seq_len"), ("d_model", "d_model"),
                      ("d_state", "d_state"), ("pooling", "pooling")):
        v = getattr(args, flag, None)
        if v is not None:
            rc.model[key] = v
    if getattr(args, "unidirectional", False):
        rc.model["bidirectional"] = False
    for flag, key in (("seeds", "n_seeds"), ("master_seed", "master_seed"), ("max_epochs", "max_epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            rc.train[key] = v
    if getattr(args, "no_augment", False):
        rc.train["augment"] = AugmentConfig.off().to_dict()
    return rc


def _model_config(overrides: dict, **shape) -> ModelConfig:
    d = dict(overrides)
    variant = d.pop("variant", "crossover")
    for k, v in shape.items():
        d.setdefault(k, v)
    return ModelConfig.default(variant, **d)


def _load_data(manifest_path: str, seq_len: int | None = None):
    manifest = DatasetManifest.load(manifest_path)
    if seq_len is not None and seq_len != manifest.seq_len:
        manifest = DatasetManifest(**{**manifest.to_dict(), "seq_len": seq_len,
                                      "stride": min(manifest.stride, seq_len)})
    data_file = manifest.data_path(manifest_path)
    recs = load_csv(data_file, manifest.fs)
    train, val, _ = prepare_splits(manifest, recs)
    if manifest.num_classes is None:
        manifest.num_classes = int(max(train.y.max(), val.y.max())) + 1
    return manifest, train, val, content_hash(data_file.read_bytes())


# ---------------------------------------------------------------------------
# training runs


def train_run(mcfg: ModelConfig, tcfg: TrainConfig, train: WindowSet, val: WindowSet, out: Path,
              manifest: DatasetManifest | None = None, extra: dict | None = None,
              zero_init: tuple[str, ...] = ()) -> dict:
    """Fit one model per derived seed into ``out`` and write the aggregate."""
    out.mkdir(parents=True, exist_ok=True)
    effective = {"model": mcfg.to_dict(), "train": tcfg.to_dict(),
                 "manifest": manifest.to_dict() if manifest else None, "zero_init": list(zero_init)}
    effective.update(extra or {})
    _dump(effective, out / "config.json")
    if manifest is not None:
        manifest.save(out / "manifest.json")
    np.savez(out / "val_windows.npz", X=val.X, y=val.y)
    per_seed = []
    for seed in tcfg.seeds():
        cfg = mcfg.replace(seed=seed)
        model = mdl.build(cfg)
        params = model.parameters()
        for name in zero_init:
            if name not in params:
                raise ConfigError(f"cannot zero unknown parameter {name!r}")
            params[name].data = np.zeros_like(params[name].data)
        res = fit(model, train, val, tcfg, seed=seed)
        sd = out / f"seed_{seed}"
        sd.mkdir(exist_ok=True)
        mdl.save(res.model, sd / MODEL_FILE)
        _write_jsonl(res.epochs, sd / "epochs.jsonl")
        _write_jsonl(res.timings, sd / "timing.jsonl")
        rec = results_record(val.y, res.model.predict(val.X), cfg.num_classes, seed=seed,
                             best_epoch=res.best_epoch, epochs_run=len(res.epochs),
                             num_params=res.model.num_params())
        _dump(rec, sd / "results.json")
        per_seed.append(rec)
        log.info("seed %d: best macro F1 %.4f at epoch %d", seed, rec["macro_f1"], res.best_epoch)
    f1s = [r["macro_f1"] for r in per_seed]
    mean, std = aggregate_seeds(f1s)
    agg = {"seeds": tcfg.seeds(), "macro_f1": f1s, "mean_macro_f1": mean, "std_macro_f1": std,
           "config_hash": config_hash(effective), "num_params": per_seed[0]["num_params"]}
    _dump(agg, out / "results.json")
    return agg


def cmd_train(args) -> int:
    rc = _run_config(args)
    if rc.manifest is None:
        raise ConfigError("train needs a dataset manifest (--manifest or 'manifest' in --config)")
    manifest, train, val, data_hash = _load_data(rc.manifest, rc.model.get("seq_len"))
    mcfg = _model_config(rc.model, num_channels=manifest.channels, num_classes=manifest.num_classes,
                         seq_len=manifest.seq_len)
    tcfg = TrainConfig.from_dict(rc.train)
    out = Path(args.out)
    agg = train_run(mcfg, tcfg, train, val, out, manifest, {"data_hash": data_hash})
    print(f"{mcfg.variant} ({agg['num_params']} params) over seeds {agg['seeds']}")
    for s, f in zip(agg["seeds"], agg["macro_f1"]):
        print(f"  seed {s}: macro F1 {f:.4f}")
    print(f"  mean {agg['mean_macro_f1']:.4f} ± {agg['std_macro_f1']:.4f}")
    print(f"run directory: {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluation


def _format_cm(cm: np.ndarray) -> str:
    w = max(4, len(str(cm.max())) + 1)
    head = " " * 6 + "".join(f"{j:>{w}}" for j in range(cm.shape[1]))
    rows = [f"{i:>5} " + "".join(f"{v:>{w}}" for v in row) for i, row in enumerate(cm)]
    return "\n".join([head, *rows])


def evaluate_model(model: mdl.Model, ws: WindowSet) -> dict:
    C, L = model.cfg.num_channels, model.cfg.seq_len
    if ws.X.shape[1:] != (C, L):
        raise DataError(f"data windows have shape {ws.X.shape[1:]}, model expects ({C}, {L})")
    if len(ws) and ws.y.max() >= model.cfg.num_classes:
        raise DataError(f"labels reach {ws.y.max()}, model has {model.cfg.num_classes} classes")
    return results_record(ws.y, model.predict(ws.X), model.cfg.num_classes)


def _windows_from_npz(path: Path) -> WindowSet:
    try:
        with np.load(path) as z:
            X, y = z["X"], z["y"]
    except FileNotFoundError:
        raise DataError(f"missing {path}") from None
    n = len(y)
    return WindowSet(X, y, np.zeros(n, dtype=int), np.arange(n), np.zeros(n, dtype=int),
                     np.zeros(n, dtype=int))


def cmd_eval(args) -> int:
    records = {}
    if args.run:
        run = Path(args.run)
        if not run.is_dir():
            raise DataError(f"run directory not found: {run}")
        ws = _windows_from_npz(run / "val_windows.npz")
        seeds = sorted(run.glob("seed_*"), key=lambda p: int(p.name.split("_")[1]))
        if not seeds:
            raise DataError(f"no seed directories in {run}")
        for sd in seeds:
            records[sd.name] = evaluate_model(mdl.load(sd / MODEL_FILE), ws)
    else:
        if not args.model or not args.manifest:
            raise ConfigError("eval needs --run DIR or both --model FILE and --manifest PATH")
        model = mdl.load(args.model)
        manifest = DatasetManifest.load(args.manifest)
        if manifest.channels != model.cfg.num_channels or manifest.seq_len != model.cfg.seq_len:
            raise DataError(f"manifest windows ({manifest.channels}, {manifest.seq_len}) do not match model "
                            f"input ({model.cfg.num_channels}, {model.cfg.seq_len})")
        _, _, ws, _ = _load_data(args.manifest)
        records[Path(args.model).name] = evaluate_model(model, ws)
    for name, rec in records.items():
        print(f"{name}: macro F1 {rec['macro_f1']:.6f}")
        print(_format_cm(np.asarray(rec["confusion_matrix"])))
    if args.out:
        _dump(records, Path(args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# cost profiling


def _format_report(rep: mdl.CostReport) -> str:
    lines = [f"{'layer':<24}{'params':>10}{'MACs':>16}"]
    lines += [f"{r.name:<24}{r.params:>10,}{r.macs:>16,}" for r in rep.rows]
    lines.append(f"{'total':<24}{rep.total_params:>10,}{rep.total_macs:>16,}")
    return "\n".join(lines)


def cmd_count(args) -> int:
    rc = _run_config(args)
    shape = {}
    if args.preset:
        p = get_preset(args.preset)
        shape = dict(num_channels=p.channels, num_classes=p.classes, seq_len=p.seq_len)
    for flag, key in (("channels", "num_channels"), ("classes", "num_classes")):
        if getattr(args, flag) is not None:
            rc.model[key] = getattr(args, flag)
    cfg = _model_config(rc.model, **shape)
    rep = mdl.count_macs(cfg, convention=args.convention)
    out = {"config": cfg.to_dict(), "report": rep.to_dict()}
    print(f"{cfg.variant} C={rep.channels} L={rep.seq_len} convention={rep.convention}")
    print(_format_report(rep))
    if args.presets == "table1":
        table = mdl.preset_mac_table(cfg, args.convention)
        print(f"\n{'preset':<14}{'C':>4}{'L':>5}{'MACs':>16}")
        for name, p in PRESETS.items():
            print(f"{name:<14}{p.channels:>4}{p.seq_len:>5}{table[name]:>16,}")
        print(f"{'average':<14}{'':>9}{table['average']:>16,.0f}")
        out["presets"] = table
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablations


def _axis_variants(axis: str, base: ModelConfig, values) -> list:
    cur = getattr(base, AXIS_FIELD[axis])
    if values:
        typ = type(cur)
        if typ is bool:
            return [str(v).lower() in ("1", "true", "yes") for v in values]
        return [typ(v) for v in values]
    default = {
        "bidir": [not cur],
        "pooling": ["mean" if cur == "gated" else "gated"],
        "stem": ["crossover" if cur == "ci" else "ci"],
        "d_state": [8 if cur != 8 else 16],
        "d_model": [24 if cur != 24 else 26],
        "expand": [3 if cur != 3 else 2],
        "seq_len": [64, 256, 512],
    }
    return default[axis]


def ablation_table(axis: str, base: ModelConfig, values=None) -> list[dict]:
    """Analytic rows (params, MACs) for the baseline and each variant of one axis."""
    fld = AXIS_FIELD[axis]
    rows = []
    base_params = mdl.count_macs(base).total_params
    for v in [getattr(base, fld), *_axis_variants(axis, base, values)]:
        cfg = base.replace(**{fld: v})
        cfg.validate()
        rep = mdl.count_macs(cfg)
        rows.append({"label": f"{fld}={v}", "field": fld, "value": v, "config": cfg,
                     "params": rep.total_params, "macs": rep.total_macs,
                     "delta_params_pct": 100.0 * (rep.total_params - base_params) / base_params})
    rows[0]["label"] += " (baseline)"
    return rows


def _format_ablation(rows: list[dict]) -> str:
    lines = [f"{'variant':<32}{'mean F1':>9}{'std':>8}{'ΔF1':>9}{'params':>9}{'Δparams':>9}{'MACs':>14}"]
    for r in rows:
        f1 = (f"{r['mean_macro_f1']:>9.4f}{r['std_macro_f1']:>8.4f}{r['delta_f1']:>+9.4f}"
              if "mean_macro_f1" in r else f"{'-':>9}{'-':>8}{'-':>9}")
        lines.append(f"{r['label']:<32}{f1}{r['params']:>9,}{r['delta_params_pct']:>+8.1f}%{r['macs']:>14,}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    rc = _run_config(args)
    axis = args.axis or rc.ablate.get("axis")
    if axis not in ABLATION_AXES:
        raise ConfigError(f"ablation axis must be one of {ABLATION_AXES}, got {axis!r}")
    values = args.values or rc.ablate.get("values")
    zero_v = args.zero_frozen_v or bool(rc.ablate.get("zero_frozen_v", False))
    if zero_v and axis != "pooling":
        raise ConfigError("--zero-frozen-v only applies to the pooling axis")
    if args.params_only or rc.manifest is None:
        if not args.params_only:
            raise ConfigError("ablate needs a dataset manifest unless --params-only is given")
        shape = {}
        if args.preset:
            p = get_preset(args.preset)
            shape = dict(num_channels=p.channels, num_classes=p.classes, seq_len=p.seq_len)
        rows = ablation_table(axis, _model_config(rc.model, **shape), values)
    else:
        manifest, train, val, data_hash = _load_data(rc.manifest, rc.model.get("seq_len"))
        base = _model_config(rc.model, num_channels=manifest.channels, num_classes=manifest.num_classes,
                             seq_len=manifest.seq_len)
        rows = ablation_table(axis, base, values)
        tcfg = TrainConfig.from_dict(rc.train)
        out = Path(args.out)
        base_f1 = None
        for r in rows:
            cfg = r["config"]
            tr, va, man = train, val, manifest
            if axis == "seq_len" and cfg.seq_len != manifest.seq_len:
                man, tr, va, _ = _load_data(rc.manifest, cfg.seq_len)
            t = tcfg
            zero_init: tuple[str, ...] = ()
            if zero_v and cfg.pooling == "gated":
                zero_init = ("pool.v",)
                t = TrainConfig.from_dict({**tcfg.to_dict(), "freeze": [*tcfg.freeze, "pool.v"]})
            agg = train_run(cfg, t, tr, va, out / r["label"].split(" ")[0], man,
                            {"data_hash": data_hash, "ablation_axis": axis}, zero_init)
            r.update(mean_macro_f1=agg["mean_macro_f1"], std_macro_f1=agg["std_macro_f1"],
                     macro_f1=agg["macro_f1"])
            base_f1 = agg["mean_macro_f1"] if base_f1 is None else base_f1
            r["delta_f1"] = r["mean_macro_f1"] - base_f1
    print(f"ablation axis: {axis}")
    print(_format_ablation(rows))
    serial = [{k: v for k, v in r.items() if k != "config"} | {"config": r["config"].to_dict()} for r in rows]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _dump({"axis": axis, "rows": serial}, Path(args.out) / "ablation.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synthetic data


def cmd_synth(args) -> int:
    recs = synth_har(n_subjects=args.subjects, n_classes=args.classes, channels=args.channels,
                     window_len=args.seq_len, fs=args.fs, seed=args.seed,
                     windows_per_class=args.windows_per_class, noise=args.noise,
                     asymmetric=args.asymmetric)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(recs, out / "data.csv")
    manifest = DatasetManifest(name=args.name, channels=args.channels, fs=args.fs, seq_len=args.seq_len,
                               stride=args.seq_len, num_classes=args.classes, data="data.csv")
    manifest.save(out / "manifest.json")
    n = sum(r.data.shape[1] for r in recs)
    print(f"wrote {len(recs)} subjects, {n} samples, {args.classes} classes to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--variant", choices=mdl.VARIANTS)
    p.add_argument("--seq-len", type=int, dest="seq_len", help="window length L")
    p.add_argument("--d-model", type=int, dest="d_model")
    p.add_argument("--d-state", type=int, dest="d_state")
    p.add_argument("--pooling", choices=mdl.POOLINGS)
    p.add_argument("--unidirectional", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--seeds", type=int, help="number of derived seeds")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--no-augment", action="store_true", dest="no_augment")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="babymamba-har", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="per-layer parameter and MAC report")
    _add_model_flags(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--presets", choices=["table1"], help="also report MACs at every preset shape")
    p.add_argument("--channels", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--convention", choices=mdl.MAC_CONVENTIONS, default="layers")
    p.add_argument("--json", help="also write the JSON report here")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("train", help="train over derived seeds into a run directory")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a whole run directory")
    p.add_argument("--run", help="run directory (uses its stored held-out windows)")
    p.add_argument("--model", help="model file")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="single-variable comparison against a baseline")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--axis", choices=ABLATION_AXES)
    p.add_argument("--values", nargs="+", help="variant values (default depends on the axis)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="shape for --params-only")
    p.add_argument("--params-only", action="store_true", help="report analytic deltas without training")
    p.add_argument("--zero-frozen-v", action="store_true", dest="zero_frozen_v",
                   help="gated pooling runs start with v = 0 and keep it frozen")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic dataset as CSV plus manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--seq-len", type=int, default=128, dest="seq_len")
    p.add_argument("--fs", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--windows-per-class", type=int, default=8, dest="windows_per_class")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--asymmetric", action="store_true")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except BabyMambaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
