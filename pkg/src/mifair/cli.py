"""Command-line entry point: train, evaluate, ablate, oracle, plot and synth.

Run configs are JSON files::

    {
      "dataset": "synthetic.csv",          # relative to the config file
      "schema": "synthetic_schema.json",
      "sensitive": ["gender", "race"],     # attributes forming the joint group
      "include_sensitive": true,           # also feed them to the extractor
      "split": {"fractions": [0.7, 0.1, 0.2]},
      "model": {"hidden": [32], "embed_dim": 32},
      "train": {"alpha": 0.1, "variant": "tsd", ...},
      "out": "runs/synthetic"
    }

Each seed trains in ``<out>/<variant>/seed_<k>/`` (per-epoch ``epochs.tsv`` and
``checkpoint.bin``); the aggregate lands in ``<out>/result.json``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import statistics
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .data import DataError, EncodedDataset, SchemaError, SplitSpec, load_dataset, split
from .model import load_checkpoint, save_checkpoint
from .objective import EpochReport, TrainConfig, TrainingDiverged, Variant, evaluate_bundle, fit
from .synthetic import write_synthetic

VERSION = "mifair 0.1.0"
RESULT_NAME = "result.json"
METRIC_FIELDS = ("micro_f1", "macro_f1", "imparity")

log = logging.getLogger("mifair")


class CliError(Exception):
    """A user-facing failure; the message is printed as a single line."""


# ---------------------------------------------------------------------------
# config


@dataclass
class RunConfig:
    dataset: str
    schema: str
    sensitive: list[str] | None = None
    include_sensitive: bool = True
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    hidden: tuple[int, ...] = (32,)
    embed_dim: int = 32
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    out: str = "runs"
    base_dir: Path = Path(".")
    out_override: str | None = None

    @property
    def dataset_path(self) -> Path:
        return self.base_dir / self.dataset

    @property
    def schema_path(self) -> Path:
        return self.base_dir / self.schema

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> "RunConfig":
        unknown = set(d) - {"dataset", "schema", "sensitive", "include_sensitive", "split", "model", "train", "out"}
        if unknown:
            raise CliError(f"unknown config key(s): {sorted(unknown)}")
        for key in ("dataset", "schema"):
            if key not in d:
                raise CliError(f"config is missing {key!r}")
        train = d.get("train", {})
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        if set(train) - known:
            raise CliError(f"unknown train key(s): {sorted(set(train) - known)}")
        model = d.get("model", {})
        try:
            return cls(
                dataset=d["dataset"],
                schema=d["schema"],
                sensitive=list(d["sensitive"]) if d.get("sensitive") else None,
                include_sensitive=bool(d.get("include_sensitive", True)),
                fractions=tuple(d.get("split", {}).get("fractions", (0.7, 0.1, 0.2))),
                hidden=tuple(int(h) for h in model.get("hidden", (32,))),
                embed_dim=int(model.get("embed_dim", 32)),
                train=TrainConfig(**train),
                out=d.get("out", "runs"),
                base_dir=base_dir,
            )
        except (TypeError, ValueError) as exc:
            raise CliError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d, path.parent)

    def echo(self) -> dict:
        """Everything that determines the results (the output directory does not)."""
        return {
            "dataset": self.dataset,
            "schema": self.schema,
            "sensitive": self.sensitive,
            "include_sensitive": self.include_sensitive,
            "split": {"fractions": list(self.fractions)},
            "model": {"hidden": list(self.hidden), "embed_dim": self.embed_dim},
            "train": self.train.to_dict(),
        }

    def with_overrides(self, args: argparse.Namespace) -> "RunConfig":
        cfg = dataclasses.replace(self, train=dataclasses.replace(self.train))
        if getattr(args, "seeds", None) is not None:
            cfg.train = dataclasses.replace(cfg.train, seeds=tuple(args.seeds))
        if getattr(args, "alpha", None) is not None:
            cfg.train = dataclasses.replace(cfg.train, alpha=args.alpha)
        if getattr(args, "variant", None) is not None:
            cfg.train = dataclasses.replace(cfg.train, variant=Variant(args.variant))
        if getattr(args, "sensitive", None):
            if len(args.sensitive) > 1:
                raise CliError("give --sensitive once, as a comma-separated list")
            cfg.sensitive = args.sensitive[0]
        if getattr(args, "out", None) is not None:
            cfg.out_override = args.out
        return cfg

    @property
    def out_dir(self) -> Path:
        """``--out`` is taken relative to the working directory, the config's ``out`` relative to the config file."""
        return Path(self.out_override) if self.out_override is not None else self.base_dir / self.out


# ---------------------------------------------------------------------------
# training runs


def _load(cfg: RunConfig, sensitive=None) -> EncodedDataset:
    ds, _ = load_dataset(cfg.dataset_path, cfg.schema_path, sensitive or cfg.sensitive, cfg.include_sensitive)
    return ds


def split_hash(parts: Sequence[EncodedDataset]) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.fingerprint().encode())
    return h.hexdigest()[:16]


def _write_epochs(path: Path, reports: list[EpochReport]) -> None:
    lines = [EpochReport.LOG_HEADER] + [r.log_line() for r in reports]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_seed(cfg: RunConfig, ds: EncodedDataset, train_cfg: TrainConfig, seed: int, run_dir: Path) -> dict:
    tr, va, te = split(ds, SplitSpec(cfg.fractions, seed))
    res = fit(tr, va, train_cfg, seed, cfg.hidden, cfg.embed_dim)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_epochs(run_dir / "epochs.tsv", res.reports)
    hsh = split_hash((tr, va, te))
    meta = {
        "version": VERSION,
        "seed": seed,
        "variant": train_cfg.variant.value,
        "dataset": str(cfg.dataset_path.resolve()),
        "schema": str(cfg.schema_path.resolve()),
        "sensitive": list(ds.sensitive_names),
        "include_sensitive": cfg.include_sensitive,
        "fractions": list(cfg.fractions),
        "split_hash": hsh,
        "selected_epoch": res.best_epoch,
    }
    save_checkpoint(run_dir / "checkpoint.bin", res.bundle, meta)
    test = evaluate_bundle(res.bundle, te)
    best = res.best_report
    return {
        "seed": seed,
        "split_hash": hsh,
        "selected_epoch": res.best_epoch,
        "epochs_run": len(res.reports),
        "stopped_early": res.stopped_early,
        "validation": {"fairness": best.val_fairness, "micro_f1": best.val_micro_f1},
        "test": test.to_dict(),
    }


def aggregate(per_seed: list[dict]) -> dict:
    out = {k: float(np.mean([s["test"][k] for s in per_seed])) for k in METRIC_FIELDS}
    red = [s["test"]["reduction"] for s in per_seed]
    out["reduction"] = float(np.mean(red)) if all(r is not None for r in red) else None
    return out


def medians(per_seed: list[dict]) -> dict:
    out = {k: statistics.median(s["test"][k] for s in per_seed) for k in METRIC_FIELDS}
    red = [s["test"]["reduction"] for s in per_seed]
    out["reduction"] = statistics.median(red) if all(r is not None for r in red) else None
    return out


def train_variant(cfg: RunConfig, ds: EncodedDataset, variant: Variant) -> list[dict]:
    tc = dataclasses.replace(cfg.train, variant=variant)
    runs = []
    for seed in tc.seeds:
        log.info("training %s seed %d", variant.value, seed)
        runs.append(run_seed(cfg, ds, tc, seed, cfg.out_dir / variant.value / f"seed_{seed}"))
    return runs


def attach_reduction(runs: list[dict], vanilla_imparity: float) -> None:
    """Per-seed reduction against the seed-averaged vanilla imparity.

    With a common denominator the mean of per-seed reductions equals the
    reduction of the mean imparity.
    """
    for r in runs:
        r["test"]["reduction"] = metrics.reduction(vanilla_imparity, r["test"]["imparity"])


def build_record(cfg: RunConfig, ds: EncodedDataset, variant: Variant, runs: list[dict], vanilla: list[dict] | None) -> dict:
    echo = cfg.echo()
    echo["train"]["variant"] = variant.value
    rec = {
        "version": VERSION,
        "config": echo,
        "variant": variant.value,
        "sensitive": list(ds.sensitive_names),
        "group_card": ds.group_card,
        "seeds": runs,
        "aggregate": aggregate(runs),
        "median": medians(runs),
        "vanilla": None,
    }
    if vanilla is not None:
        rec["vanilla"] = {"seeds": vanilla, "aggregate": aggregate(vanilla), "median": medians(vanilla)}
    return rec


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def train_records(cfg: RunConfig, variants: Sequence[Variant]) -> dict[str, dict]:
    """Train the vanilla reference once (when needed) and every requested variant."""
    ds = _load(cfg)
    vanilla = train_variant(cfg, ds, Variant.VANILLA)
    van_imp = aggregate(vanilla)["imparity"]
    out = {}
    for v in variants:
        if v == Variant.VANILLA:
            runs = [json.loads(json.dumps(r)) for r in vanilla]
            attach_reduction(runs, van_imp)
            out[v.value] = build_record(cfg, ds, v, runs, None)
            continue
        runs = train_variant(cfg, ds, v)
        if van_imp > 0:
            attach_reduction(runs, van_imp)
        else:
            log.warning("vanilla imparity is 0; reduction is undefined")
        out[v.value] = build_record(cfg, ds, v, runs, vanilla)
    return out


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config).with_overrides(args)
    rec = train_records(cfg, [cfg.train.variant])[cfg.train.variant.value]
    path = cfg.out_dir / RESULT_NAME
    write_json(path, rec)
    print(_summary_line(rec))
    print(f"wrote {path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = RunConfig.load(args.config).with_overrides(args)
    recs = train_records(cfg, [Variant.TSD, Variant.TS, Variant.TD])
    for name, rec in recs.items():
        path = cfg.out_dir / f"result_{name}.json"
        write_json(path, rec)
        print(_summary_line(rec))
    print(f"wrote {cfg.out_dir}/result_{{tsd,ts,td}}.json")
    return 0


def _summary_line(rec: dict) -> str:
    agg, med = rec["aggregate"], rec["median"]
    red = "" if agg["reduction"] is None else f" reduction={agg['reduction']:.4f} (median {med['reduction']:.4f})"
    return f"{rec['variant']}: micro_f1={agg['micro_f1']:.4f} macro_f1={agg['macro_f1']:.4f} imparity={agg['imparity']:.4f}{red}"


# ---------------------------------------------------------------------------
# evaluation


def evaluate_checkpoint(checkpoint, partitions: list[list[str]] | None = None, cfg: RunConfig | None = None) -> dict:
    try:
        bundle, meta = load_checkpoint(checkpoint)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {checkpoint}: {exc.strerror}") from None
    if cfg is not None:
        data_path, schema_path, include = cfg.dataset_path, cfg.schema_path, cfg.include_sensitive
    else:
        data_path, schema_path, include = Path(meta["dataset"]), Path(meta["schema"]), meta["include_sensitive"]
    ds, _ = load_dataset(data_path, schema_path, meta["sensitive"], include)
    if ds.input_dim != bundle.config.input_dim:
        raise CliError(f"dimension mismatch: checkpoint expects {bundle.config.input_dim} input columns, dataset encodes {ds.input_dim}")
    parts = split(ds, SplitSpec(tuple(meta["fractions"]), meta["seed"]))
    if split_hash(parts) != meta["split_hash"]:
        raise CliError("dataset rows differ from the ones the checkpoint was trained on (split hash mismatch)")
    te = parts[2]
    reports = []
    for names in partitions or [meta["sensitive"]]:
        groups, card = te.groups_for(names)
        rep = evaluate_bundle(bundle, te, groups, card)
        reports.append({"sensitive": list(names), "group_card": card, "metrics": rep.to_dict()})
    return {"checkpoint": str(checkpoint), "seed": meta["seed"], "variant": meta["variant"], "reports": reports}


def cmd_evaluate(args) -> int:
    if args.checkpoint is None:
        raise CliError("evaluate needs --checkpoint")
    cfg = RunConfig.load(args.config) if args.config else None
    out = evaluate_checkpoint(args.checkpoint, args.sensitive, cfg)
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        write_json(Path(args.out), out)
    print(text)
    return 0


# ---------------------------------------------------------------------------
# oracle


ORACLE_TOL = 1e-10


def cmd_oracle(args) -> int:
    if args.joint or args.q:
        if not (args.joint and args.q):
            raise CliError("--joint and --q must be given together")
        try:
            joint = metrics.DiscreteJoint.loads(Path(args.joint).read_text())
            q = metrics.parse_table(Path(args.q).read_text())
        except OSError as exc:
            raise CliError(f"cannot read table: {exc.strerror}: {exc.filename}") from None
        d = metrics.variational_decomposition(joint, q)
        mi = metrics.brute_mi(joint)
        residual = abs(d.total - mi)
        print(f"H(s)={d.entropy_group:.12g} E[log q]={d.term_loglik:.12g} E[log ratio]={d.term_ratio:.12g}")
        print(f"sum={d.total:.12g} brute_mi={mi:.12g} residual={residual:.3e}")
        ok = residual < ORACLE_TOL
        print("PASS" if ok else "FAIL")
        return 0 if ok else 1
    checks = [
        ("decomposition", metrics.decomposition_suite(args.n, args.seed)),
        ("monotonicity", metrics.monotonicity_suite(args.n, args.seed)),
        ("independence", metrics.independence_suite(args.n, args.seed)),
    ]
    ok = True
    for name, worst in checks:
        passed = worst < ORACLE_TOL
        ok &= passed
        print(f"{name}: {'PASS' if passed else 'FAIL'} worst={worst:.3e} cases={args.n} seed={args.seed}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# plot


@dataclass
class PlotPoint:
    label: str
    variant: str
    micro_f1: float
    imparity: float
    reduction: float | None
    vanilla_imparity: float | None


def read_record(path) -> dict:
    try:
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read result file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed result file {path}: {exc}") from None
    try:
        agg = rec["aggregate"]
        float(agg["micro_f1"]), float(agg["imparity"])
        rec["variant"]
    except (KeyError, TypeError, ValueError):
        raise CliError(f"malformed result file {path}: missing aggregate metrics or variant") from None
    return rec


def plot_points(paths: Sequence[str]) -> list[PlotPoint]:
    points = []
    for p in paths:
        rec = read_record(p)
        agg = rec["aggregate"]
        if rec["variant"] == Variant.VANILLA.value:
            van = agg["imparity"]
        else:
            van = (rec.get("vanilla") or {}).get("aggregate", {}).get("imparity")
        points.append(PlotPoint(Path(p).stem, rec["variant"], agg["micro_f1"], agg["imparity"], agg.get("reduction"), van))
    return points


def render_svg(points: list[PlotPoint], width: int = 520, height: int = 380) -> str:
    """Scatter of micro F1 (x) against imparity (y) with a dashed vanilla-imparity line.

    Points below the line have less bias than the vanilla classifier; bottom
    right is the better corner.
    """
    left, right, top, bottom = 70, 20, 20, 55
    xs = [p.micro_f1 for p in points]
    refs = [p.vanilla_imparity for p in points if p.vanilla_imparity is not None]
    ref = refs[0] if refs else None
    ys = [p.imparity for p in points] + refs
    x0, x1 = _pad_range(min(xs), max(xs))
    y0, y1 = _pad_range(min(0.0, min(ys)), max(ys))
    pw, ph = width - left - right, height - top - bottom
    sx = lambda v: left + (v - x0) / (x1 - x0) * pw  # noqa: E731
    sy = lambda v: top + (1 - (v - y0) / (y1 - y0)) * ph  # noqa: E731
    el = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for i in range(5):
        xv, yv = x0 + i * (x1 - x0) / 4, y0 + i * (y1 - y0) / 4
        el.append(f'<text x="{sx(xv):.1f}" y="{top + ph + 15}" text-anchor="middle">{xv:.3f}</text>')
        el.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3f}</text>')
    el.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="13">Micro F1</text>')
    el.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {top + ph / 2:.1f})">Imparity</text>'
    )
    if ref is not None:
        el.append(
            f'<line class="vanilla" x1="{left}" y1="{sy(ref):.2f}" x2="{left + pw}" y2="{sy(ref):.2f}" stroke="#888" stroke-dasharray="6,4"/>'
        )
    for p in points:
        color = "#999" if p.variant == Variant.VANILLA.value else "#c0392b"
        el.append(f'<circle class="point" cx="{sx(p.micro_f1):.2f}" cy="{sy(p.imparity):.2f}" r="5" fill="{color}"><title>{_esc(p.label)}</title></circle>')
        el.append(f'<text x="{sx(p.micro_f1) + 7:.2f}" y="{sy(p.imparity) - 6:.2f}">{_esc(p.variant)}</text>')
    el.append("</svg>")
    return "\n".join(el) + "\n"


def _pad_range(lo: float, hi: float) -> tuple[float, float]:
    span = hi - lo
    pad = 0.1 * span if span > 0 else max(abs(hi) * 0.1, 0.05)
    return lo - pad, hi + pad


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def cmd_plot(args) -> int:
    if not args.results:
        raise CliError("plot needs at least one result file")
    points = plot_points(args.results)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "tradeoff.svg").write_text(render_svg(points), encoding="utf-8")
    with open(out / "tradeoff.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "variant", "micro_f1", "imparity", "reduction", "vanilla_imparity"])
        for p in points:
            w.writerow([p.label, p.variant, repr(p.micro_f1), repr(p.imparity), _opt(p.reduction), _opt(p.vanilla_imparity)])
    print(f"wrote {out / 'tradeoff.svg'} and {out / 'tradeoff.csv'} ({len(points)} point(s))")
    return 0


def _opt(v) -> str:
    return "" if v is None else repr(v)


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_config() -> dict:
    return {
        "dataset": "synthetic.csv",
        "schema": "synthetic_schema.json",
        "sensitive": ["gender", "race"],
        "include_sensitive": True,
        "split": {"fractions": [0.7, 0.1, 0.2]},
        "model": {"hidden": [32], "embed_dim": 32},
        "train": TrainConfig(learning_rate=1e-3, batch_size=32).to_dict(),
        "out": "runs",
    }


def cmd_synth(args) -> int:
    out = Path(args.out or "synthetic")
    csv_path, schema_path = write_synthetic(out, args.n, args.data_seed)
    write_json(out / "config.json", synthetic_config())
    print(f"wrote {csv_path}, {schema_path} and {out / 'config.json'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    if not names:
        raise argparse.ArgumentTypeError("expected at least one attribute name")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mifair", description="Intersectionally fair classifiers via mutual information minimisation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--version", action="version", version=VERSION)
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--config", required=True, help="JSON run config")
        sp.add_argument("--seeds", type=_int_list, help="comma-separated seeds, e.g. 0,1,2")
        sp.add_argument("--alpha", type=float, help="fairness weight")
        sp.add_argument("--sensitive", type=_name_list, action="append", help="comma-separated attributes forming the group")
        sp.add_argument("--out", help="output directory (default: the config's 'out')")

    sp = sub.add_parser("train", help="train one variant over all seeds plus the vanilla reference")
    run_flags(sp)
    sp.add_argument("--variant", choices=[v.value for v in Variant])
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("ablate", help="train the full objective and its two ablations under one protocol")
    run_flags(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("evaluate", help="test-split metrics of a stored checkpoint, for any attribute subset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--config", help="run config whose dataset paths override the checkpoint's")
    sp.add_argument(
        "--sensitive", type=_name_list, action="append", help="attributes forming one partition; repeat for several partitions"
    )
    sp.add_argument("--out", help="also write the report to this JSON file")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("oracle", help="check the exact mutual-information identities on random discrete joints")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n", type=int, default=100, help="random cases per suite")
    sp.add_argument("--joint", help="joint table file ('A B' header then A*B values)")
    sp.add_argument("--q", help="conditional q(b|a) table file in the same format")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("plot", help="micro F1 / imparity trade-off scatter as SVG and CSV")
    sp.add_argument("results", nargs="*", help="result JSON files")
    sp.add_argument("--out", help="output directory (default: current directory)")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("synth", help="write a synthetic biased dataset with its schema and a run config")
    sp.add_argument("--out", help="output directory (default: ./synthetic)")
    sp.add_argument("--n", type=int, default=4000)
    sp.add_argument("--data-seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, SchemaError, DataError, metrics.MetricError, TrainingDiverged) as exc:
        print(f"mifair {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"mifair {args.command}: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
