"""Command-line interface: ``nervequery <subcommand> ...``.

Exit codes: 0 success, 1 usage or validation error, 2 data error. Every input
is read and checked, and all results are computed, before the first output
file is written.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import _accel, nifti, phantom as phantom_mod
from .binding import BindingError, bind, stage_landscape
from .config import ConfigError, RunConfig
from .engine import filter_tractogram, write_verdicts
from .metrics import MetricError, evaluate, format_table
from .query import Parser, QuerySyntaxError, format_query, load_queries, tree
from .relations import RelationError, alpha_cut, landscape_for
from .tracts import TckError, Tractogram, read_tck, voxelize, write_tck
from .volume import GridMismatchError, LabelVolume, read_label_names, write_label_names

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flag dest -> config key
_FLAG_KEYS = {
    "query": "query",
    "threshold": "threshold",
    "min_points": "min_points",
    "orientation": "orientation",
    "crossing_tau": "crossing_tau",
    "kappa": "kappa",
    "between_limit": "between_limit",
    "near_decay": "near_decay",
    "directional_method": "directional_method",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="key = value run configuration")
    g = p.add_argument_group("overrides (win over the config file)")
    g.add_argument("--query", help="query name inside the query file")
    g.add_argument("--threshold", help="default stage threshold")
    g.add_argument("--min-points", dest="min_points", help="minimum points per stage window")
    g.add_argument("--orientation", choices=("both", "forward"))
    g.add_argument("--crossing-tau", dest="crossing_tau")
    g.add_argument("--kappa")
    g.add_argument("--between-limit", dest="between_limit")
    g.add_argument("--near-decay", dest="near_decay")
    g.add_argument("--directional-method", dest="directional_method", choices=("auto", "brute", "sliced"))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nervequery", description="Fuzzy spatial-relation queries over tractograms.")
    ap.add_argument("--threads", type=int, default=None,
                    help="kernel threads (default: all available); results do not depend on it")
    ap.add_argument("--manifest", action="store_true",
                    help="write the resolved configuration next to the outputs")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("parse", help="parse a query file and print its syntax trees")
    p.add_argument("queryfile")

    p = sub.add_parser("landscape", help="export one relation landscape as NIfTI")
    _add_config_flags(p)
    p.add_argument("--atom", required=True, help="relation text, e.g. 'anterior_of(Muscle)'")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("roi", help="export the alpha-cut of one stage as a uint8 mask")
    _add_config_flags(p)
    p.add_argument("--stage", type=int, required=True, help="1-based stage number")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("filter", help="recognise fibers and write the accepted bundle")
    _add_config_flags(p)
    p.add_argument("-o", "--output", required=True, help="output directory")

    p = sub.add_parser("metrics", help="compare predicted and reference bundles")
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--ref", action="append", required=True)
    p.add_argument("--grid", required=True, help="NIfTI whose grid is used for voxelization")
    p.add_argument("--case", action="append", help="row label, one per pair")
    p.add_argument("-o", "--output", help="TSV path (default: stdout)")

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("spec", help="phantom spec file or preset name (" + ", ".join(phantom_mod.PRESETS) + ")")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True, help="output directory")
    return ap


# --- helpers -----------------------------------------------------------------


def _load_config(args, *required: str) -> RunConfig:
    overrides = {_FLAG_KEYS[k]: str(v) for k, v in vars(args).items() if k in _FLAG_KEYS and v is not None}
    cfg = RunConfig.load(args.config, overrides)
    cfg.require(*required)
    return cfg


def _load_volume(cfg: RunConfig) -> LabelVolume:
    try:
        names, empty = read_label_names(cfg.labels)
    except ValueError as exc:
        raise ConfigError(f"{cfg.labels}: {exc}") from None
    vol = nifti.read_nifti(cfg.labelmap, names, empty)
    if not isinstance(vol, LabelVolume):
        raise DataError(f"{cfg.labelmap}: expected an integer label map")
    return vol


def _select_query(cfg: RunConfig):
    queries = load_queries(cfg.queries)
    if cfg.query is not None:
        if cfg.query not in queries:
            raise ConfigError(f"query {cfg.query!r} not found in {cfg.queries} (have: {', '.join(queries)})")
        return queries[cfg.query]
    if len(queries) != 1:
        raise ConfigError(f"{cfg.queries} defines {len(queries)} queries; pick one with 'query ='")
    return next(iter(queries.values()))


def _parse_atom(text: str):
    p = Parser(text)
    atom = p.parse_atom()
    if p.tok.kind != "EOF":
        p.error(f"unexpected {p.tok.text!r} after relation")
    return atom


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _manifest(args, cfg: RunConfig | None, target: Path, extra: dict | None = None) -> None:
    if not args.manifest:
        return
    lines = [f"command = {args.command}", f"backend = {_accel.backend()}"]
    text = "\n".join(lines) + "\n"
    if cfg is not None:
        text += cfg.manifest()
    for k, v in (extra or {}).items():
        text += f"{k} = {v}\n"
    _write_text(target, text)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.txt")


def _prepare_dir(path: Path) -> Path:
    if path.exists() and not path.is_dir():
        raise ConfigError(f"output {path} exists and is not a directory")
    return path


# --- subcommands ---------------------------------------------------------------


def cmd_parse(args) -> int:
    try:
        text = Path(args.queryfile).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {args.queryfile}: {exc.strerror}") from None
    queries = load_queries(args.queryfile) if text else {}
    if not queries:
        raise ConfigError(f"{args.queryfile}: no query definitions")
    print("\n".join(tree(q) for q in queries.values()))
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = _load_config(args, "labelmap", "labels")
    atom = _parse_atom(args.atom)
    vol = _load_volume(cfg)
    missing = [s for s in atom.structures() if s not in vol.label_names.values()]
    if missing:
        raise BindingError(missing)
    land = landscape_for(vol, atom.to_relation(), cfg.relations)
    out = Path(args.output)
    nifti.write_nifti(land, out)
    _manifest(args, cfg, _sidecar(out), {"atom": args.atom})
    return EXIT_OK


def cmd_roi(args) -> int:
    cfg = _load_config(args, "labelmap", "labels", "queries")
    q = _select_query(cfg)
    if not 1 <= args.stage <= len(q.stages):
        raise ConfigError(f"--stage must lie in 1..{len(q.stages)} for query {q.name!r}")
    if not 0.0 < args.alpha <= 1.0:
        raise ConfigError("--alpha must lie in (0, 1]")
    vol = _load_volume(cfg)
    bq = bind(q, vol, cfg.relations, cfg.engine.default_threshold)
    mask = alpha_cut(stage_landscape(bq, args.stage - 1), args.alpha)
    out = Path(args.output)
    nifti.write_nifti(mask, out)
    _manifest(args, cfg, _sidecar(out), {"stage": args.stage, "alpha": args.alpha})
    return EXIT_OK


def cmd_filter(args) -> int:
    cfg = _load_config(args, "labelmap", "labels", "queries", "tractogram")
    out = _prepare_dir(Path(args.output))
    q = _select_query(cfg)
    vol = _load_volume(cfg)
    tract = read_tck(cfg.tractogram)
    bq = bind(q, vol, cfg.relations, cfg.engine.default_threshold)
    report = filter_tractogram(tract, bq, cfg.engine)
    bundle = Tractogram(report.bundle.streamlines,
                        {"query": format_query(q), "source": Path(cfg.tractogram).name})

    out.mkdir(parents=True, exist_ok=True)
    write_tck(bundle, out / f"{q.name}.tck")
    write_verdicts(report, out / f"{q.name}_verdicts.tsv")
    nifti.write_nifti(report.labelmap, out / f"{q.name}_labelmap.nii.gz")
    _manifest(args, cfg, out / "manifest.txt")
    print(f"{q.name}: accepted {report.n_accepted} of {report.n_input} fibers")
    return EXIT_OK


def cmd_metrics(args) -> int:
    if len(args.pred) != len(args.ref):
        raise UsageError("--pred and --ref must be given the same number of times")
    if args.case and len(args.case) != len(args.pred):
        raise UsageError("--case must be given once per --pred/--ref pair")
    grid = nifti.read_grid(args.grid)
    rows = []
    for n, (p, r) in enumerate(zip(args.pred, args.ref)):
        pred, ref = read_tck(p), read_tck(r)
        case = args.case[n] if args.case else f"case{n + 1}"
        rows.append((case, Path(p).name.removesuffix(".tck"), evaluate(pred.streamlines, ref.streamlines, grid)))
    table = format_table(rows)
    if args.output:
        out = Path(args.output)
        _write_text(out, table)
        _manifest(args, None, _sidecar(out), {"grid": args.grid})
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_phantom(args) -> int:
    if args.spec in phantom_mod.PRESETS:
        spec = phantom_mod.preset(args.spec)
    else:
        spec = phantom_mod.load_spec(args.spec)
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    out = _prepare_dir(Path(args.output))
    try:
        ph = phantom_mod.generate(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    truth_mask = voxelize(ph.true_bundle, ph.volume.grid)

    out.mkdir(parents=True, exist_ok=True)
    nifti.write_nifti(ph.volume, out / "labelmap.nii.gz")
    write_label_names(ph.volume.label_names, out / "labels.txt", ph.volume.empty_labels)
    write_tck(ph.tractogram, out / "tractogram.tck")
    write_tck(Tractogram(ph.true_bundle, {"generator": f"nervequery phantom {spec.name} truth"}),
              out / "truth.tck")
    nifti.write_nifti(truth_mask, out / "truth_mask.nii.gz")
    _write_text(out / "truth.txt", "fiber\ttrue\n" + "".join(
        f"{i}\t{int(t)}\n" for i, t in enumerate(ph.is_true)))
    run = ["labelmap = labelmap.nii.gz", "labels = labels.txt", "tractogram = tractogram.tck"]
    if spec.query:
        _write_text(out / "queries.txt", f"{spec.name} = {spec.query}\n")
        run += ["queries = queries.txt", f"query = {spec.name}"]
    _write_text(out / "run.conf", "\n".join(run) + "\n")
    _manifest(args, None, out / "manifest.txt", {"spec": args.spec, "seed": spec.seed})
    print(f"{spec.name}: {int(ph.is_true.sum())} true + {int((~ph.is_true).sum())} spurious fibers -> {out}")
    return EXIT_OK


COMMANDS = {
    "parse": cmd_parse,
    "landscape": cmd_landscape,
    "roi": cmd_roi,
    "filter": cmd_filter,
    "metrics": cmd_metrics,
    "phantom": cmd_phantom,
}

_USAGE_ERRORS = (UsageError, ConfigError, QuerySyntaxError, BindingError)
_DATA_ERRORS = (DataError, nifti.NiftiError, TckError, MetricError, GridMismatchError, RelationError)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if args.command is None:
            ap.print_help(sys.stderr)
            return EXIT_USAGE
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        _accel.set_threads(args.threads)
        return COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
