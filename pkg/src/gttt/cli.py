"""``gttt`` command line: pretrain, run, ablate, bounds.

Exit codes: 0 success, 1 runtime failure, 2 config or validation error.
"""

import argparse
import copy
import csv
import logging
import sys
from pathlib import Path

from gttt import experiment as ex
from gttt.annotator.prompts import PROMPT_KINDS
from gttt.bounds import BoundInputs, bound_report
from gttt.errors import ConfigError, GtttError, ValidationError
from gttt.graph import save_split
from gttt.ttt import FILTER_MODES

logger = logging.getLogger("gttt")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
ABLATION_AXES = ("selection", "prompts", "filter", "stages", "oracle_acc")
ORACLE_LEVELS = (1.0, 0.9, 0.6)
STAGE_SETTINGS = {"neither": (False, False), "stage1": (True, False), "stage2": (False, True), "both": (True, True)}
CSV_COLUMNS = ["axis", "axis_value", "seed", "acc_pretrained", "acc_stage1", "acc_stage2",
               "budget", "budget_used", "status"]


def _config(args):
    cfg = ex.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def cmd_pretrain(args):
    cfg = _config(args)
    data = ex.prepare_data(cfg, cfg.seed)
    model, metrics = ex.pretrain_model(cfg, data, cfg.seed)
    path = ex.save_model(cfg, model)
    save_split(data.split, Path(cfg.out) / "split.json")
    ex.dump_json(metrics, Path(cfg.out) / "pretrain_metrics.json")
    print(f"checkpoint: {path}  test accuracy: {metrics['acc_test']:.4f}")
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    if args.budget is not None:
        if args.budget < 1:
            raise ConfigError("annotation budget must be >= 1")
        cfg.selection.budget = args.budget
    data = ex.prepare_data(cfg, cfg.seed)
    if args.pretrain:
        model, pre = ex.pretrain_model(cfg, data, cfg.seed)
        ex.save_model(cfg, model)
        ex.dump_json(pre, Path(cfg.out) / "pretrain_metrics.json")
    else:
        model = ex.load_model(cfg)
    _, metrics = ex.run_once(cfg, data, model, cfg.seed)
    ex.dump_json(metrics, Path(cfg.out) / "metrics.json")
    if metrics["status"] != "ok":
        print(f"run failed ({metrics['status']}): {metrics['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    print(
        f"pretrained {metrics['acc_pretrained']:.4f}  stage1 {metrics['acc_stage1']:.4f}  "
        f"stage2 {metrics['acc_stage2']:.4f}  budget {metrics['budget_used']}/{metrics['budget']}"
    )
    return EXIT_OK


def axis_cells(cfg, axis):
    """``(value, config)`` pairs for one ablation axis."""
    cells = []
    if axis == "selection":
        for kind in ex.SELECTION_KINDS:
            c = copy.deepcopy(cfg)
            c.selection.kind = kind
            cells.append((kind, c))
    elif axis == "prompts":
        if cfg.llm is None:
            raise ConfigError("the prompts axis needs an [annotator.llm] section")
        for kind in PROMPT_KINDS:
            c = copy.deepcopy(cfg)
            c.llm.prompt = kind
            cells.append((kind, c))
    elif axis == "filter":
        for mode in FILTER_MODES:
            c = copy.deepcopy(cfg)
            c.ttt.filter = mode
            cells.append((mode, c))
    elif axis == "stages":
        for name, (s1, s2) in STAGE_SETTINGS.items():
            c = copy.deepcopy(cfg)
            c.ttt.stage1_epochs = c.ttt.stage1_epochs if s1 else 0
            c.ttt.stage2_epochs = c.ttt.stage2_epochs if s2 else 0
            cells.append((name, c))
    elif axis == "oracle_acc":
        if cfg.oracle is None:
            raise ConfigError("the oracle_acc axis needs an [annotator.oracle] section")
        for level in ORACLE_LEVELS:
            c = copy.deepcopy(cfg)
            c.oracle.accuracy = level
            cells.append((repr(level), c))
    else:
        raise ConfigError(f"axis must be one of {ABLATION_AXES}")
    return cells


def ablate(cfg, axis, client=None):
    """Run the sweep; returns long-format rows. One pretrained model per seed is shared across cells."""
    cells = axis_cells(cfg, axis)
    rows = []
    for seed in range(cfg.seed, cfg.seed + cfg.ablate_seeds):
        data = ex.prepare_data(cfg, seed)
        model, _ = ex.pretrain_model(cfg, data, seed)
        for value, cell_cfg in cells:
            try:
                _, m = ex.run_once(cell_cfg, data, model, seed, client)
            except GtttError as exc:
                logger.error("cell %s=%s seed %d failed: %s", axis, value, seed, exc)
                m = {"status": f"failed:{type(exc).__name__}"}
            rows.append({
                "axis": axis, "axis_value": value, "seed": seed,
                **{k: m.get(k) for k in CSV_COLUMNS[3:]},
            })
    return rows


def write_rows(rows, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in CSV_COLUMNS})


def cmd_ablate(args):
    cfg = _config(args)
    rows = ablate(cfg, args.axis)
    path = Path(cfg.out) / f"ablation_{args.axis}.csv"
    write_rows(rows, path)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} rows -> {path}" + (f" ({failed} failed cells)" if failed else ""))
    return EXIT_RUNTIME if failed else EXIT_OK


def load_bound_inputs(path):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    sec = dict(raw.get("bounds", {}))
    grid = int(sec.pop("grid", 101))
    out = raw.get("out", "runs/bounds")
    try:
        b = BoundInputs(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in sec.items()})
    except TypeError as exc:
        raise ConfigError(f"bad [bounds] section: {exc}") from None
    b.validate()
    if not 0.0 < b.lam[0] < 1.0:
        raise ValidationError("lam[0] must be in (0, 1)")
    return b, grid, out


def cmd_bounds(args):
    b, grid, out = load_bound_inputs(args.config)
    out = args.out or out
    report = bound_report(b, grid)
    path = Path(out) / "bound_report.json"
    ex.dump_json(report, path)
    t2 = report["theorem2"]
    print(f"min weighted bound {t2['min']:.6f} vs no-test-label bound {t2['ftt']:.6f}: holds={t2['holds']}")
    return EXIT_OK if t2["holds"] else EXIT_RUNTIME


def build_parser():
    p = argparse.ArgumentParser(prog="gttt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML config file")
        sp.add_argument("--seed", type=int, default=None, help="override the root seed")
        sp.add_argument("--out", default=None, help="override the output directory")

    common(sub.add_parser("pretrain", help="pretrain a GCN on the source split"))
    run = sub.add_parser("run", help="select, annotate and adapt")
    common(run)
    run.add_argument("--budget", type=int, default=None, help="annotation budget (default: 10%% of test)")
    run.add_argument("--pretrain", action="store_true", help="pretrain first instead of loading a checkpoint")
    abl = sub.add_parser("ablate", help="sweep one axis over several seeds")
    common(abl)
    abl.add_argument("--axis", required=True, choices=ABLATION_AXES)
    common(sub.add_parser("bounds", help="numeric bound report"))
    return p


COMMANDS = {"pretrain": cmd_pretrain, "run": cmd_run, "ablate": cmd_ablate, "bounds": cmd_bounds}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage error
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GtttError, OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
