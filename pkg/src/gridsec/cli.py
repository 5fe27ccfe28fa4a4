"""Command-line entry point ``gridsec``.

Subcommands::

    gridsec run --config FILE [--seed N] [--set key=value ...] [--out DIR]
    gridsec threshold ALPHA L_TARGET
    gridsec verify-ledger FILE [--config FILE] [--seed N]
    gridsec validate-model [--config FILE] [--set key=value ...]

Exit codes: 0 success, 2 configuration or file-format error, 3 runtime
error, 4 ledger integrity violation. ``GS_LOG`` sets the log level
(``DEBUG``, ``INFO``, ``WARNING`` (default), ...).

Configuration (TOML, every key optional unless noted; unknown keys are errors)::

    [model]
    preset = "ieee14"            # or an inline model:
    # H = [[...], ...]           # required inline, sensors x states
    # A = [[...]] or a_diag = [...]   (default identity; A must be diagonal)
    # sigma_v2 = 1e-4            # required inline
    # sigma_w2 = 1e-4            # required inline
    # partition = [[1, 2], [3]]  # required inline, 1-based sensor rows per subregion
    # x0 = [...]                 # default zeros
    # n_buses, name              # informational

    [detection]
    alpha = 0.2                  # in (0, 1/e)
    L_target = 1e6               # false-alarm period target, or give h directly
    # h = 21.35
    outlier_alpha = 0.01         # robust baseline rejection level

    [ledger]
    M = 200                      # blocks retained, genesis included
    difficulty = 8               # leading zero bits of the block hash
    n_miners = 2

    [scenario]
    T = 1000
    seed = 0
    on_alarm = "halt"            # "halt" | "restart" | "observe"
    # investigation_delay = 10   # steps of prediction-only after an alarm (default: until T)
    hacked_vote = "always0"      # "always0" | "honest" | "always1"
    cross_policy = "zero"        # "zero" | "strict"
    baselines = ["centralized", "robust", "nominal"]

    [[scenario.attacks]]
    targets = [1, 2]             # subregions whose sensors receive false data
    onset = 200
    magnitude = 0.3              # Uniform[0, magnitude] per sensor and step

    [[scenario.misbehaviors]]
    node = 3
    onset = 1
    magnitude = 0.1
    behavior = "silent-fdi"      # "silent-fdi" | "constant-estimate" | "random-estimate"

    [output]
    dir = "out"
    prefix = "run"
    csv = true
    json = true
    ledger = true

``--set`` takes dotted paths into this document, for example
``--set scenario.T=50`` or ``--set scenario.attacks.0.magnitude=0.1``.

CSV columns, in order: ``t``, ``mse_node1..L``, ``mse_total``, then per node
``g_meas_i, alarm_meas_i, g_trust_i, declared_i``, then ``mse_centralized``,
``mse_robust``, ``mse_nominal``. One row per simulated step ``t = 1..t_end``;
``g_trust_i`` is the largest trust statistic any neighbor holds about node i.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import build_config, load_config
from .detection import threshold_for_false_alarm
from .errors import ConfigError, GridSecError, InvalidAlpha, InvalidModel, LedgerFormatError, LedgerTampered
from .ledger import export_ledger, generate_keys, import_ledger, verify_chain
from .model import validate

log = logging.getLogger("gridsec")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_TAMPER = 0, 2, 3, 4


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _load(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"scenario.seed={args.seed}")
    if args.config is None:
        from .config import apply_override
        doc = {}
        for item in overrides:
            apply_override(doc, item)
        return build_config(doc)
    return load_config(args.config, overrides)


def cmd_run(args) -> int:
    from .simnet import run
    from .simnet.metrics import write_csv, write_json

    if args.config is None:
        return _fail(EXIT_CONFIG, "run needs --config")
    try:
        cfg = _load(args)
        problems = validate(cfg.scenario.model)
        if problems:
            raise InvalidModel("; ".join(problems))
    except (ConfigError, InvalidAlpha, InvalidModel, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    out = Path(args.out or cfg.output.dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        log.info("running seed=%d T=%d", cfg.scenario.seed, cfg.scenario.T)
        rec = run(cfg.scenario, keep_ledgers=cfg.output.ledger)
        stem = out / cfg.output.prefix
        written = []
        if cfg.output.csv:
            write_csv(rec, f"{stem}.csv")
            written.append(f"{stem}.csv")
        if cfg.output.json:
            write_json(rec, f"{stem}.json")
            written.append(f"{stem}.json")
        if cfg.output.ledger:
            Path(f"{stem}.ledger").write_bytes(export_ledger(rec.ledger))
            written.append(f"{stem}.ledger")
    except (GridSecError, OSError) as exc:
        return _fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")
    print(f"gamma_net={rec.gamma_net} t_end={rec.t_end}")
    for w in written:
        print(f"wrote {w}")
    return EXIT_OK


def cmd_threshold(args) -> int:
    try:
        alpha, L = float(args.alpha), float(args.L_target)
        h = threshold_for_false_alarm(alpha, L)
    except (InvalidAlpha, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    print(f"{h:.6f}")
    return EXIT_OK


def cmd_verify_ledger(args) -> int:
    try:
        data = Path(args.path).read_bytes()
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"cannot read {args.path}: {exc.strerror or exc}")
    try:
        ledger = import_ledger(data)
    except LedgerTampered as exc:
        print(f"violation: {exc}")
        return EXIT_TAMPER
    except LedgerFormatError as exc:
        return _fail(EXIT_CONFIG, f"format error: {exc}")
    registry = None
    if args.config is not None or args.seed is not None:
        try:
            cfg = _load(args)
        except (ConfigError, InvalidAlpha, ValueError) as exc:
            return _fail(EXIT_CONFIG, str(exc))
        _, registry = generate_keys(range(1, cfg.scenario.model.n_nodes + 1), cfg.scenario.seed)
    report = verify_chain(ledger, registry)
    if report.clean:
        print(f"clean: {len(ledger.blocks)} blocks, timesteps {ledger.oldest_timestep}..{ledger.latest_timestep}")
        return EXIT_OK
    print(f"violation at block index {report.index} (timestep {report.timestep}): {report.reason}")
    return EXIT_TAMPER


def cmd_validate_model(args) -> int:
    try:
        cfg = _load(args)
    except (ConfigError, InvalidAlpha, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    problems = validate(cfg.scenario.model)
    if problems:
        for p in problems:
            print(p)
        return EXIT_CONFIG
    m = cfg.scenario.model
    print(f"ok: {m.name}, {m.n_sensors} sensors, {m.state_dim} states, {m.n_nodes} subregions")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridsec", description="Secure distributed grid state estimation.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario and write CSV / JSON / ledger")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--set", action="append", metavar="KEY=VALUE")
    r.add_argument("--out", metavar="DIR")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("threshold", help="detection threshold for a false-alarm period target")
    t.add_argument("alpha")
    t.add_argument("L_target")
    t.set_defaults(func=cmd_threshold)

    v = sub.add_parser("verify-ledger", help="check an exported ledger file")
    v.add_argument("path")
    v.add_argument("--config", help="rebuild the key registry to check node ids")
    v.add_argument("--seed", type=int)
    v.add_argument("--set", action="append", metavar="KEY=VALUE")
    v.set_defaults(func=cmd_verify_ledger)

    m = sub.add_parser("validate-model", help="check model invariants")
    m.add_argument("--config")
    m.add_argument("--set", action="append", metavar="KEY=VALUE")
    m.set_defaults(func=cmd_validate_model, seed=None)
    return p


def main(argv=None) -> int:
    level = os.environ.get("GS_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
