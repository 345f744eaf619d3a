"""Command line entry point: ``srcis {run,gen,eval,inspect}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import memory as mem
from .backbone import backbone_init
from .detector import OnlineExperience
from .errors import SRCISError
from .harness import (RunConfig, RunError, build_oracle, build_stream, evaluate, run,
                      write_outputs)
from .stream import write_csv

logger = logging.getLogger("srcis")


def _flag_type(default):
    if isinstance(default, bool):
        return lambda s: s.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    for f in fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       type=_flag_type(f.default), metavar=f.name.upper())


def _load_config(args) -> RunConfig:
    base = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        base = doc.get("config", doc)  # accepts a run.json too
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    return RunConfig.from_dict(base)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    events: list[dict] = []
    result = run(cfg, log=events.append)
    out = write_outputs(result, cfg.out_dir or "results", events)
    m = result.metrics
    print(f"mode={cfg.mode} tasks={len(result.matrix)} ACC_T={m['acc_final']:.4f} "
          f"a_TT={m['a_tt']:.4f} time={result.seconds:.1f}s -> {out}")
    return 0


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    stream = build_stream(cfg)
    x = np.concatenate([np.concatenate([t.x_train, t.x_test]) for t in stream.tasks])
    y = np.concatenate([np.concatenate([t.y_train, t.y_test]) for t in stream.tasks])
    write_csv(args.output, x, y)
    print(f"wrote {len(y)} rows, {x.shape[1]} features, {len(set(y.tolist()))} classes to {args.output}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    store = mem.load(args.checkpoint)
    if store.backbone is None:
        raise SRCISError("checkpoint has no backbone description")
    b = store.backbone
    bk = backbone_init(b["input_dim"], b["embed_dim"], b["depth"], b["seed"],
                       hidden_dim=b.get("hidden_dim"), activation=b.get("activation", "tanh"))
    stream = build_stream(cfg)
    seen = set(store.seen_classes)
    n = sum(1 for t in stream.tasks if set(t.classes) <= seen)
    if n == 0:
        raise SRCISError("checkpoint has learned none of the stream's tasks")
    exp = store.experience or OnlineExperience(cfg.beta_e, cfg.beta_std)
    row, d = evaluate(stream, n - 1, bk, store, exp, cfg.detector_config(),
                      build_oracle(cfg, stream), cfg.topk, cfg.mode)
    print(json.dumps({"accuracy": row, "acc": sum(row) / len(row), "deferral_rate": d["rate"]}))
    return 0


def cmd_inspect(args) -> int:
    store = mem.load(args.checkpoint)
    info = {
        "period_e": store.period_e,
        "seen_classes": store.seen_classes,
        "stm_adapters": [{"task_id": a.task_id, "composite": a.composite, "rank": a.rank}
                         for a in store.stm_adapters],
        "ltm_adapter": None if store.ltm_adapter is None else list(store.ltm_adapter.shape),
        "parameter_floats": store.parameter_float_count(),
        "scenario_pool": len(store.scenario_pool),
        "experience": None if store.experience is None else store.experience.to_dict(),
        "tau": {c: store.prototypes[c].tau for c in store.seen_classes},
    }
    print(json.dumps(info, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srcis", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a benchmark and write results")
    _add_config_flags(r)
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen", help="write a synthetic stream as CSV")
    _add_config_flags(g)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the configured stream")
    _add_config_flags(e)
    e.add_argument("checkpoint")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="summarize a checkpoint")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SRCISError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
