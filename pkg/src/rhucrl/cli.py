"""Command-line entry point: ``rhucrl {train,evaluate,sweep,checks}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(including a run that produced no output policy), 3 check-suite failure.

Files written by ``train`` into the output directory:

* ``episodes.csv`` -- ``t,J_opt,J_pess,return,gamma_contrib,info_gain``
* ``timings.csv`` -- ``t,seconds`` (kept apart so that episodes.csv is
  byte-identical across repeated runs)
* ``model_final.json`` and ``model_ep<t>.json`` snapshots
* ``policy.json`` -- the output policy and the episode it came from
* ``manifest.json``

``evaluate`` adds ``evaluation.json`` and ``evaluation.csv``
(``setting,kind,index,value,return_mean,return_std``).  Every CSV starts
with a ``# config_hash: <hex>`` line followed by the header; every JSON
artifact carries a ``config_hash`` key.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__, config as config_mod
from .algorithm import EpisodeRecord, Learner, output_policy
from .evaluation import (REPORT_COLUMNS, SweepSpec, default_eval_budget, parameter_sweep,
                         worst_case_eval)
from .policies import PolicyParams, adversary_family
from .types import SeedContract

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECKS = 0, 1, 2, 3


class RunFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# atomic file helpers
# ---------------------------------------------------------------------------


def write_atomic(path, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def csv_text(config_hash: str, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash: {config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def read_csv(path):
    """(config_hash, rows as dicts) of a CSV written by :func:`csv_text`."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# config_hash:"):
            raise ValueError(f"{path} has no config hash line")
        return first.split(":", 1)[1].strip(), list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=1, sort_keys=True))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(cfg: dict, out_dir: str) -> dict:
    """Run the episodic loop; returns the manifest.  Raises RunFailure on
    a numeric failure (after writing a manifest marked failed) or when no
    output policy exists."""
    h = config_mod.config_hash(cfg)
    env = config_mod.build_env(cfg)
    model = config_mod.build_model(cfg, env)
    learner = Learner(env, model, config_mod.build_learner_config(cfg), SeedContract(cfg["seed"]))
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "config.json"), {"config_hash": h, "config": cfg})
    files = {"config": "config.json", "episodes": "episodes.csv", "timings": "timings.csv",
             "snapshots": []}
    manifest = {"config_hash": h, "code_version": __version__, "variant": cfg["variant"],
                "seed": cfg["seed"], "episodes": cfg["episodes"], "status": "running",
                "files": files}
    every = cfg["checkpoint_every"]
    recal = cfg["model"]["recalibrate"]
    validation = []

    def flush():
        write_atomic(os.path.join(out_dir, "episodes.csv"),
                     csv_text(h, EpisodeRecord.CSV_COLUMNS, [r.csv_row() for r in learner.records]))
        write_atomic(os.path.join(out_dir, "timings.csv"),
                     csv_text(h, ("t", "seconds"), [[r.t, f"{r.seconds:.6f}"] for r in learner.records]))

    def snapshot(name):
        d = model.to_json()
        d["config_hash"] = h
        write_json(os.path.join(out_dir, name), d)
        files["snapshots"].append(name)

    failure = None
    try:
        for _ in range(cfg["episodes"]):
            if recal:
                learner.model.fit = _split_fit(learner.model, validation)
            rec = learner.run_episode()
            if recal and validation:
                S, U, Ub, Sn = (np.array(x) for x in zip(*validation))
                model.recalibrate(S, U, Ub, Sn)
            if every and rec.t % every == 0:
                snapshot(f"model_ep{rec.t}.json")
    except Exception as exc:  # numeric failure mid-run
        failure = exc
    flush()
    snapshot("model_final.json")
    if failure is not None:
        manifest.update(status="failed", failed_episode=getattr(failure, "episode", None),
                        error=str(failure))
        write_json(os.path.join(out_dir, "manifest.json"), manifest)
        raise RunFailure(str(failure)) from failure
    if not learner.records:
        manifest.update(status="no-policy")
        write_json(os.path.join(out_dir, "manifest.json"), manifest)
        raise RunFailure("no episodes were run, so there is no output policy")
    agent, t_star = output_policy(learner.records)
    write_json(os.path.join(out_dir, "policy.json"),
               {"config_hash": h, "t_star": t_star, "J_pess": learner.records[t_star - 1].J_pess,
                "policy": agent.to_json()})
    files["policy"] = "policy.json"
    manifest.update(status="complete", t_star=t_star)
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _split_fit(model, validation):
    """Route every tenth transition of an episode to the validation pool."""
    base_fit = type(model).fit.__get__(model)

    def fit(transitions):
        train, held = [], []
        for tr in transitions:
            (held if tr.step_index % 10 == 9 else train).append(tr)
        validation.extend((tr.state, tr.agent_action, tr.adversary_action, tr.next_state)
                          for tr in held)
        return base_fit(train)
    return fit


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(cfg: dict, out_dir: str, force: bool = False, seed: int | None = None) -> dict:
    h = config_mod.config_hash(cfg)
    man_path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(man_path):
        raise FileNotFoundError(f"no manifest in {out_dir}")
    manifest = read_json(man_path)
    pol_path = os.path.join(out_dir, "policy.json")
    if "policy" not in manifest.get("files", {}) or not os.path.exists(pol_path):
        raise RunFailure("manifest has no output policy")
    pol = read_json(pol_path)
    for name, got in (("manifest", manifest["config_hash"]), ("policy", pol["config_hash"])):
        if got != h and not force:
            raise config_mod.ConfigError(
                f"{name} config hash {got[:12]} does not match this config ({h[:12]}); use --force")
    agent = PolicyParams.from_json(pol["policy"])
    ev = cfg["evaluation"]
    seed = cfg["seed"] if seed is None else seed
    seeds = SeedContract(seed)
    budget = default_eval_budget(config_mod.build_budget(cfg["optimizer"]), ev["budget_multiplier"])
    budget = config_mod.OptimizerBudget(**{**budget.__dict__, "particles": ev["particles"]})
    env = config_mod.build_env(cfg)
    kind = cfg["setting"]["kind"]
    if kind == "parameter":
        values = ev.get("parameter_values") or [1.0]
        sweep = SweepSpec("parameter", tuple(values), ev["seeds_per_cell"])
        report = parameter_sweep(env, agent, sweep, seeds.seed_sequence("evaluation", 0),
                                 particles=ev["particles"], agent_id=f"t{pol['t_star']}")
    else:
        report = worst_case_eval(env, agent, adversary_family(env, ev["adversary"]), budget,
                                 ev["restarts"], seeds.seed_sequence("evaluation", 0),
                                 agent_id=f"t{pol['t_star']}", setting=kind)
    payload = report.to_json()
    payload["config_hash"] = h
    write_json(os.path.join(out_dir, "evaluation.json"), payload)
    write_atomic(os.path.join(out_dir, "evaluation.csv"), csv_text(h, REPORT_COLUMNS, report.csv_rows()))
    manifest["files"]["evaluation"] = ["evaluation.json", "evaluation.csv"]
    write_json(man_path, manifest)
    return payload


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _number(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


def _parse_axis(text: str):
    if "=" not in text:
        raise config_mod.ConfigError("axis must look like key.path=v1,v2,...")
    key, vals = text.split("=", 1)
    try:
        values = [_number(v) for v in vals.split(",") if v.strip()]
    except ValueError:
        raise config_mod.ConfigError(f"axis values must be numbers: {vals}") from None
    if not values:
        raise config_mod.ConfigError("axis has no values")
    return key.strip(), values


def _cell_config(cfg, key, value, seed, out_dir):
    raw = config_mod.set_path(cfg, key, value)
    if key == "evaluation.parameter_value":
        raw = config_mod.set_path(cfg, "evaluation.parameter_values", [value])
    raw["seed"] = seed
    raw["output_dir"] = out_dir
    return config_mod.validate(raw)


def _run_cell(args):
    cfg, out_dir = args
    try:
        cmd_train(cfg, out_dir)
        rep = cmd_evaluate(cfg, out_dir)
        return {"ok": True, "worst_case": rep["worst_case"], "average": rep["average"]}
    except Exception as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def cmd_sweep(cfg: dict, axis: str, seeds, out_dir: str, workers: int = 1) -> str:
    key, values = _parse_axis(axis)
    cells = []
    for i, v in enumerate(values):
        for s in seeds:
            d = os.path.join(out_dir, f"cell{i:03d}_seed{s}")
            cells.append((i, v, s, _cell_config(cfg, key, v, s, d), d))
    jobs = [(c[3], c[4]) for c in cells]
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    h = config_mod.config_hash(cfg)
    cell_rows = [[i, repr(v), s, r["ok"], repr(r.get("worst_case", "")), repr(r.get("average", "")),
                  r.get("error", "")] for (i, v, s, _, _), r in zip(cells, results)]
    write_atomic(os.path.join(out_dir, "cells.csv"),
                 csv_text(h, ("cell", "value", "seed", "ok", "worst_case", "average", "error"), cell_rows))
    agg = []
    for i, v in enumerate(values):
        rs = [r for (j, *_), r in zip(cells, results) if j == i and r["ok"]]
        w = np.array([r["worst_case"] for r in rs])
        a = np.array([r["average"] for r in rs])
        stat = (lambda x: (repr(float(x.mean())), repr(float(x.std())))) if len(rs) else \
            (lambda x: ("nan", "nan"))
        agg.append([key, repr(v), len(rs), *stat(w), *stat(a)])
    text = csv_text(h, ("axis", "value", "n_ok", "worst_mean", "worst_std", "average_mean",
                        "average_std"), agg)
    write_atomic(os.path.join(out_dir, "sweep.csv"), text)
    return text


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rhucrl", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "evaluate", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--force", action="store_true")
        if name == "sweep":
            s.add_argument("--axis", required=True, help="dotted.key=v1,v2,...")
            s.add_argument("--seeds", default="0", help="comma-separated seeds per cell")
    c = sub.add_parser("checks")
    c.add_argument("--out")
    c.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if args.command == "checks":
        from .checks import run_all
        table, ok = run_all(seed=args.seed)
        print(table)
        if args.out:
            write_atomic(os.path.join(args.out, "checks.tsv"), table + "\n")
        return EXIT_OK if ok else EXIT_CHECKS
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out:
            cfg["output_dir"] = args.out
        out = cfg["output_dir"]
        if args.command == "train":
            m = cmd_train(cfg, out)
            print(json.dumps({"status": m["status"], "t_star": m.get("t_star"), "out": out}))
        elif args.command == "evaluate":
            rep = cmd_evaluate(cfg, out, force=args.force)
            print(json.dumps({"worst_case": rep["worst_case"], "average": rep["average"]}))
        else:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            print(cmd_sweep(cfg, args.axis, seeds, out, args.workers), end="")
    except (config_mod.ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailure as e:
        print(f"run failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # any other runtime failure
        print(f"run failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
