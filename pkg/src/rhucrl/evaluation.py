"""Worst-case evaluation of frozen agents and parameter sweeps.

A frozen agent is evaluated by training only its adversary on the true
system (population search with restarts, common random numbers across all
candidates) and reporting the lowest return found next to the return
against the box-centre adversary.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import ParameterRobustWrapper, set_parameter
from .optim import (Level, OptimizerBudget, TrueView, child_seeds, draw_noise, simulate,
                    solve_levels)
from .policies import PolicyFamily, PolicyParams, adversary_family

SETTINGS = ("adversarial", "action", "parameter")
REPORT_COLUMNS = ("setting", "kind", "index", "value", "return_mean", "return_std")


@dataclass
class EvaluationReport:
    agent_id: str
    setting: str = "adversarial"
    worst_case: float = float("nan")
    average: float = float("nan")
    curve: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    per_value: list = field(default_factory=list)   # (value, mean, std)
    worst_value: float | None = None
    min_candidate: float = float("nan")

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_value"] = [list(x) for x in self.per_value]
        return d

    @classmethod
    def from_json(cls, d) -> "EvaluationReport":
        d = dict(d)
        d["per_value"] = [tuple(x) for x in d["per_value"]]
        return cls(**d)

    def csv_rows(self) -> list:
        """Flat rows: one per restart, one per sweep cell, then the worst-case
        and average returns."""
        rows = [[self.setting, "restart", i, "", repr(v), ""] for i, v in enumerate(self.restarts)]
        rows += [[self.setting, "cell", i, repr(v), repr(m), repr(s)]
                 for i, (v, m, s) in enumerate(self.per_value)]
        rows.append([self.setting, "worst_case", 0, "" if self.worst_value is None else
                     repr(self.worst_value), repr(self.worst_case), ""])
        rows.append([self.setting, "average", 0, "", repr(self.average), ""])
        return rows


def default_eval_budget(training: OptimizerBudget, multiplier: float = 4.0) -> OptimizerBudget:
    """Training budget with ``multiplier`` times as many candidate evaluations
    (population and iterations each scaled by its square root)."""
    return training.scaled(float(np.sqrt(multiplier)))


def worst_case_eval(env, frozen_agent: PolicyParams, adversary: PolicyFamily | None,
                    budget: OptimizerBudget, restarts: int, seed, agent_id: str = "agent",
                    setting: str = "adversarial") -> EvaluationReport:
    """Minimise the true-system return over adversary policies.

    Every restart shares one noise block; the box-centre adversary is an
    anchor of each restart, so the worst case never exceeds the average.
    """
    adversary = adversary or adversary_family(env)
    seeds = child_seeds(seed, 1 + restarts)
    W, aux = draw_noise(env, budget.particles, np.random.default_rng(seeds[0]))
    view = TrueView(env)
    fams = {"agent": frozen_agent.family, "adversary": adversary}
    seen = []

    def score(rows):
        v = simulate(view, fams, rows, W, aux).mean(axis=1)
        seen.append(float(v.min()))
        return v

    base = {"agent": frozen_agent.theta[None, :]}
    average = float(score({**base, "adversary": adversary.zeros().theta[None, :]})[0])
    results, curve = [], []
    for r in range(restarts):
        lv = Level(("adversary",), (adversary,), -1, budget, np.random.default_rng(seeds[1 + r]),
                   (np.zeros(adversary.dim),))
        before = len(seen)
        vals, _ = solve_levels([lv], base, 1, score)
        results.append(float(vals[0]))
        curve.append(float(min(seen[before:])))
    worst = min(results + [average])
    return EvaluationReport(agent_id, setting, worst, average, curve, results,
                            min_candidate=float(min(seen)))


@dataclass(frozen=True)
class SweepSpec:
    setting: str
    values: tuple
    seeds_per_cell: int = 1

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if not self.values:
            raise ValueError("empty sweep grid")
        if self.seeds_per_cell < 1:
            raise ValueError("seeds_per_cell must be >= 1")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def check(self, lo: float, hi: float):
        bad = [v for v in self.values if not lo <= v <= hi]
        if bad:
            raise ValueError(f"sweep values {bad} outside [{lo}, {hi}]")


def parameter_sweep(wrapper: ParameterRobustWrapper, frozen_agent: PolicyParams, sweep: SweepSpec,
                    seed, particles: int = 1, agent_id: str = "agent") -> EvaluationReport:
    """Mean true-system return per parameter value; the average is the grid mean
    and the worst case the lowest cell."""
    sweep.check(*wrapper.interval)
    rows = []
    for i, v in enumerate(sweep.values):
        env = set_parameter(wrapper, v)
        adv = adversary_family(env, "none")
        fams = {"agent": frozen_agent.family, "adversary": adv}
        returns = []
        for k in range(sweep.seeds_per_cell):
            W, aux = draw_noise(env, particles,
                                np.random.default_rng(child_seeds(seed, sweep.seeds_per_cell)[k]))
            R = simulate(TrueView(env), fams, {"agent": frozen_agent.theta[None, :],
                                               "adversary": np.zeros((1, 0))}, W, aux)
            returns.append(float(R.mean()))
        rows.append((v, float(np.mean(returns)), float(np.std(returns))))
    means = np.array([m for _, m, _ in rows])
    j = int(np.argmin(means))
    return EvaluationReport(agent_id, "parameter", float(means[j]), float(means.mean()),
                            per_value=rows, worst_value=rows[j][0], min_candidate=float(means[j]))


# ---------------------------------------------------------------------------
# plot-data export
# ---------------------------------------------------------------------------


def export_plot_data(reports: dict, path=None) -> str:
    """CSV with one row per (report, restart/cell); keys of ``reports`` become the ``run`` column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run",) + REPORT_COLUMNS)
    for name, rep in reports.items():
        for row in rep.csv_rows():
            w.writerow([name] + row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def import_plot_data(text: str) -> dict:
    """Inverse of :func:`export_plot_data` for the numeric content."""
    out: dict = {}
    for row in csv.DictReader(io.StringIO(text)):
        rep = out.setdefault(row["run"], {"setting": row["setting"], "restarts": [], "cells": [],
                                          "worst_case": None, "average": None})
        if row["kind"] == "restart":
            rep["restarts"].append(float(row["return_mean"]))
        elif row["kind"] == "cell":
            rep["cells"].append((float(row["value"]), float(row["return_mean"]),
                                 float(row["return_std"])))
        else:
            rep[row["kind"]] = float(row["return_mean"])
    return out


def report_dumps(report: EvaluationReport) -> str:
    return json.dumps(report.to_json(), indent=1)
