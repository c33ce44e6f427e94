"""Command-line pipeline: collect -> train -> evaluate -> sweep -> report.

Artifacts live under ``--out``::

    datasets/{baseline}-n{N}-seed{seed}-{hash}.jsonl
    nets/dqn-baseline-seed{seed}-{hash}.qnet
    nets/spibb-{baseline}-n{N}-nw{N_wedge}-seed{seed}-{hash}.qnet  (+ .json sidecar)
    runs/spibb-{baseline}-n{N}-nw{N_wedge}-seed{seed}-{hash}.csv
    runs/{policy}-ref-seed{seed}-{hash}.csv          (random, rb, dqn, optimal)
    results.csv   one row per evaluated run
    summary.csv   mean / std / CVaR per (policy, baseline, N, N_wedge)
    panels/{metric}_vs_{axis}.csv

Datasets, DQN baselines and reference runs carry the base hash (network
config, rule thresholds, training hyperparameters, collection budget); SPIBB
nets and runs carry a hash that also covers the pseudo-count mode, d0 and the
execution mode.  Different settings therefore never collide, and an existing
file is always safe to reuse, which is what makes sweeps resumable.  Files are
written to a temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import collect as collect_mod
from .collect import Dataset, collect_rows, subsample
from .evaluation import RunResult, cvar, evaluate_policy
from .mdp import EpisodeConfig, RetEnv
from .netsim import ConfigError, NetworkConfig, load_config, read_toml
from .policies import (
    DqnEpsGreedy,
    OptimalSearch,
    Policy,
    RandomPolicy,
    RuleBased,
    RuleThresholds,
    train_dqn_baseline,
)
from .qnet import QNet, TrainHyper
from .spibb import CountMode, SpibbConfig, SpibbGreedy, SpibbProjected, build_index, train_spibb

log = logging.getLogger("safe_ret")

N_GRID = (25, 50, 100, 200, 300, 400, 500)
N_WEDGE_GRID = (5, 10, 20, 30, 40, 50, 100, 150, 200, 300)
BASELINES = ("rb", "dqn")
REFERENCE_POLICIES = ("random", "rb", "dqn", "optimal")
POLICY_ORDER = ("random", "rb", "dqn", "spibb-rb", "spibb-dqn", "optimal")
POOL_ROWS = 500  # rows collected per baseline and seed; N-row datasets are drawn from it
DQN_STEPS = 500
DQN_EPSILON = 0.2
# (N, N_wedge) held fixed in each panel family
T_PANEL_POINT = (300, 100.0)
N_PANEL_WEDGE = 100.0
WEDGE_PANEL_N = 100

RESULT_FIELDS = (
    "policy", "baseline", "N", "n_wedge", "seed", "config_hash", "avg_reward", "min_cell_reward",
)
SUMMARY_FIELDS = (
    "policy", "baseline", "N", "n_wedge", "runs",
    "avg_reward_mean", "avg_reward_std", "avg_reward_cvar", "min_cell_mean", "min_cell_std",
)


class UsageError(Exception):
    pass


# --- settings -----------------------------------------------------------------


@dataclass(frozen=True)
class Settings:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    rule: RuleThresholds = field(default_factory=RuleThresholds)
    hyper: TrainHyper = field(default_factory=TrainHyper)
    mode: CountMode = CountMode.KERNEL
    d0: float = 0.5
    greedy_exec: bool = True
    pool_rows: int = POOL_ROWS
    dqn_steps: int = DQN_STEPS
    cvar_level: float = 0.05

    def _base_payload(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "rule": dataclasses.asdict(self.rule),
            "hyper": dataclasses.asdict(self.hyper),
            "pool_rows": self.pool_rows,
            "dqn_steps": self.dqn_steps,
        }

    def base_digest(self) -> str:
        """Hash for datasets, DQN baselines and reference runs."""
        return _hash(self._base_payload())

    def digest(self) -> str:
        """Hash for SPIBB nets and runs; adds the SPIBB and execution settings."""
        payload = dict(self._base_payload(), mode=CountMode(self.mode).value, d0=self.d0, greedy_exec=self.greedy_exec)
        return _hash(payload)

    def spibb_config(self, n_wedge: float) -> SpibbConfig:
        return SpibbConfig(n_wedge=n_wedge, hyper=self.hyper, mode=self.mode, d0=self.d0, greedy_execution=self.greedy_exec)


def _hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def load_settings(path: str | None, mode: str = "kernel", greedy_exec: bool = True) -> Settings:
    """Network keys at top level or under ``[network]``; rule thresholds under ``[rule]``."""
    if path is None:
        return Settings(mode=CountMode(mode), greedy_exec=greedy_exec)
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    data = read_toml(path)
    tables = {k for k, v in data.items() if isinstance(v, dict)}
    extra = tables - {"network", "rule"}
    if extra:
        raise ConfigError(f"unknown config tables: {sorted(extra)}")
    network = load_config(path)
    rule = RuleThresholds(**data.get("rule", {}))
    return Settings(network=network, rule=rule, mode=CountMode(mode), greedy_exec=greedy_exec)


# --- small helpers ------------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``"1,2,5"``, ``"1-20"`` or a mix such as ``"1-3,7"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise UsageError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        elif part.isdigit():
            seeds.append(int(part))
        else:
            raise UsageError(f"bad seed spec {part!r}")
    if not seeds:
        raise UsageError("no seeds given")
    return sorted(set(seeds))


def parse_grid(text: str | None, default, cast=int):
    if text is None:
        return list(default)
    return [cast(x) for x in text.split(",") if x.strip()]


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def fmt_wedge(n_wedge: float) -> str:
    return f"{float(n_wedge):g}"


def fmt_float(x: float) -> str:
    return repr(float(x))


def worker_count(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("SAFE_RET_WORKERS")
    return max(1, int(env)) if env else 1


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    tmp.replace(path)


def write_csv(path: Path, fields, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def read_csv(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


# --- artifact paths -----------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    root: Path
    digest: str
    base_digest: str

    @classmethod
    def of(cls, root, s: Settings) -> "Layout":
        return cls(Path(root), s.digest(), s.base_digest())

    @property
    def digests(self) -> tuple[str, str]:
        return (self.base_digest, self.digest)

    def dataset(self, baseline: str, n: int, seed: int) -> Path:
        return self.root / "datasets" / f"{baseline}-n{n}-seed{seed}-{self.base_digest}.jsonl"

    def dqn_net(self, seed: int) -> Path:
        return self.root / "nets" / f"dqn-baseline-seed{seed}-{self.base_digest}.qnet"

    def spibb_net(self, baseline: str, n: int, n_wedge: float, seed: int) -> Path:
        return self.root / "nets" / f"spibb-{baseline}-n{n}-nw{fmt_wedge(n_wedge)}-seed{seed}-{self.digest}.qnet"

    def spibb_run(self, baseline: str, n: int, n_wedge: float, seed: int) -> Path:
        return self.root / "runs" / f"spibb-{baseline}-n{n}-nw{fmt_wedge(n_wedge)}-seed{seed}-{self.digest}.csv"

    def ref_run(self, policy: str, seed: int) -> Path:
        return self.root / "runs" / f"{policy}-ref-seed{seed}-{self.base_digest}.csv"


RUN_NAME = re.compile(
    r"^(?:spibb-(?P<b>rb|dqn)-n(?P<n>\d+)-nw(?P<nw>[0-9.e+]+)|(?P<ref>random|rb|dqn|optimal)-ref)"
    r"-seed(?P<seed>\d+)-(?P<h>[0-9a-f]{12})\.csv$"
)


# --- pipeline steps (each is idempotent) ---------------------------------------


def ensure_dqn_baseline(s: Settings, lay: Layout, seed: int) -> QNet:
    path = lay.dqn_net(seed)
    if path.exists():
        return QNet.load(path)
    env = RetEnv(s.network, seed)
    net = train_dqn_baseline(env, s.hyper, steps=s.dqn_steps, epsilon=DQN_EPSILON, seed=seed)
    net.save(path, kind="dqn-baseline", steps=s.dqn_steps, epsilon=DQN_EPSILON, config_hash=lay.base_digest)
    return net


def baseline_policy(s: Settings, lay: Layout, baseline: str, seed: int) -> Policy:
    if baseline == "rb":
        return RuleBased(s.rule)
    if baseline == "dqn":
        return DqnEpsGreedy(ensure_dqn_baseline(s, lay, seed), DQN_EPSILON)
    raise UsageError(f"unknown baseline {baseline!r}")


def ensure_dataset(s: Settings, lay: Layout, baseline: str, n: int, seed: int) -> Dataset:
    path = lay.dataset(baseline, n, seed)
    if path.exists():
        return collect_mod.load(path)
    policy = baseline_policy(s, lay, baseline, seed)
    data = collect_rows(RetEnv(s.network, seed), policy, n, seed, settings_hash=lay.base_digest)
    collect_mod.save(data, path)
    return data


def training_data(s: Settings, lay: Layout, baseline: str, n: int, seed: int) -> Dataset:
    """N rows drawn from the seed's ``pool_rows``-row collection."""
    if n > s.pool_rows:
        raise UsageError(f"N={n} exceeds the collected pool of {s.pool_rows} rows")
    pool = ensure_dataset(s, lay, baseline, s.pool_rows, seed)
    return subsample(pool, n, seed)


def ensure_spibb_net(s: Settings, lay: Layout, baseline: str, n: int, n_wedge: float, seed: int) -> QNet:
    path = lay.spibb_net(baseline, n, n_wedge, seed)
    if path.exists():
        return QNet.load(path)
    data = training_data(s, lay, baseline, n, seed)
    cfg = s.spibb_config(n_wedge)
    net = train_spibb(data, cfg, seed)
    meta = {"kind": "spibb", "baseline": baseline, "N": n, "n_wedge": n_wedge, "mode": cfg.mode.value, "seed": seed}
    net.save(path, config_hash=lay.digest, **{k: v for k, v in meta.items() if k != "seed"})
    atomic_write_text(path.with_suffix(".json"), json.dumps(meta, sort_keys=True) + "\n")
    return net


def spibb_policy(s: Settings, lay: Layout, baseline: str, n: int, n_wedge: float, seed: int) -> Policy:
    net = ensure_spibb_net(s, lay, baseline, n, n_wedge, seed)
    name = f"spibb-{baseline}"
    if s.greedy_exec:
        return SpibbGreedy(net, name=name)
    data = training_data(s, lay, baseline, n, seed)
    index = build_index(data, s.spibb_config(n_wedge))
    return SpibbProjected(net, index, baseline_policy(s, lay, baseline, seed), name=name)


def reference_policy(s: Settings, lay: Layout, name: str, seed: int) -> Policy:
    if name == "random":
        return RandomPolicy()
    if name == "rb":
        return RuleBased(s.rule)
    if name == "dqn":
        return DqnEpsGreedy(ensure_dqn_baseline(s, lay, seed), DQN_EPSILON)
    if name == "optimal":
        return OptimalSearch()
    raise UsageError(f"unknown policy {name!r}")


def write_run(path: Path, run: RunResult) -> None:
    rows = [(t, fmt_float(a), fmt_float(m)) for t, (a, m) in enumerate(zip(run.avg_per_step, run.min_per_step))]
    write_csv(path, ("t", "avg_network_reward", "min_cell_reward"), rows)


def _evaluate_into(s: Settings, path: Path, policy: Policy, seed: int) -> None:
    if path.exists():
        return
    report = evaluate_policy(policy, s.network, [seed], EpisodeConfig(), s.cvar_level)
    write_run(path, report.runs[0])


def job_reference(s: Settings, root: str, name: str, seed: int) -> str:
    lay = Layout.of(root, s)
    path = lay.ref_run(name, seed)
    if not path.exists():
        _evaluate_into(s, path, reference_policy(s, lay, name, seed), seed)
    return str(path)


def job_spibb(s: Settings, root: str, baseline: str, n: int, n_wedge: float, seed: int) -> str:
    lay = Layout.of(root, s)
    path = lay.spibb_run(baseline, n, n_wedge, seed)
    if not path.exists():
        _evaluate_into(s, path, spibb_policy(s, lay, baseline, n, n_wedge, seed), seed)
    return str(path)


def job_seed_setup(s: Settings, root: str, seed: int) -> str:
    lay = Layout.of(root, s)
    for b in BASELINES:
        ensure_dataset(s, lay, b, s.pool_rows, seed)
    return str(seed)


def _star(args):
    fn, *rest = args
    return fn(*rest)


def run_jobs(jobs: list[tuple], workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_star(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_star, jobs, chunksize=1))


# --- aggregation ----------------------------------------------------------------


@dataclass
class RunRecord:
    policy: str
    baseline: str
    n: int | None
    n_wedge: float | None
    seed: int
    digest: str
    path: Path

    def key(self):
        return (
            POLICY_ORDER.index(self.policy) if self.policy in POLICY_ORDER else len(POLICY_ORDER),
            self.policy,
            self.baseline,
            -1 if self.n is None else self.n,
            -1.0 if self.n_wedge is None else self.n_wedge,
            self.seed,
        )


def scan_runs(root: Path, digests=None) -> list[RunRecord]:
    records = []
    run_dir = root / "runs"
    if not run_dir.is_dir():
        return records
    for path in run_dir.iterdir():
        m = RUN_NAME.match(path.name)
        if not m or (digests is not None and m.group("h") not in digests):
            continue
        if m.group("ref"):
            rec = RunRecord(m.group("ref"), "", None, None, int(m.group("seed")), m.group("h"), path)
        else:
            b = m.group("b")
            rec = RunRecord(f"spibb-{b}", b, int(m.group("n")), float(m.group("nw")), int(m.group("seed")), m.group("h"), path)
        records.append(rec)
    return sorted(records, key=RunRecord.key)


def load_curves(rec: RunRecord) -> tuple[np.ndarray, np.ndarray]:
    rows = read_csv(rec.path)
    avg = np.array([float(r["avg_network_reward"]) for r in rows])
    mn = np.array([float(r["min_cell_reward"]) for r in rows])
    return avg, mn


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return fmt_wedge(x)
    return str(x)


def _std(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def write_tables(root: Path, digests=None, cvar_level: float = 0.05) -> tuple[Path, Path]:
    """Rebuild results.csv and summary.csv from the per-run files."""
    records = scan_runs(root, digests)
    results = []
    groups: dict[tuple, list] = {}
    for rec in records:
        avg, mn = load_curves(rec)
        a, m = float(avg.mean()), float(mn.mean())
        results.append((rec.policy, rec.baseline, _cell(rec.n), _cell(rec.n_wedge), rec.seed, rec.digest, fmt_float(a), fmt_float(m)))
        # records arrive sorted, so groups keep that order
        groups.setdefault((rec.policy, rec.baseline, rec.n, rec.n_wedge, rec.digest), []).append((a, m))
    res_path = root / "results.csv"
    write_csv(res_path, RESULT_FIELDS, results)
    summary = []
    for (policy, baseline, n, wedge, _h), vals in groups.items():
        a = [v[0] for v in vals]
        m = [v[1] for v in vals]
        summary.append((
            policy, baseline, _cell(n), _cell(wedge), len(vals),
            fmt_float(np.mean(a)), fmt_float(_std(a)), fmt_float(cvar(a, cvar_level)),
            fmt_float(np.mean(m)), fmt_float(_std(m)),
        ))
    sum_path = root / "summary.csv"
    write_csv(sum_path, SUMMARY_FIELDS, summary)
    return res_path, sum_path


METRICS = ("avg", "cvar", "min")


def _stats(samples: list[float], cvar_level: float) -> tuple[str, str, str]:
    return fmt_float(np.mean(samples)), fmt_float(_std(samples)), fmt_float(cvar(samples, cvar_level))


def write_panels(
    root: Path,
    digests=None,
    cvar_level: float = 0.05,
    t_point=T_PANEL_POINT,
    n_panel_wedge: float = N_PANEL_WEDGE,
    wedge_panel_n: int = WEDGE_PANEL_N,
    svg: bool = False,
) -> list[Path]:
    """Nine panel CSVs: {avg, cvar, min} x {t, N, N_wedge}.

    Each panel has one row per x value and ``{policy}_mean``, ``_std`` and
    ``_cvar`` columns per policy.  The avg and cvar panels aggregate the
    average network reward; the min panels aggregate the minimum cell reward.
    Reference policies do not depend on N or N_wedge and repeat on every row.
    """
    records = scan_runs(root, digests)
    if not records:
        raise UsageError(f"no run files under {root / 'runs'}")
    curves = {id(r): load_curves(r) for r in records}
    refs = [r for r in records if r.n is None]
    spibb = [r for r in records if r.n is not None]
    policies = [p for p in POLICY_ORDER if any(r.policy == p for r in records)]

    def series(recs, which):
        return [curves[id(r)][which] for r in recs]

    def select(policy, n=None, n_wedge=None):
        if not policy.startswith("spibb"):
            return [r for r in refs if r.policy == policy]
        return [r for r in spibb if r.policy == policy and (n is None or r.n == n) and (n_wedge is None or r.n_wedge == n_wedge)]

    out_dir = root / "panels"
    written = []
    n_values = sorted({r.n for r in spibb if r.n_wedge == float(n_panel_wedge)})
    w_values = sorted({r.n_wedge for r in spibb if r.n == wedge_panel_n})
    for metric in METRICS:
        which = 1 if metric == "min" else 0
        header = ["x"] + [f"{p}_{col}" for p in policies for col in ("mean", "std", "cvar")]
        # vs t
        per_policy = {p: series(select(p, *t_point), which) for p in policies}
        t_len = max((len(c[0]) for c in per_policy.values() if c), default=0)
        rows = []
        for t in range(t_len):
            row = [t]
            for p in policies:
                samples = [c[t] for c in per_policy[p]]
                row += list(_stats(samples, cvar_level)) if samples else ["", "", ""]
            rows.append(row)
        written.append(_panel(out_dir, metric, "t", header, rows))
        # vs N and vs N_wedge use per-run time averages
        for axis, xs, pick in (
            ("n", n_values, lambda p, x: select(p, x, float(n_panel_wedge))),
            ("n_wedge", w_values, lambda p, x: select(p, wedge_panel_n, x)),
        ):
            rows = []
            for x in xs:
                row = [fmt_wedge(x) if axis == "n_wedge" else x]
                for p in policies:
                    samples = [float(c.mean()) for c in series(pick(p, x), which)]
                    row += list(_stats(samples, cvar_level)) if samples else ["", "", ""]
                rows.append(row)
            written.append(_panel(out_dir, metric, axis, header, rows))
    if svg:
        written += _plot_panels(written)
    return written


def _panel(out_dir: Path, metric: str, axis: str, header, rows) -> Path:
    path = out_dir / f"{metric}_vs_{axis}.csv"
    write_csv(path, header, rows)
    return path


def _plot_panels(paths: list[Path]) -> list[Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping SVG output")
        return []
    out = []
    for path in paths:
        rows = read_csv(path)
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        metric = "cvar" if path.stem.startswith("cvar_") else "mean"
        cols = [c for c in rows[0] if c.endswith(f"_{metric}")]
        x = [float(r["x"]) for r in rows]
        for col in cols:
            y = [float(r[col]) if r[col] else np.nan for r in rows]
            ax.plot(x, y, label=col.rsplit("_", 1)[0])
        ax.set_xlabel(path.stem.split("_vs_")[1])
        ax.set_ylabel(path.stem.split("_vs_")[0])
        ax.legend(fontsize=7)
        fig.tight_layout()
        svg_path = path.with_suffix(".svg")
        tmp = svg_path.with_name(svg_path.name + ".tmp")
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        plt.close(fig)
        tmp.replace(svg_path)
        out.append(svg_path)
    return out


# --- commands -------------------------------------------------------------------


def _common(args) -> tuple[Settings, Layout]:
    s = load_settings(args.config, args.mode, args.greedy_exec)
    return s, Layout.of(args.out, s)


def cmd_collect(args) -> int:
    s, lay = _common(args)
    for seed in parse_seeds(args.seeds):
        data = ensure_dataset(s, lay, args.baseline, args.n, seed)
        print(f"{lay.dataset(args.baseline, args.n, seed)}\t{len(data)} rows")
    return 0


def cmd_train_dqn_baseline(args) -> int:
    s, lay = _common(args)
    if args.steps is not None:
        s = dataclasses.replace(s, dqn_steps=args.steps)
        lay = Layout.of(lay.root, s)
    for seed in parse_seeds(args.seeds):
        ensure_dqn_baseline(s, lay, seed)
        print(lay.dqn_net(seed))
    return 0


def cmd_train_spibb(args) -> int:
    s, lay = _common(args)
    for seed in parse_seeds(args.seeds):
        ensure_spibb_net(s, lay, args.baseline, args.n, args.n_wedge, seed)
        print(lay.spibb_net(args.baseline, args.n, args.n_wedge, seed))
    return 0


def cmd_evaluate(args) -> int:
    s, lay = _common(args)
    root = str(lay.root)
    jobs = []
    for seed in parse_seeds(args.seeds):
        if args.policy == "spibb":
            jobs.append((job_spibb, s, root, args.baseline, args.n, args.n_wedge, seed))
        else:
            jobs.append((job_reference, s, root, args.policy, seed))
    for path in run_jobs(jobs, worker_count(args.workers)):
        print(path)
    _, summary = write_tables(lay.root, lay.digests, s.cvar_level)
    print(summary)
    return 0


def sweep_jobs(s: Settings, root: str, baselines, n_grid, wedge_grid, seeds) -> tuple[list, list]:
    setup = [(job_seed_setup, s, root, seed) for seed in seeds]
    runs = [(job_reference, s, root, name, seed) for name in REFERENCE_POLICIES for seed in seeds]
    runs += [
        (job_spibb, s, root, b, n, float(w), seed)
        for b in baselines
        for n in n_grid
        for w in wedge_grid
        for seed in seeds
    ]
    return setup, runs


def cmd_sweep(args) -> int:
    s, lay = _common(args)
    seeds = parse_seeds(args.seeds)
    n_grid = parse_grid(args.n_grid, N_GRID)
    wedge_grid = parse_grid(args.n_wedge_grid, N_WEDGE_GRID, float)
    baselines = [args.baseline] if args.baseline else list(BASELINES)
    workers = worker_count(args.workers)
    setup, runs = sweep_jobs(s, str(lay.root), baselines, n_grid, wedge_grid, seeds)
    run_jobs(setup, workers)
    todo = [j for j in runs if not _job_done(lay, j)]
    log.info("sweep: %d of %d runs to compute", len(todo), len(runs))
    run_jobs(todo, workers)
    _, summary = write_tables(lay.root, lay.digests, s.cvar_level)
    print(summary)
    return 0


def _job_done(lay: Layout, job) -> bool:
    fn = job[0]
    if fn is job_reference:
        return lay.ref_run(job[3], job[4]).exists()
    return lay.spibb_run(*job[3:]).exists()


def cmd_report(args) -> int:
    s, lay = _common(args)
    if not scan_runs(lay.root, lay.digests):
        raise UsageError(f"no runs for these settings under {lay.root / 'runs'}")
    write_tables(lay.root, lay.digests, s.cvar_level)
    for path in write_panels(lay.root, lay.digests, s.cvar_level, svg=args.svg):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safe-ret", description="Offline safe tilt optimisation pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds_default="1"):
        sp.add_argument("--config", help="TOML file with [network] and [rule] tables")
        sp.add_argument("--out", default="out", help="artifact directory")
        sp.add_argument("--seeds", "--seed", default=seeds_default, help='e.g. "1,2" or "1-20"')
        sp.add_argument("--mode", choices=[m.value for m in CountMode], default="kernel")
        sp.add_argument("--greedy-exec", type=parse_bool, default=True, metavar="{true,false}")
        sp.add_argument("--workers", type=int, help="worker processes (default $SAFE_RET_WORKERS or 1)")

    sp = sub.add_parser("collect", help="roll out a baseline and store its transitions")
    common(sp)
    sp.add_argument("--baseline", choices=BASELINES, required=True)
    sp.add_argument("--n", type=int, default=POOL_ROWS)
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("train-dqn-baseline", help="online DQN baseline")
    common(sp)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_train_dqn_baseline)

    sp = sub.add_parser("train-spibb", help="offline SPIBB-DQN on an N-row dataset")
    common(sp)
    sp.add_argument("--baseline", choices=BASELINES, default="rb")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--n-wedge", type=float, default=100.0)
    sp.set_defaults(func=cmd_train_spibb)

    sp = sub.add_parser("evaluate", help="evaluate a policy per seed and refresh the summary")
    common(sp)
    sp.add_argument("--policy", choices=("spibb",) + REFERENCE_POLICIES, default="spibb")
    sp.add_argument("--baseline", choices=BASELINES, default="rb")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--n-wedge", type=float, default=100.0)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="baselines x N x N_wedge x seeds, resumable")
    common(sp, seeds_default="1-20")
    sp.add_argument("--baseline", choices=BASELINES, help="restrict to one baseline")
    sp.add_argument("--n-grid", help="comma list, default " + ",".join(map(str, N_GRID)))
    sp.add_argument("--n-wedge-grid", help="comma list, default " + ",".join(map(str, N_WEDGE_GRID)))
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="aggregate runs into summary and panel CSVs")
    common(sp)
    sp.add_argument("--svg", action="store_true", help="also draw SVG line charts (needs matplotlib)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
