"""Experiment harness: noise-condition table, sweeps, timing, exports.

Every cell of an experiment is an independent, fully seeded job
(scenario seed = measurement seed = training seed = the cell's seed),
so cells can run in any order or in parallel and reproduce bit-exactly.
Cell CSVs hold only deterministic columns; wall-clock timings go to a
sidecar JSON, keeping the CSVs byte-stable across re-runs.
"""

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from . import numcore as nc
from .errors import ConfigError
from .scenario import NoiseConfig, generate_scenario, measure_distances
from .train import TrainConfig, train

# Published reference RMSE (meters) per noise condition, for comparison
# columns: (0.04, 0%), (0.1, 10%), (0.25, 10%), (0.25, 30%), (0.5, 50%)
TABLE_CONDITIONS = ((0.04, 0.0), (0.1, 0.1), (0.25, 0.1), (0.25, 0.3), (0.5, 0.5))
REFERENCE_RMSE = {
    "mlp": (0.1865, 0.1769, 0.2305, 0.2623, 0.3358),
    "gcn": (0.1038, 0.1128, 0.1006, 0.1302, 0.1755),
    "agnn1": (0.0677, 0.0732, 0.0779, 0.0817, 0.1290),
    "agnn2": (0.0486, 0.0551, 0.0638, 0.0812, 0.1015),
}


def rmse_agents(predictions, scenario):
    """Per-node RMSE over agents: ||R_u - Rhat_u||_F / sqrt(N_u)."""
    predictions = np.asarray(predictions)
    diff = predictions[scenario.n_anchors:] - scenario.agent_positions()
    return float(np.linalg.norm(diff) / np.sqrt(scenario.n_agents))


@dataclass
class ExperimentSpec:
    models: tuple = ("mlp", "gcn", "agnn1", "agnn2")
    noise_grid: tuple = TABLE_CONDITIONS
    anchor_grid: tuple = tuple(range(20, 161, 20))
    threshold_grid: tuple = tuple(round(0.2 * k, 1) for k in range(1, 21))
    seeds: tuple = (0, 1, 2, 3, 4)
    n: int = 500
    n_anchors: int = 50
    area: tuple = (5.0, 5.0)
    nlos_low: float = 0.0
    nlos_high: float = 10.0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.models or not self.noise_grid or not self.seeds:
            raise ConfigError("models, noise_grid and seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")


@dataclass
class CellResult:
    rmse: Optional[float]
    seconds: Optional[float]
    error: Optional[str] = None
    anchor_loss: Optional[list] = None
    rmse_history: Optional[list] = None


@dataclass
class ResultTable:
    cells: dict = field(default_factory=dict)  # (model, condition, seed) -> CellResult

    def add(self, key, result):
        self.cells[key] = result

    def aggregate(self):
        """(model, condition) -> (mean_rmse, std_rmse, mean_seconds, n_ok)."""
        groups = {}
        for (model, cond, _seed), cell in self.cells.items():
            if cell.error is None:
                groups.setdefault((model, cond), []).append(cell)
        out = {}
        for key, cells in groups.items():
            rmses = np.array([c.rmse for c in cells])
            secs = np.array([c.seconds for c in cells])
            out[key] = (float(rmses.mean()), float(rmses.std()),
                        float(secs.mean()), len(cells))
        return out

    def mean_rmse(self, model, cond):
        agg = self.aggregate().get((model, cond))
        return None if agg is None else agg[0]


def condition_name(sigma2, p_nlos):
    return f"s{sigma2:g}_p{p_nlos:g}"


@dataclass(frozen=True)
class CellJob:
    model: str
    sigma2: float
    p_nlos: float
    seed: int
    n: int
    n_anchors: int
    area: tuple
    nlos_low: float
    nlos_high: float
    train: TrainConfig

    def run(self):
        scen = generate_scenario(self.n, self.n_anchors, self.area, self.seed)
        noise = NoiseConfig(self.sigma2, self.p_nlos, self.nlos_low, self.nlos_high)
        meas = measure_distances(scen, noise, self.seed)
        cfg = replace(self.train, seed=self.seed)
        trained = train(self.model, scen, meas, cfg)
        return CellResult(
            rmse=trained.final_rmse,
            seconds=trained.metrics.seconds[-1],
            anchor_loss=list(trained.metrics.anchor_loss),
            rmse_history=list(trained.metrics.agent_rmse),
        )

    def key(self):
        return (self.model, condition_name(self.sigma2, self.p_nlos), self.seed)

    def to_metadata(self):
        return {
            "model": self.model, "sigma2": self.sigma2, "p_nlos": self.p_nlos,
            "seed": self.seed, "n": self.n, "n_anchors": self.n_anchors,
            "area": list(self.area), "nlos_low": self.nlos_low,
            "nlos_high": self.nlos_high,
            "train": dict(self.train.__dict__),
        }

    @classmethod
    def from_metadata(cls, meta):
        return cls(
            model=meta["model"], sigma2=meta["sigma2"], p_nlos=meta["p_nlos"],
            seed=meta["seed"], n=meta["n"], n_anchors=meta["n_anchors"],
            area=tuple(meta["area"]), nlos_low=meta["nlos_low"],
            nlos_high=meta["nlos_high"], train=TrainConfig(**meta["train"]),
        )


def _run_job(job):
    try:
        return job.key(), job.run()
    except Exception as exc:  # record, keep the sweep going
        return job.key(), CellResult(rmse=None, seconds=None,
                                     error=f"{type(exc).__name__}: {exc}")


def _execute(jobs, n_workers):
    if n_workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_run_job, jobs))


def cell_csv_bytes(result):
    """Deterministic per-cell CSV: epoch, anchor loss, agent RMSE."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["epoch", "anchor_loss", "agent_rmse"])
    for epoch, (lo, rm) in enumerate(
            zip(result.anchor_loss, result.rmse_history), start=1):
        out.writerow([epoch, repr(lo), repr(rm)])
    return buf.getvalue().encode("ascii")


def config_hash(meta):
    return hashlib.sha256(
        json.dumps(meta, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _write_cell(out_dir, experiment, job, result):
    key_model, key_cond, seed = job.key()
    cell_dir = os.path.join(out_dir, experiment, key_model, key_cond)
    os.makedirs(cell_dir, exist_ok=True)
    meta = job.to_metadata()
    meta["code_version"] = __version__
    meta["config_hash"] = config_hash(job.to_metadata())
    if result.error is None:
        with open(os.path.join(cell_dir, f"seed{seed}.csv"), "wb") as fh:
            fh.write(cell_csv_bytes(result))
        meta["seconds"] = result.seconds
        meta["final_rmse"] = result.rmse
    else:
        meta["error"] = result.error
    with open(os.path.join(cell_dir, f"seed{seed}.meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def rerun_cell_from_metadata(meta_path):
    """Re-run one cell from its sidecar; returns the deterministic CSV bytes."""
    with open(meta_path) as fh:
        meta = json.load(fh)
    job = CellJob.from_metadata(meta)
    result = job.run()
    return cell_csv_bytes(result)


def _noise_jobs(spec, models=None, conditions=None):
    jobs = []
    for model in (models or spec.models):
        for sigma2, p_nlos in (conditions or spec.noise_grid):
            for seed in spec.seeds:
                jobs.append(CellJob(
                    model=model, sigma2=sigma2, p_nlos=p_nlos, seed=seed,
                    n=spec.n, n_anchors=spec.n_anchors, area=spec.area,
                    nlos_low=spec.nlos_low, nlos_high=spec.nlos_high,
                    train=spec.train,
                ))
    return jobs


def run_noise_table(spec, out_dir=None, jobs=1):
    """Train every model under every noise condition; aggregate RMSE."""
    bad = [m for m in spec.models if m not in REFERENCE_RMSE]
    if bad:
        raise ConfigError(f"unknown models {bad}; pick from {sorted(REFERENCE_RMSE)}")
    job_list = _noise_jobs(spec)
    table = ResultTable()
    for (key, result), job in zip(_execute(job_list, jobs), job_list):
        table.add(key, result)
        if out_dir:
            _write_cell(out_dir, "noise_table", job, result)
    if out_dir:
        _write_summary(out_dir, "noise_table", table)
    return table


def _write_summary(out_dir, experiment, table):
    path = os.path.join(out_dir, experiment, "summary.csv")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    agg = table.aggregate()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["model", "condition", "mean_rmse", "std_rmse",
                      "mean_seconds", "n_seeds"])
        for (model, cond), (mean, std, secs, n) in sorted(agg.items()):
            out.writerow([model, cond, repr(mean), repr(std), repr(secs), n])
        for (model, cond, seed), cell in sorted(table.cells.items()):
            if cell.error is not None:
                out.writerow([model, cond, f"FAILED[seed{seed}]", cell.error, "", ""])


def sweep_threshold(spec, out_dir=None, jobs=1):
    """GCN RMSE versus the hard cutoff, one curve per noise condition."""
    job_list = []
    for sigma2, p_nlos in spec.noise_grid:
        for th in spec.threshold_grid:
            for seed in spec.seeds:
                job_list.append(CellJob(
                    model="gcn", sigma2=sigma2, p_nlos=p_nlos, seed=seed,
                    n=spec.n, n_anchors=spec.n_anchors, area=spec.area,
                    nlos_low=spec.nlos_low, nlos_high=spec.nlos_high,
                    train=replace(spec.train, threshold=th),
                ))
    results = _execute(job_list, jobs)
    curves = {}
    for (key, result), job in zip(results, job_list):
        cond = condition_name(job.sigma2, job.p_nlos)
        curves.setdefault(cond, {}).setdefault(job.train.threshold, []).append(result)
        if out_dir:
            _write_cell(out_dir, f"threshold_sweep/th{job.train.threshold:g}",
                        job, result)
    out = {}
    for cond, by_th in curves.items():
        pts = []
        for th in sorted(by_th):
            ok = [c.rmse for c in by_th[th] if c.error is None]
            if ok:
                pts.append((th, float(np.mean(ok)), float(np.std(ok))))
        out[cond] = pts
    if out_dir:
        path = os.path.join(out_dir, "threshold_sweep", "curves.csv")
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["condition", "threshold", "mean_rmse", "std_rmse"])
            for cond, pts in sorted(out.items()):
                for th, m, s in pts:
                    w.writerow([cond, th, repr(m), repr(s)])
    return out


def sweep_anchors(spec, out_dir=None, jobs=1, models=("gcn", "mlp")):
    """RMSE versus anchor count for GCN and MLP per noise condition."""
    job_list = []
    for model in models:
        for sigma2, p_nlos in spec.noise_grid:
            for n_l in spec.anchor_grid:
                for seed in spec.seeds:
                    job_list.append(CellJob(
                        model=model, sigma2=sigma2, p_nlos=p_nlos, seed=seed,
                        n=spec.n, n_anchors=n_l, area=spec.area,
                        nlos_low=spec.nlos_low, nlos_high=spec.nlos_high,
                        train=spec.train,
                    ))
    results = _execute(job_list, jobs)
    curves = {}
    for (key, result), job in zip(results, job_list):
        cond = condition_name(job.sigma2, job.p_nlos)
        curves.setdefault((job.model, cond), {}).setdefault(
            job.n_anchors, []).append(result)
        if out_dir:
            _write_cell(out_dir, f"anchor_sweep/nl{job.n_anchors}", job, result)
    out = {}
    for key, by_nl in curves.items():
        pts = []
        for n_l in sorted(by_nl):
            ok = [c.rmse for c in by_nl[n_l] if c.error is None]
            if ok:
                pts.append((n_l, float(np.mean(ok)), float(np.std(ok))))
        out[key] = pts
    if out_dir:
        path = os.path.join(out_dir, "anchor_sweep", "curves.csv")
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "condition", "n_anchors", "mean_rmse", "std_rmse"])
            for (model, cond), pts in sorted(out.items()):
                for n_l, m, s in pts:
                    w.writerow([model, cond, n_l, repr(m), repr(s)])
    return out


def run_timing(spec, n_grid=(500, 1000), stress_n=None, jobs=1,
               condition=(0.1, 0.3)):
    """Wall-clock of one full training run per model per network size.

    Absolute seconds are hardware-specific; only orderings and ratios
    are meaningful. The optional stress_n run (e.g. 10000) is skipped
    unless requested.
    """
    sizes = list(n_grid) + ([stress_n] if stress_n else [])
    rows = []
    for model in spec.models:
        for n in sizes:
            job = CellJob(
                model=model, sigma2=condition[0], p_nlos=condition[1],
                seed=spec.seeds[0], n=n,
                n_anchors=max(int(round(n * spec.n_anchors / spec.n)), 1),
                area=spec.area, nlos_low=spec.nlos_low, nlos_high=spec.nlos_high,
                train=spec.train,
            )
            _key, result = _run_job(job)
            rows.append({"model": model, "n": n, "seconds": result.seconds,
                         "rmse": result.rmse, "error": result.error})
    return rows


# ---------------------------------------------------------------------------
# model exports


def learned_thresholds(trained):
    """Rescaled per-node cutoffs of a trained per-node-threshold model."""
    if trained.kind != "agnn1":
        raise ConfigError(f"thresholds export needs an agnn1 model, got {trained.kind}")
    raw = trained.params["alm.raw_thresholds"]
    return trained.model.max_range / (1.0 + np.exp(-raw[:, 0]))


def export_threshold_histogram(trained, path=None, bins=30):
    """Histogram of the learned cutoffs over [0, max_range]."""
    values = learned_thresholds(trained)
    counts, edges = np.histogram(values, bins=bins,
                                 range=(0.0, trained.model.max_range))
    if path:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["bin_low", "bin_high", "count"])
            for k in range(bins):
                out.writerow([repr(float(edges[k])), repr(float(edges[k + 1])),
                              int(counts[k])])
    return counts, edges


def export_attention_heatmaps(trained, node_ids, path=None):
    """Fine-membership and learned-cutoff rows for the requested nodes.

    Returns {node: (membership_row, cutoff_row)}: the soft adjacency row
    (zero outside the coarse set) and the per-edge cutoff row.
    """
    if trained.kind != "agnn2":
        raise ConfigError(f"heatmap export needs an agnn2 model, got {trained.kind}")
    n = trained.model.measurements.n
    for node in node_ids:
        if not 0 <= int(node) < n:
            raise ConfigError(f"invalid node id {node} for n={n}")
    graph = nc.DiffGraph()
    out = trained.model.forward(graph, training=False)
    membership = out.soft_graph.adjacency.data
    cutoffs = out.soft_graph.thresholds.data
    rows = {int(i): (membership[int(i)].copy(), cutoffs[int(i)].copy())
            for i in node_ids}
    if path:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "row_kind"] + [f"j{k}" for k in range(n)])
            for i in sorted(rows):
                w.writerow([i, "membership"] + [repr(float(v)) for v in rows[i][0]])
                w.writerow([i, "cutoff"] + [repr(float(v)) for v in rows[i][1]])
    return rows
