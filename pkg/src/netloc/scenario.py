"""Synthetic localization scenarios and noisy pairwise range measurements.

A scenario is N nodes dropped uniformly in a rectangle; the first
n_anchors of them are anchors with known positions, the rest are agents.
Measured distances carry zero-mean Gaussian noise on every link plus a
positive uniform bias on links hit by NLOS propagation (Bernoulli draw).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError

FILE_MAGIC = "NETLOC v1"


@dataclass(frozen=True)
class Scenario:
    positions: np.ndarray  # N x 2, meters
    n_anchors: int
    area: tuple  # (width, height), meters
    seed: int

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ConfigError(f"positions must be Nx2, got {p.shape}")
        object.__setattr__(self, "positions", p)
        n = p.shape[0]
        if not 1 <= self.n_anchors < n:
            raise ConfigError(
                f"need 1 <= n_anchors < n, got n_anchors={self.n_anchors}, n={n}"
            )
        w, h = self.area
        if not (w > 0 and h > 0):
            raise ConfigError(f"area dims must be positive, got {self.area}")
        if p.size and (p.min() < 0 or p[:, 0].max() > w or p[:, 1].max() > h):
            raise ConfigError("positions fall outside the deployment area")
        self.positions.setflags(write=False)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def n_agents(self):
        return self.n - self.n_anchors

    def anchor_positions(self):
        return self.positions[: self.n_anchors]

    def agent_positions(self):
        return self.positions[self.n_anchors:]

    def true_distances(self):
        d = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((d * d).sum(axis=2))


@dataclass(frozen=True)
class NoiseConfig:
    sigma2: float = 0.1  # LOS Gaussian variance, m^2
    p_nlos: float = 0.1  # NLOS occurrence probability
    nlos_low: float = 0.0  # uniform NLOS bias bounds, m
    nlos_high: float = 10.0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")
        if not 0.0 <= self.p_nlos <= 1.0:
            raise ConfigError(f"p_nlos must be in [0,1], got {self.p_nlos}")
        if not 0.0 <= self.nlos_low <= self.nlos_high:
            raise ConfigError(
                f"need 0 <= nlos_low <= nlos_high, got "
                f"[{self.nlos_low}, {self.nlos_high}]"
            )


@dataclass(frozen=True)
class MeasurementMatrix:
    x: np.ndarray  # N x N measured distances, meters
    nlos_mask: np.ndarray  # N x N bool, True where the NLOS bias fired

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        m = np.asarray(self.nlos_mask, dtype=bool)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ConfigError(f"measurement matrix must be square, got {x.shape}")
        if m.shape != x.shape:
            raise ConfigError("nlos_mask shape must match measurements")
        if not np.array_equal(x, x.T):
            raise ConfigError("measurement matrix must be exactly symmetric")
        if np.any(np.diag(x) != 0.0):
            raise ConfigError("measurement matrix must have a zero diagonal")
        if not np.array_equal(m, m.T) or np.any(np.diag(m)):
            raise ConfigError("nlos_mask must be symmetric with a zero diagonal")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "nlos_mask", m)
        self.x.setflags(write=False)
        self.nlos_mask.setflags(write=False)

    @property
    def n(self):
        return self.x.shape[0]

    def max_range(self):
        return float(self.x.max())


def generate_scenario(n, n_anchors, area, seed):
    """Drop n nodes i.i.d. uniform over the area. Deterministic in seed."""
    if n < 2:
        raise ConfigError(f"need at least 2 nodes, got {n}")
    if not 1 <= n_anchors < n:
        raise ConfigError(f"need 1 <= n_anchors < n, got {n_anchors} of {n}")
    w, h = float(area[0]), float(area[1])
    if w <= 0 or h <= 0:
        raise ConfigError(f"area dims must be positive, got {area}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pos = rng.random((n, 2)) * np.array([w, h])
    return Scenario(positions=pos, n_anchors=int(n_anchors), area=(w, h), seed=int(seed))


def measure_distances(scenario, noise, seed):
    """Noisy symmetric range measurements.

    One seed drives three independent sub-streams (Gaussian, Bernoulli,
    uniform), so e.g. changing p_nlos never perturbs the Gaussian draw.
    Negative measurements are clamped to zero (ranges are nonnegative).
    """
    n = scenario.n
    truth = scenario.true_distances()
    ss_gauss, ss_bern, ss_uni = np.random.SeedSequence(seed).spawn(3)
    iu, ju = np.triu_indices(n, k=1)
    m = iu.size
    gauss = np.random.default_rng(ss_gauss).normal(0.0, np.sqrt(noise.sigma2), m)
    fired = np.random.default_rng(ss_bern).random(m) < noise.p_nlos
    bias = np.random.default_rng(ss_uni).uniform(noise.nlos_low, noise.nlos_high, m)
    vals = np.maximum(truth[iu, ju] + gauss + fired * bias, 0.0)
    x = np.zeros((n, n))
    x[iu, ju] = vals
    x[ju, iu] = vals
    mask = np.zeros((n, n), dtype=bool)
    mask[iu, ju] = fired
    mask[ju, iu] = fired
    return MeasurementMatrix(x=x, nlos_mask=mask)


# ---------------------------------------------------------------------------
# serialization


def _fmt(v):
    return format(float(v), ".17g")


def save_scenario(path, scenario, measurements):
    n = scenario.n
    if measurements.n != n:
        raise ConfigError("measurement size does not match scenario")
    w, h = scenario.area
    lines = [FILE_MAGIC, f"{n} {scenario.n_anchors} {_fmt(w)} {_fmt(h)} {scenario.seed}"]
    for i in range(n):
        lines.append(f"{_fmt(scenario.positions[i, 0])} {_fmt(scenario.positions[i, 1])}")
    for i in range(n):
        lines.append(" ".join(_fmt(v) for v in measurements.x[i]))
    for i in range(n):
        lines.append(" ".join("1" if v else "0" for v in measurements.nlos_mask[i]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class _LineReader:
    """Line iterator that tracks byte offsets for parse errors."""

    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.offset = 0
        self.line_no = 0

    def next_line(self, what):
        if self.offset >= len(self.blob):
            raise DataFormatError(
                f"file truncated while reading {what}",
                path=self.path, byte_offset=self.offset, line=self.line_no + 1,
            )
        end = self.blob.find(b"\n", self.offset)
        if end == -1:
            end = len(self.blob)
        raw = self.blob[self.offset:end]
        self.line_start = self.offset
        self.offset = end + 1
        self.line_no += 1
        return raw.decode("ascii", errors="replace").strip()

    def fail(self, msg):
        raise DataFormatError(
            msg, path=self.path, byte_offset=self.line_start, line=self.line_no
        )


def _parse_row(reader, n, what, conv=float):
    line = reader.next_line(what)
    parts = line.split()
    if len(parts) != n:
        reader.fail(f"{what}: expected {n} values, found {len(parts)}")
    try:
        return [conv(p) for p in parts]
    except ValueError:
        reader.fail(f"{what}: unparseable number")


def load_scenario(path):
    """Parse a scenario file; returns (Scenario, MeasurementMatrix)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _LineReader(blob, path)
    if r.next_line("header") != FILE_MAGIC:
        r.fail(f"bad magic, expected {FILE_MAGIC!r}")
    head = r.next_line("size line").split()
    if len(head) != 5:
        r.fail("size line must hold: n n_anchors width height seed")
    try:
        n, n_anchors = int(head[0]), int(head[1])
        w, h = float(head[2]), float(head[3])
        seed = int(head[4])
    except ValueError:
        r.fail("unparseable size line")
    if n < 2 or not 1 <= n_anchors < n:
        r.fail(f"invalid counts n={n}, n_anchors={n_anchors}")
    pos = np.empty((n, 2))
    for i in range(n):
        row = _parse_row(r, 2, f"position row {i}")
        pos[i] = row
    x = np.empty((n, n))
    for i in range(n):
        x[i] = _parse_row(r, n, f"distance row {i}")
    mask = np.empty((n, n), dtype=bool)
    for i in range(n):
        row = _parse_row(r, n, f"mask row {i}", conv=int)
        if any(v not in (0, 1) for v in row):
            r.fail(f"mask row {i}: flags must be 0 or 1")
        mask[i] = row
    bad = np.argwhere(x != x.T)
    if bad.size:
        i, j = bad[0]
        raise DataFormatError(
            f"distance matrix not symmetric at row {i}, column {j}", path=path
        )
    bad = np.argwhere(mask != mask.T)
    if bad.size:
        i, j = bad[0]
        raise DataFormatError(
            f"nlos mask not symmetric at row {i}, column {j}", path=path
        )
    try:
        scen = Scenario(positions=pos, n_anchors=n_anchors, area=(w, h), seed=seed)
        meas = MeasurementMatrix(x=x, nlos_mask=mask)
    except ConfigError as exc:
        raise DataFormatError(str(exc), path=path)
    return scen, meas


def export_positions_csv(path, scenario):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["id", "x", "y", "is_anchor"])
        for i in range(scenario.n):
            out.writerow([
                i,
                _fmt(scenario.positions[i, 0]),
                _fmt(scenario.positions[i, 1]),
                int(i < scenario.n_anchors),
            ])
