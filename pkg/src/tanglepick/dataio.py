"""Pick dataset CSV ingestion, per-config summaries and the run store.

A run lives in its own directory:

    config.txt    the full configuration plus run_id / provenance / created_at
    dataset.csv   the pick records
    checksum.txt  sha256 of config.txt and of dataset.csv
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum

import numpy as np

from .config import Config, dump_config, parse_config
from .pick import DATASET_HEADER, PickDataset, PickRecord, Protocol, write_dataset


class SchemaError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ProvenanceError(RuntimeError):
    """Only simulated runs can be re-executed."""


class ChecksumError(ValueError):
    """Stored files do not match their recorded checksums."""


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _row_record(row: list[str], line: int) -> PickRecord:
    def num(i, kind):
        try:
            v = kind(row[i])
        except ValueError:
            raise SchemaError(f"{DATASET_HEADER[i]}: cannot read {row[i]!r}", line) from None
        if kind is float and not math.isfinite(v):
            raise ValueError(f"line {line}: {DATASET_HEADER[i]} is not finite")
        return v

    try:
        protocol = Protocol(row[0])
    except ValueError:
        raise SchemaError(f"protocol: unknown {row[0]!r}", line) from None
    grain_count, tau, lam, spikes, it, seed = (num(1, int), num(2, float), num(3, float), num(4, int), num(5, int),
                                               num(6, int))
    mass, unit_mass, units = num(7, float), num(8, float), num(9, int)
    checks = [(mass < 0, "picked_mass_g is negative"), (not unit_mass > 0, "unit_mass_g must be > 0"),
              (not tau > 0, "tau_mm must be > 0"), (lam < 0, "lambda_mm is negative"),
              (grain_count < 0, "grain_count is negative"), (spikes < 0, "spikes is negative"),
              (units < 0, "picked_units is negative"), (it < 0, "iteration is negative")]
    for bad, msg in checks:
        if bad:
            raise ValueError(f"line {line}: {msg}")
    return PickRecord(protocol, grain_count, tau, lam, spikes, it, seed, mass, unit_mass, units)


def read_dataset(fh) -> PickDataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty file, header missing", 1) from None
    if tuple(header) != DATASET_HEADER:
        raise SchemaError(f"header must be {','.join(DATASET_HEADER)}", 1)
    ds = PickDataset()
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(DATASET_HEADER):
            raise SchemaError(f"expected {len(DATASET_HEADER)} columns, found {len(row)}", line)
        ds.records.append(_row_record(row, line))
    if ds.records:
        ds.unit_mass = ds.records[0].unit_mass_g
        its = {}
        for r in ds.records:
            its[(r.config, r.seed)] = its.get((r.config, r.seed), 0) + 1
        ds.iterations = max(its.values())
    return ds


def ingest_csv(path) -> PickDataset:
    """Validated records from a dataset CSV; errors cite the file line."""
    with open(path, newline="") as fh:
        return read_dataset(fh)


def emit(ds: PickDataset, path=None) -> str:
    """Dataset as CSV text; also written to ``path`` when given."""
    buf = io.StringIO()
    write_dataset(ds, buf)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def loads_dataset(text: str) -> PickDataset:
    return read_dataset(io.StringIO(text))


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

SUMMARY_HEADER = ("protocol", "grain_count", "tau_mm", "lambda_mm", "spikes", "n", "mean_units", "std_units",
                  "mean_mass_g", "std_mass_g", "single")


@dataclass(frozen=True)
class GroupSummary:
    n: int
    mean: float  # picked units
    std: float  # sample std, 0 when n == 1
    mean_mass: float
    std_mass: float

    @property
    def single(self) -> bool:
        return self.n == 1


def summarize(ds) -> dict[tuple, GroupSummary]:
    """Per (protocol, grain_count, tau, lambda, spikes): mean and sample std of the picks."""
    groups: dict[tuple, list[PickRecord]] = {}
    for r in (ds.records if hasattr(ds, "records") else ds):
        groups.setdefault(r.config, []).append(r)
    out = {}
    for key in sorted(groups):
        u = np.sort([r.picked_units for r in groups[key]]).astype(float)
        m = np.sort([r.picked_mass_g for r in groups[key]])
        n = len(u)
        out[key] = GroupSummary(n, float(u.mean()), float(u.std(ddof=1)) if n > 1 else 0.0, float(m.mean()),
                                float(m.std(ddof=1)) if n > 1 else 0.0)
    return out


def summary_csv(summary: dict[tuple, GroupSummary]) -> str:
    lines = [",".join(SUMMARY_HEADER)]
    for key, g in summary.items():
        lines.append(",".join([str(key[0]), str(key[1]), f"{key[2]:.9g}", f"{key[3]:.9g}", str(key[4]), str(g.n),
                               f"{g.mean:.9g}", f"{g.std:.9g}", f"{g.mean_mass:.9g}", f"{g.std_mass:.9g}",
                               str(int(g.single))]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# run store
# ---------------------------------------------------------------------------


class Provenance(str, Enum):
    SIMULATED = "Simulated"
    EXTERNAL = "External"


META_KEYS = ("run_id", "provenance", "created_at")


@dataclass
class ExperimentRun:
    run_id: str
    config: Config
    dataset: PickDataset
    provenance: Provenance = Provenance.SIMULATED
    created_at: str = ""

    def config_text(self) -> str:
        meta = f"run_id = {self.run_id}\nprovenance = {Provenance(self.provenance).value}\n" \
               f"created_at = {self.created_at}\n"
        return meta + dump_config(self.config)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def now_utc() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def save_run(run: ExperimentRun, root) -> str:
    """Write the run directory ``root/run_id`` and return its path."""
    return write_run_dir(run, os.path.join(root, run.run_id))


def write_run_dir(run: ExperimentRun, path) -> str:
    os.makedirs(path, exist_ok=True)
    cfg_text = run.config_text()
    data_text = emit(run.dataset)
    with open(os.path.join(path, "config.txt"), "w") as fh:
        fh.write(cfg_text)
    with open(os.path.join(path, "dataset.csv"), "w", newline="") as fh:
        fh.write(data_text)
    with open(os.path.join(path, "checksum.txt"), "w") as fh:
        fh.write(f"config.txt = {_sha(cfg_text)}\ndataset.csv = {_sha(data_text)}\n")
    return path


def _split_meta(text: str) -> tuple[dict, str]:
    meta, rest = {}, []
    for line in text.splitlines(keepends=True):
        key = line.split("=", 1)[0].strip()
        if key in META_KEYS:
            meta[key] = line.split("=", 1)[1].strip()
            rest.append("\n")  # keep line numbers for config errors
        else:
            rest.append(line)
    return meta, "".join(rest)


def _read(path) -> str:
    with open(path, newline="") as fh:
        return fh.read()


def verify_run(path) -> tuple[str, str]:
    """Config and dataset text after checking both against checksum.txt."""
    cfg_text = _read(os.path.join(path, "config.txt"))
    data_text = _read(os.path.join(path, "dataset.csv"))
    sums = {}
    for line in _read(os.path.join(path, "checksum.txt")).splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            sums[k] = v
    if sums.get("config.txt") != _sha(cfg_text):
        raise ChecksumError(f"{path}: config.txt does not match its checksum")
    if sums.get("dataset.csv") != _sha(data_text):
        raise ChecksumError(f"{path}: dataset.csv does not match its checksum")
    return cfg_text, data_text


def load_run(path) -> ExperimentRun:
    cfg_text, data_text = verify_run(path)
    meta, body = _split_meta(cfg_text)
    return ExperimentRun(meta.get("run_id", os.path.basename(os.path.normpath(path))), parse_config(body),
                         loads_dataset(data_text), Provenance(meta.get("provenance", "Simulated")),
                         meta.get("created_at", ""))


def external_run(csv_path, run_id: str, config: Config | None = None) -> ExperimentRun:
    """Wrap a measured dataset so it can live in the run store (it cannot be replayed)."""
    return ExperimentRun(run_id, config or Config(), ingest_csv(csv_path), Provenance.EXTERNAL, now_utc())


def replay(run) -> PickDataset:
    """Re-execute a stored simulated run and check the result is byte-identical.

    ``run`` is a run directory or an ExperimentRun. Checksums are validated
    before anything runs.
    """
    from .study import run_study

    if isinstance(run, (str, os.PathLike)):
        _, stored_text = verify_run(run)
        run = load_run(run)
    else:
        stored_text = emit(run.dataset)
    if Provenance(run.provenance) is not Provenance.SIMULATED:
        raise ProvenanceError(f"run {run.run_id} is {Provenance(run.provenance).value}, not simulated")
    ds = run_study(run.config)
    if emit(ds) != stored_text:
        raise ChecksumError(f"run {run.run_id}: replayed dataset differs from the stored one")
    return ds
