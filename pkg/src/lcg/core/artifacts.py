"""On-disk formats: datasets, checkpoints, latent files, reports and the run manifest.

Floats are written with Python's shortest round-trip repr, so every file
reloads to bit-identical arrays.
"""

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np

from .classifiers import LatentClassifier
from .diffusion import Denoiser
from .diffusion import NoiseSchedule
from .diffusion import make_schedule
from .evaluation import DisentanglementReport
from .evaluation import EvalReport
from .exceptions import DataError
from .exceptions import LcgError
from .numkernel import Mlp
from .types import Activation
from .types import ClassifierKind
from .types import ManifestEntry
from .world import AttributedDataset
from .world import WorldSpec

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DENOISER_FORMAT = "lcg-denoiser"
CLASSIFIER_FORMAT = "lcg-classifier"
MANIFEST_NAME = "manifest.json"

PathLike = Union[str, Path]


def _open_for_write(path: PathLike) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"Cannot create directory for {target}: {e}") from e
    return target


def _write_text(path: PathLike, text: str) -> Path:
    target = _open_for_write(path)
    try:
        target.write_text(text, encoding="utf-8")
    except OSError as e:
        raise DataError(f"Cannot write {target}: {e}") from e
    logger.debug(f"Wrote {target}")
    return target


def _read_text(path: PathLike, what: str) -> str:
    source = Path(path)
    if not source.exists():
        raise DataError(f"{what} file not found: {source}")
    return source.read_text(encoding="utf-8")


def write_json(path: PathLike, data: Any) -> Path:
    return _write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: PathLike, what: str = "JSON") -> Any:
    try:
        return json.loads(_read_text(path, what))
    except json.JSONDecodeError as e:
        raise DataError(f"Malformed {what} file {path}: {e}") from e


def _write_rows(path: PathLike, rows: Sequence[Sequence[Any]], preamble: Optional[str] = None) -> Path:
    target = _open_for_write(path)
    try:
        with open(target, "w", encoding="utf-8", newline="") as f:
            if preamble is not None:
                f.write(preamble + "\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerows(rows)
    except OSError as e:
        raise DataError(f"Cannot write {target}: {e}") from e
    logger.debug(f"Wrote {len(rows)} rows to {target}")
    return target


def _read_rows(path: PathLike, what: str) -> Tuple[Optional[str], List[List[str]]]:
    lines = _read_text(path, what).splitlines()
    preamble = lines[0] if lines and lines[0].startswith("#") else None
    body = lines[1:] if preamble is not None else lines
    return preamble, [row for row in csv.reader(body) if row]


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Datasets and latent files
# ---------------------------------------------------------------------------


def sidecar_path(path: PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".world.json")


def write_dataset(path: PathLike, data: AttributedDataset) -> Tuple[Path, Path]:
    """Write `# d=.. k=.. attributes=..` then rows z_1..z_d,y_1..y_k, plus the JSON sidecar."""
    names = data.world.attribute_names
    preamble = f"# d={data.dim} k={len(names)} attributes={','.join(names)}"
    rows = [
        [repr(float(v)) for v in z] + [str(int(y)) for y in labels]
        for z, labels in zip(data.latents, data.labels)
    ]
    csv_path = _write_rows(path, rows, preamble)
    side = write_json(sidecar_path(path), {"world": data.world.to_dict(), "seed": data.seed, "n": len(data)})
    logger.info(f"Wrote dataset of {len(data)} points to {csv_path}")
    return csv_path, side


def _parse_preamble(preamble: Optional[str], path: PathLike) -> Dict[str, str]:
    if preamble is None:
        raise DataError(f"Dataset {path} lacks its '# d=.. k=..' header line")
    fields = dict(part.split("=", 1) for part in preamble.lstrip("# ").split() if "=" in part)
    if "d" not in fields or "k" not in fields:
        raise DataError(f"Dataset header of {path} is missing d or k: {preamble}")
    return fields


def read_dataset(path: PathLike) -> AttributedDataset:
    """Load a dataset and its world from the sidecar.

    Raises:
        DataError: Missing file, missing sidecar or inconsistent header
    """
    preamble, rows = _read_rows(path, "Dataset")
    fields = _parse_preamble(preamble, path)
    d, k = int(fields["d"]), int(fields["k"])
    side = read_json(sidecar_path(path), "Dataset sidecar")
    world = WorldSpec.from_dict(side["world"])
    if world.dim != d or len(world.attributes) != k:
        raise DataError(f"Dataset {path} header (d={d}, k={k}) disagrees with its world")
    try:
        table = np.array([[float(v) for v in row] for row in rows], dtype=np.float64).reshape(-1, d + k)
    except ValueError as e:
        raise DataError(f"Malformed dataset row in {path}: {e}") from e
    return AttributedDataset(
        latents=table[:, :d],
        labels=table[:, d:].astype(np.int64),
        world=world,
        seed=side.get("seed"),
    )


def write_latents(path: PathLike, latents: np.ndarray) -> Path:
    """Latent matrix as CSV with a z_1..z_d header row."""
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    header = [f"z_{i + 1}" for i in range(latents.shape[1])]
    return _write_rows(path, [header] + [[repr(float(v)) for v in row] for row in latents])


def read_latents(path: PathLike) -> np.ndarray:
    """Raises DataError for a missing or sample-free file."""
    _, rows = _read_rows(path, "Latent")
    if len(rows) < 2:
        raise DataError(f"No samples in {path}")
    header, body = rows[0], rows[1:]
    try:
        return np.array([[float(v) for v in row] for row in body], dtype=np.float64).reshape(-1, len(header))
    except ValueError as e:
        raise DataError(f"Malformed latent row in {path}: {e}") from e


def write_loss_trace(path: PathLike, losses: np.ndarray, smoothed: np.ndarray) -> Path:
    rows: List[List[str]] = [["step", "loss", "smoothed"]]
    rows.extend(
        [str(i + 1), repr(float(a)), repr(float(b))] for i, (a, b) in enumerate(zip(losses, smoothed))
    )
    return _write_rows(path, rows)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _mlp_to_dict(m: Mlp) -> Dict[str, Any]:
    return {
        "sizes": m.sizes,
        "activation": m.activation.value,
        "params": [float(v) for v in m.flat_params()],
    }


def _mlp_from_dict(data: Mapping[str, Any]) -> Mlp:
    return Mlp.from_flat(data["sizes"], data["params"], Activation(data["activation"]))


def _check_format(data: Mapping[str, Any], expected: str, path: PathLike) -> None:
    if data.get("format") != expected:
        raise DataError(f"{path} is not a {expected} checkpoint (format={data.get('format')!r})")
    if data.get("version") != FORMAT_VERSION:
        raise DataError(f"{path} has unsupported version {data.get('version')}; expected {FORMAT_VERSION}")


def save_denoiser(
    path: PathLike, net: Denoiser, s: NoiseSchedule, metadata: Optional[Mapping[str, Any]] = None
) -> Path:
    return write_json(
        path,
        {
            "format": DENOISER_FORMAT,
            "version": FORMAT_VERSION,
            "schedule": s.to_dict(),
            "latent_dim": net.latent_dim,
            "embedding_dim": net.embedding_dim,
            "mlp": _mlp_to_dict(net.mlp),
            "training": dict(metadata or {}),
        },
    )


def load_denoiser(path: PathLike) -> Tuple[Denoiser, NoiseSchedule, Dict[str, Any]]:
    """Raises DataError for a missing, foreign or malformed checkpoint."""
    data = read_json(path, "Denoiser checkpoint")
    _check_format(data, DENOISER_FORMAT, path)
    try:
        sched = data["schedule"]
        s = make_schedule(int(sched["T"]), float(sched["b_start"]), float(sched["b_end"]))
        net = Denoiser(
            mlp=_mlp_from_dict(data["mlp"]),
            latent_dim=int(data["latent_dim"]),
            embedding_dim=int(data["embedding_dim"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Malformed denoiser checkpoint {path}: {e}") from e
    return net, s, dict(data.get("training", {}))


def save_classifier(path: PathLike, c: LatentClassifier, metadata: Optional[Mapping[str, Any]] = None) -> Path:
    return write_json(
        path,
        {
            "format": CLASSIFIER_FORMAT,
            "version": FORMAT_VERSION,
            "kind": c.kind.value,
            "attribute": c.attribute,
            "mlp": _mlp_to_dict(c.net),
            "training": dict(metadata or {}),
        },
    )


def load_classifier(path: PathLike) -> Tuple[LatentClassifier, Dict[str, Any]]:
    data = read_json(path, "Classifier checkpoint")
    _check_format(data, CLASSIFIER_FORMAT, path)
    try:
        c = LatentClassifier(
            kind=ClassifierKind(data["kind"]),
            attribute=str(data["attribute"]),
            net=_mlp_from_dict(data["mlp"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Malformed classifier checkpoint {path}: {e}") from e
    return c, dict(data.get("training", {}))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def write_report(csv_path: PathLike, report: EvalReport) -> Tuple[Path, Path]:
    """CSV rows (metric, attribute, value) plus a JSON summary beside it."""
    rows: List[List[str]] = [["metric", "attribute", "value"]]
    rows.extend([metric, attr, repr(value)] for metric, attr, value in report.rows())
    target = _write_rows(csv_path, rows)
    summary = write_json(Path(csv_path).with_suffix(".json"), report.to_dict())
    return target, summary


def read_report(csv_path: PathLike) -> List[Tuple[str, str, float]]:
    _, rows = _read_rows(csv_path, "Report")
    return [(m, a, float(v)) for m, a, v in rows[1:]]


def write_matrix(path: PathLike, labels: Sequence[str], matrix: np.ndarray, columns: Optional[Sequence[str]] = None) -> Path:
    """Matrix CSV with a header row and a label column; NaN cells are written empty."""
    columns = list(columns if columns is not None else labels)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (len(labels), len(columns)):
        raise LcgError(f"Matrix shape {matrix.shape} does not match {len(labels)}x{len(columns)} labels")
    rows: List[List[str]] = [[""] + columns]
    for label, values in zip(labels, matrix):
        rows.append([label] + ["" if np.isnan(v) else repr(float(v)) for v in values])
    return _write_rows(path, rows)


def read_matrix(path: PathLike) -> Tuple[List[str], List[str], np.ndarray]:
    """(row labels, column labels, values) with empty cells as NaN."""
    _, rows = _read_rows(path, "Matrix")
    columns = rows[0][1:]
    labels = [row[0] for row in rows[1:]]
    values = np.array([[float(v) if v else np.nan for v in row[1:]] for row in rows[1:]], dtype=np.float64)
    return labels, columns, values.reshape(len(labels), len(columns))


def write_disentanglement(path: PathLike, report: DisentanglementReport) -> Path:
    matrix = np.column_stack([report.deltas, report.targeted_acc, report.targeted_gain])
    return write_matrix(path, report.edits, matrix, report.attributes + ["targeted_acc", "targeted_gain"])


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    """Everything needed to reproduce an output directory."""

    config_hash: str = ""
    artifacts: List[ManifestEntry] = field(default_factory=list)
    versions: Dict[str, str] = field(default_factory=dict)
    wall_clock: Dict[str, float] = field(default_factory=dict)
    stage_seeds: Dict[str, Any] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)

    def record(self, path: PathLike, command: str, root: PathLike) -> None:
        """Add or refresh one artifact entry (paths stored relative to root)."""
        rel = Path(path).resolve().relative_to(Path(root).resolve()).as_posix()
        entry: ManifestEntry = {"path": rel, "command": command, "sha256": sha256_file(path)}
        self.artifacts = [a for a in self.artifacts if a["path"] != rel] + [entry]
        self.artifacts.sort(key=lambda a: a["path"])

    @property
    def paths(self) -> List[str]:
        return [a["path"] for a in self.artifacts]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "artifacts": list(self.artifacts),
            "versions": dict(self.versions),
            "wall_clock": dict(self.wall_clock),
            "stage_seeds": dict(self.stage_seeds),
            "results": dict(self.results),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunManifest":
        return cls(
            config_hash=str(data.get("config_hash", "")),
            artifacts=list(data.get("artifacts", [])),
            versions=dict(data.get("versions", {})),
            wall_clock=dict(data.get("wall_clock", {})),
            stage_seeds=dict(data.get("stage_seeds", {})),
            results=dict(data.get("results", {})),
        )


def load_manifest(out_dir: PathLike) -> RunManifest:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return RunManifest()
    return RunManifest.from_dict(read_json(path, "Manifest"))


def save_manifest(out_dir: PathLike, manifest: RunManifest) -> Path:
    return write_json(Path(out_dir) / MANIFEST_NAME, manifest.to_dict())
