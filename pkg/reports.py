"""Output files: run manifests, atomic writes and plot-ready evaluation tables."""

import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import pandas as pd

from evaluation import EvaluationReport, results_frame
from version import __version__

logger = logging.getLogger(__name__)

PLOT_COLUMNS = ['row_type', 'policy', 'param', 'repeat', 'perf_ratio', 'time_ratio', 'perf_ci', 'time_ci']


@dataclass(frozen=True)
class RunManifest:
    """What produced an output file: command, resolved parameters, inputs and seed."""

    command: str
    parameters: Mapping[str, object]
    input_digests: Mapping[str, str]
    seed: int
    version: str = __version__

    def to_dict(self) -> Dict:
        return {
            'command': self.command,
            'parameters': dict(sorted(self.parameters.items())),
            'input_digests': dict(sorted(self.input_digests.items())),
            'seed': self.seed,
            'version': self.version,
        }


def file_digest(path: Union[str, Path]) -> str:
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def input_digests(paths: Iterable[Union[str, Path]]) -> Dict[str, str]:
    return {Path(path).name: file_digest(path) for path in paths}


def atomic_write_text(path: Union[str, Path], text: str):
    """Write through a temporary file in the target directory, then rename over the target."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path('.')
    fd, temp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise
    logger.info(f"Wrote {path}")


def _strict_json(value):
    """Non-finite floats (missing means of flagged repeats) become null."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Mapping):
        return {key: _strict_json(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_strict_json(item) for item in value]
    return value


def json_text(data: Mapping) -> str:
    return json.dumps(_strict_json(data), indent=2, allow_nan=False) + '\n'


def write_csv(path: Union[str, Path], frame: pd.DataFrame, manifest: RunManifest):
    """CSV file plus <file>.manifest.json next to it."""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator='\n')
    atomic_write_text(path, buffer.getvalue())
    atomic_write_text(f"{path}.manifest.json", json_text(manifest.to_dict()))


def plot_frame(reports: Sequence[EvaluationReport]) -> pd.DataFrame:
    """One detail row per (policy, param, repeat) and one aggregate row per (policy, param)."""
    rows = []
    for report in reports:
        for result in report.repeats:
            rows.append(('repeat', report.policy, report.param, result.repeat,
                         result.perf_ratio, result.time_ratio, None, None))
    for report in reports:
        rows.append(('aggregate', report.policy, report.param, None,
                     report.perf_mean, report.time_mean, report.perf_ci, report.time_ci))
    frame = pd.DataFrame(rows, columns=PLOT_COLUMNS)
    frame['repeat'] = frame['repeat'].astype('Int64')
    return frame


def emit_plot_data(reports: Sequence[EvaluationReport], path: Union[str, Path], manifest: RunManifest):
    write_csv(path, plot_frame(reports), manifest)


def read_plot_data(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, dtype={'policy': str, 'param': str}, keep_default_na=True,
                       float_precision='round_trip')


def plot_aggregates(frame: pd.DataFrame) -> Dict[Tuple[str, str], Tuple[float, float, float, float]]:
    """(policy, param) -> (perf mean, perf ci, time mean, time ci) from a plot table."""
    aggregates = frame[frame['row_type'] == 'aggregate']
    return {
        (row.policy, row.param): (row.perf_ratio, row.perf_ci, row.time_ratio, row.time_ci)
        for row in aggregates.itertuples(index=False)
    }


def write_evaluation(reports: Sequence[EvaluationReport], out: Union[str, Path], manifest: RunManifest) -> List[Path]:
    """Report JSON at out, plus <stem>_plot.csv and <stem>_results.csv next to it."""
    out = Path(out)
    plot_path = out.with_name(f"{out.stem}_plot.csv")
    results_path = out.with_name(f"{out.stem}_results.csv")

    data = {
        'reports': [report.to_dict() for report in reports],
        'manifest': manifest.to_dict(),
    }
    atomic_write_text(out, json_text(data))
    emit_plot_data(reports, plot_path, manifest)
    write_csv(results_path, results_frame(reports), manifest)
    return [out, plot_path, results_path]
