import json
import logging
import os
import tempfile
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

# Enough digits to round-trip a double exactly.
FLOAT_FORMAT = '%.17g'


def atomic_write_text(path, text):
    """Write to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        'w', encoding='utf-8', dir=path.parent, prefix=f".{path.name}.", suffix='.tmp', delete=False,
    )
    try:
        with handle:
            handle.write(text)
        os.replace(handle.name, path)
    except BaseException:
        Path(handle.name).unlink(missing_ok=True)
        raise
    return path


def write_json(path, document):
    return atomic_write_text(path, json.dumps(document, sort_keys=True, indent=2) + '\n')


def write_frame(path, frame):
    return atomic_write_text(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n'))


def steps_frame(reports):
    """One row per absorbed batch: ESS, resampling and the cluster-count histogram."""
    rows = []
    for report in reports:
        counts = pd.Series(report.cluster_counts).value_counts().sort_index()
        rows.append({
            'step': report.step,
            'batch_size': report.batch_size,
            'ess': report.ess,
            'resampled': int(report.resampled),
            'mean_clusters': sum(report.cluster_counts) / len(report.cluster_counts),
            'cluster_histogram': ';'.join(f"{k}:{n}" for k, n in counts.items()),
            'failed_particles': len(report.failed_particles),
            'refreshed': sum(report.refresh_counts),
            'optimizer_runs': report.optimizer_runs,
            'optimizer_iterations': report.optimizer_iterations,
            'arms_added': report.arms_added,
        })
    return pd.DataFrame(rows, columns=[
        'step', 'batch_size', 'ess', 'resampled', 'mean_clusters', 'cluster_histogram',
        'failed_particles', 'refreshed', 'optimizer_runs', 'optimizer_iterations', 'arms_added',
    ])


def write_run(record, out_dir):
    """Write metrics.json, predictions.csv and (when steps were taken) steps.csv."""
    out_dir = Path(out_dir)
    written = [
        write_json(out_dir / 'metrics.json', record.metrics),
        write_frame(out_dir / 'predictions.csv', record.predictions),
    ]
    if record.steps:
        written.append(write_frame(out_dir / 'steps.csv', steps_frame(record.steps)))
    for path in written:
        logger.info(f"Wrote {path}")
    return written
