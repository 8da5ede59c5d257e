"""CSV output for partitions and trajectories.

Numbers are written with 17 significant digits, comma-separated, LF line
endings and UTF-8, so identical runs give byte-identical files.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .city import Scenario
from .dynamics import TRAJECTORY_COLUMNS, Trajectory, trajectory_export
from .equilibrium import individual_cost_field
from .transport import Partition

__all__ = [
    "format_number",
    "write_rows",
    "write_partition_csv",
    "write_trajectory_csv",
    "write_partition_plot_data",
    "write_trajectory_plot_data",
]

PathLike = Union[str, Path]


def format_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else format_number(v) for v in row])


def _partition_table(scenario: Scenario, partition: Partition):
    centers = scenario.grid.centers
    header = ["cell_index"] + [f"center_{a}" for a in range(centers.shape[1])]
    header += ["mass", "assigned_site", "individual_cost"]
    # split cells are reported under the site taking the larger share
    site = np.argmax(partition.shares, axis=1) + 1
    cost = individual_cost_field(scenario, partition)
    rows = (
        (i, *centers[i], scenario.mass[i], int(site[i]), cost[i])
        for i in range(centers.shape[0])
    )
    return header, rows


def write_partition_csv(partition: Partition, scenario: Scenario, path: PathLike) -> None:
    """One row per cell: index, centre, mass, 1-based site, individual cost."""
    header, rows = _partition_table(scenario, partition)
    write_rows(path, header, rows)


def write_trajectory_csv(trajectory: Trajectory, path: PathLike) -> None:
    write_rows(path, TRAJECTORY_COLUMNS, trajectory_export(trajectory))


def write_partition_plot_data(partition: Partition, scenario: Scenario, path: PathLike) -> None:
    """Long format ``cell_index,variable,value`` for external plotting."""
    header, rows = _partition_table(scenario, partition)
    long_rows = ((row[0], name, value) for row in rows for name, value in zip(header[1:], row[1:]))
    write_rows(path, ("cell_index", "variable", "value"), long_rows)


def write_trajectory_plot_data(trajectory: Trajectory, path: PathLike) -> None:
    """Long format ``day,variable,value`` for external plotting."""
    names = TRAJECTORY_COLUMNS[1:]
    long_rows = ((row[0], name, value) for row in trajectory_export(trajectory) for name, value in zip(names, row[1:]))
    write_rows(path, ("day", "variable", "value"), long_rows)
