import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.core.entities.exp_solution import ExpSolution
from src.core.entities.grid import MarkovStoppingRule, ValueField
from src.core.entities.simulation import PathBatch, StopOutcome
from src.core.interfaces.result_sink import IResultSink

logger = logging.getLogger(__name__)

VALUE_COLUMNS = ["t", "state", "value", "h_star"]
EXP_COLUMNS = ["W", "state", "f_star"]


def jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "model_dump"):
        return jsonable(obj.model_dump(mode="python"))
    if hasattr(obj, "value") and hasattr(obj, "name"):  # enums
        return obj.value
    return obj


def value_rule_table(value: ValueField, rule: Optional[MarkovStoppingRule], states: Sequence[str]) -> pd.DataFrame:
    """Long format, one row per (node, state). h_star is 0 when no rule is given."""
    t = value.grid.nodes
    m = value.m
    h = rule.h if rule is not None else np.zeros_like(value.values)
    return pd.DataFrame({
        "t": np.tile(t, m),
        "state": np.repeat(np.asarray(states, dtype=object), len(t)),
        "value": value.values.reshape(-1),
        "h_star": h.reshape(-1),
    }, columns=VALUE_COLUMNS)


def exp_table(solution: ExpSolution, states: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame({"W": solution.W, "state": list(states), "f_star": solution.f_star}, columns=EXP_COLUMNS)


def outcome_table(batch: PathBatch, outcome: StopOutcome, states: Sequence[str]) -> pd.DataFrame:
    names = np.asarray(states, dtype=object)
    return pd.DataFrame({
        "stream": batch.first_stream + np.arange(batch.n_paths),
        "tau": outcome.tau,
        "state": names[outcome.state],
        "stopped": outcome.stopped,
    })


def table_records(table: pd.DataFrame) -> List[Dict[str, Any]]:
    return jsonable(table.to_dict(orient="records"))


class FileResultSink(IResultSink):
    """CSV tables and JSON reports under one output directory."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def write_table(self, name: str, table: pd.DataFrame) -> Optional[str]:
        path = self.out_dir / f"{name}.csv"
        # pandas writes float inf as the literal `inf`
        table.to_csv(path, index=False, float_format="%.12g")
        logger.info(f"wrote {len(table)} rows to {path}")
        return str(path)

    def write_report(self, name: str, report: Dict[str, Any]) -> Optional[str]:
        path = self.out_dir / f"{name}.json"
        path.write_text(json.dumps(jsonable(report), indent=2))
        logger.info(f"wrote report {path}")
        return str(path)


class MemoryResultSink(IResultSink):
    """Keeps tables as JSON records; used by the HTTP surface."""

    def __init__(self):
        self.tables: Dict[str, List[Dict[str, Any]]] = {}
        self.reports: Dict[str, Dict[str, Any]] = {}

    def write_table(self, name: str, table: pd.DataFrame) -> Optional[str]:
        self.tables[name] = table_records(table)
        return None

    def write_report(self, name: str, report: Dict[str, Any]) -> Optional[str]:
        self.reports[name] = jsonable(report)
        return None
