"""
ScenarioService for loading contingency tables and deriving their marginals.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import IO, Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.core.config import settings
from app.core.errors import ScenarioError
from app.models.scenario import Cell, ContingencyTable, MarginalSet

logger = logging.getLogger(__name__)

CSV_HEADER = ["instance", "arm", "successes", "trials"]
BUILTIN_SCENARIOS = {"kidney": "kidney.csv", "magazine": "magazine.csv"}

Source = Union[bytes, str, IO[bytes], IO[str]]


class _CellRow(BaseModel):
    instance: str = Field(min_length=1)
    arm: str = Field(min_length=1)
    successes: int = Field(ge=0)
    trials: int = Field(ge=0)


def _first_error(exc: ValidationError) -> str:
    msg = exc.errors()[0]["msg"]
    return msg.removeprefix("Value error, ")


def _read_text(source: Source) -> str:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        return source.decode("utf-8-sig")
    return source


class ScenarioService:
    """Service for scenario files and the bundled real-world tables."""

    def __init__(self, data_dir: Path = None):
        """Initialize ScenarioService.

        Args:
            data_dir: Directory holding the bundled scenario files
                (defaults to settings.DATA_DIR)
        """
        self.data_dir = Path(data_dir or settings.DATA_DIR)

    def load_contingency_table(self, source: Source, type_id: int = 0) -> ContingencyTable:
        """Parse a scenario file (CSV or JSON) into a ContingencyTable.

        Args:
            source: Byte stream, text stream, bytes or str holding the file contents
            type_id: Teammate type the table describes (JSON may override it)

        Returns:
            ContingencyTable: cells in file order, ids assigned by first appearance

        Raises:
            ScenarioError: on malformed input or invariant violations
        """
        text = _read_text(source)
        if text.lstrip().startswith(("{", "[")):
            rows, type_id = self._parse_json(text, type_id)
        else:
            rows = self._parse_csv(text)
        return self._build_table(rows, type_id)

    def load_contingency_file(self, path: Union[str, Path]) -> ContingencyTable:
        path = Path(path)
        try:
            with open(path, "rb") as f:
                return self.load_contingency_table(f)
        except OSError as e:
            raise ScenarioError(f"Failed to read scenario file {path}: {e}")

    def builtin_scenario(self, name: str) -> ContingencyTable:
        """Return one of the bundled tables ("kidney" or "magazine")."""
        if name not in BUILTIN_SCENARIOS:
            raise ScenarioError(f"Unknown scenario '{name}', expected one of {sorted(BUILTIN_SCENARIOS)}")
        table = self.load_contingency_file(self.data_dir / BUILTIN_SCENARIOS[name])
        logger.debug(f"Loaded builtin scenario {name}: {table.n_instances} instances x {table.n_arms} arms")
        return table

    def dump_contingency_table(self, table: ContingencyTable) -> str:
        """Serialize a table in the scenario CSV format."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for cell in table.cells:
            writer.writerow([
                table.instance_names[cell.instance],
                table.arm_names[cell.arm],
                cell.successes,
                cell.trials,
            ])
        return out.getvalue()

    def _parse_csv(self, text: str) -> List[Tuple[int, _CellRow]]:
        rows: List[Tuple[int, _CellRow]] = []
        header = None
        for line_no, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = [f.strip() for f in next(csv.reader([stripped]))]
            if header is None:
                if sorted(fields) != sorted(CSV_HEADER):
                    raise ScenarioError(f"expected header {','.join(CSV_HEADER)}, got {stripped}", line=line_no)
                header = fields
                continue
            if len(fields) != len(header):
                raise ScenarioError(f"expected {len(header)} fields, got {len(fields)}", line=line_no)
            try:
                rows.append((line_no, _CellRow(**dict(zip(header, fields)))))
            except ValidationError as e:
                raise ScenarioError(_first_error(e), line=line_no)
        if header is None:
            raise ScenarioError("missing header")
        return rows

    def _parse_json(self, text: str, type_id: int) -> Tuple[List[Tuple[Optional[int], _CellRow]], int]:
        try:
            payload: Any = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"invalid JSON: {e.msg}", line=e.lineno)
        if isinstance(payload, dict):
            type_id = int(payload.get("type_id", type_id))
            payload = payload.get("cells", [])
        rows = []
        for i, item in enumerate(payload):
            try:
                rows.append((None, _CellRow(**item)))
            except (ValidationError, TypeError) as e:
                detail = _first_error(e) if isinstance(e, ValidationError) else str(e)
                raise ScenarioError(f"cell {i}: {detail}")
        return rows, type_id

    def _build_table(self, rows: List[Tuple[Optional[int], _CellRow]], type_id: int) -> ContingencyTable:
        if not rows:
            raise ScenarioError("table has no trials")
        instance_ids: Dict[str, int] = {}
        arm_ids: Dict[str, int] = {}
        cells = []
        for line_no, row in rows:
            if row.successes > row.trials:
                raise ScenarioError(
                    f"cell ({row.instance}, {row.arm}): successes {row.successes} exceed trials {row.trials}",
                    line=line_no,
                )
            instance = instance_ids.setdefault(row.instance, len(instance_ids))
            arm = arm_ids.setdefault(row.arm, len(arm_ids))
            cells.append(Cell(instance=instance, arm=arm, successes=row.successes, trials=row.trials))
        try:
            return ContingencyTable(
                type_id=type_id,
                instance_names=list(instance_ids),
                arm_names=list(arm_ids),
                cells=cells,
            )
        except ValidationError as e:
            raise ScenarioError(_first_error(e))


def table_marginals(table: ContingencyTable) -> MarginalSet:
    """Exact conditional distributions of a table.

    Cells without trials get success_rate 0 and covered=False. Conditionals over
    an empty row or column are all zero.
    """
    trials = table.trials_matrix().astype(float)
    successes = table.successes_matrix().astype(float)
    total = trials.sum()
    instance_totals = trials.sum(axis=1)
    arm_totals = trials.sum(axis=0)
    covered = trials > 0

    with np.errstate(divide="ignore", invalid="ignore"):
        p_instance_given_arm = np.where(arm_totals[:, None] > 0, trials.T / arm_totals[:, None], 0.0)
        p_arm_given_instance = np.where(instance_totals[:, None] > 0, trials / instance_totals[:, None], 0.0)
        success_rate = np.where(covered, successes / trials, 0.0)

    return MarginalSet(
        instance_names=list(table.instance_names),
        arm_names=list(table.arm_names),
        p_instance_given_type=instance_totals / total,
        p_arm_given_type=arm_totals / total,
        p_instance_given_arm=p_instance_given_arm,
        p_arm_given_instance=p_arm_given_instance,
        success_rate=success_rate,
        covered=covered,
    )


# Create a default instance
scenario_service = ScenarioService()
