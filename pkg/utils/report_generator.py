import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from jinja2 import Template

from config.app_config import AppConfig

TEXT_TABLE_TEMPLATE = """\
{{ title }}
{{ rule }}
{{ header }}
{{ rule }}
{% for line in lines -%}
{{ line }}
{% endfor -%}
{{ rule }}
{% for key, value in notes -%}
{{ key }}: {{ value }}
{% endfor -%}
"""


class ReportGenerator:
    """Write experiment results as CSV, aligned text, JSON lines and graymaps.

    Every writer uses fixed float formatting and LF line endings so identical
    runs produce byte-identical files.
    """

    @staticmethod
    def _format_value(value: Any) -> str:
        if isinstance(value, (bool, np.bool_)):
            return "yes" if value else "no"
        if isinstance(value, (float, np.floating)):
            if np.isnan(value):
                return "-"
            return AppConfig.CSV_FLOAT_FORMAT % value
        if value is None:
            return "-"
        return str(value)

    @staticmethod
    def write_csv(frame: pd.DataFrame, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=AppConfig.CSV_FLOAT_FORMAT, lineterminator="\n")
        return path

    @staticmethod
    def render_text_table(frame: pd.DataFrame, title: str, notes: Optional[Dict[str, Any]] = None) -> str:
        """Render ``frame`` as a fixed-width table; text columns left, numbers right aligned."""
        columns = list(frame.columns)
        cells = [[ReportGenerator._format_value(v) for v in row] for row in frame.itertuples(index=False)]
        widths = [max([len(str(c))] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
        numeric = [pd.api.types.is_numeric_dtype(frame[c]) and not pd.api.types.is_bool_dtype(frame[c])
                   for c in columns]

        def fmt(values: Sequence[str]) -> str:
            parts = [v.rjust(w) if num else v.ljust(w) for v, w, num in zip(values, widths, numeric)]
            return "  ".join(parts).rstrip()

        header = fmt([str(c) for c in columns])
        return Template(TEXT_TABLE_TEMPLATE).render(
            title=title,
            rule="-" * max(len(header), len(title)),
            header=header,
            lines=[fmt(row) for row in cells],
            notes=[(k, ReportGenerator._format_value(v)) for k, v in (notes or {}).items()],
        )

    @staticmethod
    def write_text_table(frame: pd.DataFrame, path, title: str, notes: Optional[Dict[str, Any]] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(ReportGenerator.render_text_table(frame, title, notes))
        return path

    @staticmethod
    def write_jsonl(records: Iterable[Dict[str, Any]], path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for record in records:
                handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        return path

    @staticmethod
    def write_json(payload: Dict[str, Any], path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True, default=str)
            handle.write("\n")
        return path

    @staticmethod
    def write_matrix_csv(matrix: np.ndarray, path, row_labels: Optional[List[str]] = None,
                         column_prefix: str = "t") -> Path:
        data = np.asarray(matrix, dtype=np.float64)
        frame = pd.DataFrame(data, columns=[f"{column_prefix}{j}" for j in range(data.shape[1])])
        if row_labels is not None:
            frame.insert(0, "row", row_labels)
        return ReportGenerator.write_csv(frame, path)

    @staticmethod
    def write_pgm(matrix: np.ndarray, path) -> Path:
        """8-bit binary graymap (P5); values are scaled by the matrix maximum, dark = high."""
        data = np.asarray(matrix, dtype=np.float64)
        peak = float(data.max()) if data.size else 0.0
        scaled = data / peak if peak > 0 else np.zeros_like(data)
        pixels = (AppConfig.PGM_MAX_VALUE * (1.0 - np.clip(scaled, 0.0, 1.0))).round().astype(np.uint8)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        height, width = pixels.shape
        with open(path, "wb") as handle:
            handle.write(f"P5\n{width} {height}\n{AppConfig.PGM_MAX_VALUE}\n".encode("ascii"))
            handle.write(pixels.tobytes())
        return path

    @staticmethod
    def read_pgm(path) -> np.ndarray:
        with open(Path(path), "rb") as handle:
            magic = handle.readline().strip()
            if magic != b"P5":
                raise ValueError(f"{path} is not a binary graymap")
            width, height = (int(v) for v in handle.readline().split())
            handle.readline()
            return np.frombuffer(handle.read(), dtype=np.uint8).reshape(height, width)
