#!/usr/bin/env python3
"""
Tests for report writers
"""

import os
import sys

import numpy as np
import pandas as pd

# Add the project root to the path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.report_generator import ReportGenerator


def test_csv_is_deterministic(tmp_path):
    frame = pd.DataFrame({"kind": ["ctc", "rnnt"], "wer": [1.0 / 3.0, 12.5]})
    first = ReportGenerator.write_csv(frame, tmp_path / "a.csv").read_bytes()
    second = ReportGenerator.write_csv(frame, tmp_path / "b.csv").read_bytes()
    assert first == second
    assert first == b"kind,wer\nctc,0.333333\nrnnt,12.500000\n"


def test_text_table_alignment_and_notes():
    frame = pd.DataFrame({"decoder": ["greedy", "beam + LM"], "wer": [20.0, 9.5], "ok": [True, False]})
    text = ReportGenerator.render_text_table(frame, "Decoder ablation", {"lm_beats_greedy": True})
    lines = text.splitlines()
    assert lines[0] == "Decoder ablation"
    assert "greedy     20.000000  yes" in text
    assert lines[-1] == "lm_beats_greedy: yes"


def test_pgm_round_trip_dark_is_high(tmp_path):
    matrix = np.array([[0.0, 0.5], [1.0, 0.25]])
    image = ReportGenerator.read_pgm(ReportGenerator.write_pgm(matrix, tmp_path / "m.pgm"))
    assert image.shape == (2, 2)
    assert image[1, 0] == 0
    assert image[0, 0] == 255
    assert image[0, 1] < image[1, 1]


def test_jsonl_sorts_keys(tmp_path):
    path = ReportGenerator.write_jsonl([{"b": 1, "a": "x"}], tmp_path / "r.jsonl")
    assert path.read_text(encoding="utf-8") == '{"a": "x", "b": 1}\n'
