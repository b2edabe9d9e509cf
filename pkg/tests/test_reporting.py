#!/usr/bin/env python3
"""
Tests for report writers and run manifests
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.errors import ConfigError, SearchOverflowError
from src.reporting import RunManifest, manifest_path_for, to_json, write_csv, write_report


@pytest.fixture
def frame():
    return pd.DataFrame({"layer": [0, 1], "gamma": [0.1, 1.0 / 3.0]})


def test_report_format_follows_suffix(frame, tmp_path):
    write_report(frame, tmp_path / "r.csv")
    write_report(frame, tmp_path / "r.json")
    assert list(pd.read_csv(tmp_path / "r.csv")["layer"]) == [0, 1]
    records = json.loads((tmp_path / "r.json").read_text())["records"]
    assert records[1]["gamma"] == pytest.approx(1.0 / 3.0, rel=1e-14)
    with pytest.raises(ConfigError):
        write_report(frame, tmp_path / "r.parquet")


def test_csv_is_byte_stable(frame, tmp_path):
    write_csv(frame, tmp_path / "a.csv")
    write_csv(frame.copy(), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert "0.33333333333333331" in (tmp_path / "a.csv").read_text()


def test_json_handles_numpy():
    payload = json.loads(to_json({"n": np.int64(3), "v": np.array([1.5, 2.0])}))
    assert payload == {"n": 3, "v": [1.5, 2.0]}


def test_manifest(tmp_path):
    primary = tmp_path / "pruned.ckpt"
    assert manifest_path_for(primary).name == "pruned.ckpt.manifest.json"

    manifest = RunManifest(subcommand="prune", argv=["prune"], seeds=[1])
    manifest.record_output(primary)
    manifest.record_error(SearchOverflowError("no factor reaches the target", achieved=10))
    written = json.loads(manifest.write(manifest_path_for(primary)).read_text())
    assert written["outputs"] == [str(primary)]
    assert written["error"] == {"type": "SearchOverflowError", "message": "no factor reaches the target",
                                "exit_code": 2}
    assert written["tool_version"] == "1.0.0"
