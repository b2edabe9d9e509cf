#!/usr/bin/env python3
"""
Tests for the error hierarchy, settings files and overrides
"""

from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import pytest

from src.config import (apply_config, config_snapshot, convert_value, get_config, parse_overrides,
                        read_config_file)
from src.errors import (ConfigError, ContractError, CycleAbortedError, FormatError, IterationLimitError,
                        NumericError, RMTPruneError, SearchOverflowError, UsageError, exit_code_for)
from src.parallel import make_rng, ordered_map


@dataclass(frozen=True)
class Settings:
    rate: float = 0.5
    steps: int = 3
    name: str = "x"
    enabled: bool = True
    grid: Tuple[float, ...] = (1.0, 2.0)
    limit: Optional[int] = None
    mode: Literal["row", "column"] = "row"

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")


class TestErrors:
    """Exit codes follow the contract / numeric split"""

    def test_contract_errors_exit_one(self):
        assert exit_code_for(FormatError("bad")) == 1
        assert exit_code_for(UsageError("bad")) == 1
        assert exit_code_for(ConfigError("bad")) == 1

    def test_numeric_errors_exit_two(self):
        assert exit_code_for(IterationLimitError("slow", residual=1e-3)) == 2
        assert exit_code_for(SearchOverflowError("big", achieved=5)) == 2

    def test_success_and_foreign_errors(self):
        assert exit_code_for(None) == 0
        assert exit_code_for(OSError("disk")) == 1
        assert exit_code_for(RuntimeError("boom")) == 2

    def test_cycle_abort_inherits_cause_code(self):
        err = CycleAbortedError("cycle 2 failed", reports=[1, 2], cause=FormatError("x"))
        assert err.exit_code == 1
        assert err.reports == [1, 2]
        assert exit_code_for(CycleAbortedError("failed", reports=[])) == 2

    def test_hierarchy(self):
        assert issubclass(ContractError, ValueError)
        assert issubclass(NumericError, ArithmeticError)
        assert issubclass(SearchOverflowError, RMTPruneError)
        assert IterationLimitError("x", residual=0.5).residual == 0.5


class TestConfigFiles:
    def test_read_skips_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\n\nrate = 0.25\nname = layer one\n")
        assert read_config_file(path) == {"rate": "0.25", "name": "layer one"}

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("rate = 1\nrate = 2\n")
        with pytest.raises(ConfigError, match="duplicate"):
            read_config_file(path)

    def test_missing_file_and_bad_line(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config_file(tmp_path / "absent.cfg")
        path = tmp_path / "bad.cfg"
        path.write_text("no equals sign\n")
        with pytest.raises(ConfigError):
            read_config_file(path)

    def test_parse_overrides(self):
        assert parse_overrides(["a=1", "b = two"]) == {"a": "1", "b": "two"}
        with pytest.raises(ConfigError):
            parse_overrides(["novalue"])


class TestApplyConfig:
    """Precedence is override > file > default, with typed conversion"""

    def test_precedence(self):
        s = apply_config(Settings, {"rate": "0.1", "steps": "7"}, {"rate": "0.2"})
        assert s.rate == 0.2
        assert s.steps == 7
        assert s.name == "x"

    def test_conversions(self):
        s = apply_config(Settings, {"grid": "1, 0.5,0", "enabled": "no", "limit": "none", "mode": "column"})
        assert s.grid == (1.0, 0.5, 0.0)
        assert s.enabled is False
        assert s.limit is None
        assert s.mode == "column"

    def test_typed_overrides_pass_through(self):
        assert apply_config(Settings, {}, {"steps": 11}).steps == 11

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="accepted keys"):
            apply_config(Settings, {"rte": "1"})

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            apply_config(Settings, {"steps": "three"})
        with pytest.raises(ConfigError):
            apply_config(Settings, {"mode": "diagonal"})
        with pytest.raises(ConfigError):
            apply_config(Settings, {"rate": "-1"})

    def test_convert_optional_int(self):
        assert convert_value("5", Optional[int]) == 5

    def test_snapshot_lists_tuples(self):
        assert config_snapshot(Settings())["grid"] == [1.0, 2.0]

    def test_global_defaults(self):
        cfg = get_config()
        assert cfg.BEMA_ALPHA == 0.25
        assert cfg.MIN_SPECTRAL_DIM == 32
        assert cfg.NUM_THREADS >= 1


class TestParallel:
    def test_streams_are_reproducible_and_distinct(self):
        a = make_rng(3, 1).standard_normal(5)
        b = make_rng(3, 1).standard_normal(5)
        c = make_rng(3, 2).standard_normal(5)
        assert (a == b).all()
        assert not (a == c).all()

    def test_negative_seed_rejected(self):
        with pytest.raises(ContractError):
            make_rng(-1)

    def test_ordered_map_keeps_order(self):
        items = list(range(20))
        assert ordered_map(lambda x: x * x, items, threads=4) == [x * x for x in items]
        assert ordered_map(lambda x: x + 1, items, threads=1) == [x + 1 for x in items]
