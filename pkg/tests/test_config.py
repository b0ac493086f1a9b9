"""Config parsing tests: defaults, typing, aggregated error reporting."""

import pytest

from reuserec.config import (cutoff_list, defaults, parse_config_text,
                             to_hyper, to_train_config)
from reuserec.errors import DataFormatError


def test_defaults_are_valid():
    values = parse_config_text("")
    assert values == defaults()
    to_hyper(values)
    to_train_config(values)


def test_parse_overrides_and_comments():
    values = parse_config_text(
        "# a comment\n"
        "d = 32\n"
        "model = sa   # trailing comment\n"
        "dropout=0.1\n"
        "mask_padding = off\n"
    )
    assert values["d"] == 32
    assert values["model"] == "sa"
    assert values["dropout"] == 0.1
    assert values["mask_padding"] is False


def test_all_problems_reported_at_once():
    with pytest.raises(DataFormatError) as exc:
        parse_config_text(
            "d = eight\n"
            "mystery = 1\n"
            "not a pair\n"
            "n_h = 3\n"   # 64 % 3 != 0
        )
    msg = str(exc.value)
    assert "line 1" in msg
    assert "mystery" in msg
    assert "line 3" in msg
    assert "n_h" in msg


def test_cross_field_validation():
    with pytest.raises(DataFormatError):
        parse_config_text("d = 10\nn_h = 4\n")
    with pytest.raises(DataFormatError):
        parse_config_text("model = gru\n")
    with pytest.raises(DataFormatError):
        parse_config_text("dropout = 1.5\n")


def test_cutoff_list():
    assert cutoff_list("10,20") == [10, 20]
    with pytest.raises(ValueError):
        cutoff_list("0,10")
    with pytest.raises(ValueError):
        cutoff_list("")


def test_to_hyper_wires_user_embedding():
    assert to_hyper(parse_config_text("model = ram\n")).use_user_embedding
    assert not to_hyper(parse_config_text("model = ram-u\n")).use_user_embedding
