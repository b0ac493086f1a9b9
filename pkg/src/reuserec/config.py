"""Flat key=value run configuration with schema validation.

The config file is a plain text document: one `key = value` per line,
`#` starts a comment, no nesting. Unknown keys and ill-typed values are
all reported before anything runs.
"""

from .errors import DataFormatError
from .model_common import ModelHyper
from .models import MODEL_KINDS
from .numerics import ACTIVATIONS
from .trainer import TrainConfig


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default, human-readable constraint or None)
SCHEMA = {
    "model": (str, "ram", f"one of {MODEL_KINDS}"),
    "d": (int, 64, "positive, divisible by n_h"),
    "n": (int, 50, ">= 2"),
    "n_h": (int, 2, ">= 1"),
    "n_b": (int, 2, ">= 1"),
    "activation": (str, "gelu", f"one of {tuple(ACTIVATIONS)}"),
    "scale": (str, "full", "full or head"),
    "mask_padding": (_bool, True, None),
    "dropout": (float, 0.0, "in [0, 1)"),
    "lr": (float, 1e-3, "> 0 allowed; 0 disables updates"),
    "epochs": (int, 20, ">= 1"),
    "batch_size": (int, 1, ">= 1"),
    "patience": (int, 10, ">= 0"),
    "eval_every": (int, 1, ">= 1"),
    "seed": (int, 42, None),
    "min_user_events": (int, 5, ">= 1"),
    "min_item_events": (int, 5, ">= 1"),
    "rating_threshold": (float, -1.0, "< 0 disables rating filtering"),
    "cutoffs": (str, "10,20", "comma-separated ints"),
    "exclude_seen": (_bool, False, None),
    "threads": (int, 1, ">= 1"),
}


def defaults():
    return {k: v for k, (_p, v, _c) in SCHEMA.items()}


def parse_config_text(text):
    """Parses and validates; raises DataFormatError listing every problem."""
    values = defaults()
    problems = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key = value, got {raw!r}")
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        parser, _, constraint = SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError:
            hint = f" ({constraint})" if constraint else ""
            problems.append(f"line {lineno}: bad value for {key}: {val!r}{hint}")
    problems.extend(validate(values))
    if problems:
        raise DataFormatError("config errors:\n  " + "\n  ".join(problems))
    return values


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def validate(values):
    problems = []
    if values["model"] not in MODEL_KINDS:
        problems.append(f"model must be one of {MODEL_KINDS}, got {values['model']!r}")
    if values["activation"] not in ACTIVATIONS:
        problems.append(f"activation must be one of {tuple(ACTIVATIONS)}")
    if values["d"] < 1 or values["n_h"] < 1 or values["d"] % values["n_h"] != 0:
        problems.append(f"d mod n_h must be 0 (d={values['d']}, n_h={values['n_h']})")
    if values["n"] < 2:
        problems.append("n must be >= 2")
    if values["n_b"] < 1:
        problems.append("n_b must be >= 1")
    if not 0.0 <= values["dropout"] < 1.0:
        problems.append("dropout must be in [0, 1)")
    if values["epochs"] < 1:
        problems.append("epochs must be >= 1")
    if values["patience"] < 0:
        problems.append("patience must be >= 0")
    if values["eval_every"] < 1:
        problems.append("eval_every must be >= 1")
    if values["batch_size"] < 1:
        problems.append("batch_size must be >= 1")
    if values["threads"] < 1:
        problems.append("threads must be >= 1")
    try:
        cutoff_list(values["cutoffs"])
    except ValueError:
        problems.append(f"cutoffs must be comma-separated positive ints, got {values['cutoffs']!r}")
    return problems


def cutoff_list(text):
    ks = [int(x) for x in str(text).split(",") if x.strip()]
    if not ks or any(k < 1 for k in ks):
        raise ValueError(text)
    return ks


def to_hyper(values):
    return ModelHyper(
        d=values["d"], n=values["n"], n_h=values["n_h"], n_b=values["n_b"],
        activation=values["activation"],
        use_user_embedding=values["model"] == "ram",
        mask_padding=values["mask_padding"],
        scale=values["scale"], dropout=values["dropout"],
    )


def to_train_config(values):
    return TrainConfig(
        model=values["model"], epochs=values["epochs"],
        learning_rate=values["lr"], batch_size=values["batch_size"],
        seed=values["seed"], patience=values["patience"],
        eval_every=values["eval_every"],
    )
