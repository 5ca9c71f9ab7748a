"""
Run configuration: validated fields, ``key=value`` config files and flags.

Config files hold one ``snake_case_field=value`` per line and are read with
``dotenv_values``; command-line flags (``--num-bodies``, ``--theta``, ...)
override the file.
"""

import argparse
import math

import attrs
from dotenv import dotenv_values

from components.geometry import DISTRIBUTIONS
from components.kernels import MAX_ORDER
from components.runtime import MODES, WEIGHTINGS, NetModel, Schedule
from utils.errors import UsageError

TRUE_WORDS = ("1", "true", "yes", "on")
FALSE_WORDS = ("0", "false", "no", "off")


def _to_int(value):
    if isinstance(value, str):
        value = value.strip()
        try:
            return int(value)
        except ValueError:
            number = float(value)
            if not number.is_integer():
                raise ValueError(f"{value!r} is not an integer") from None
            return int(number)
    return int(value)


def _to_bool(value):
    if isinstance(value, str):
        word = value.strip().lower()
        if word in TRUE_WORDS:
            return True
        if word in FALSE_WORDS:
            return False
        raise ValueError(f"{value!r} is not a boolean")
    return bool(value)


def _to_optional_float(value):
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    return float(value)


def _open_unit(instance, attribute, value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{attribute.name} must lie in (0, 1), got {value}")


def _finite(instance, attribute, value):
    if value is not None and not math.isfinite(value):
        raise ValueError(f"{attribute.name} must be finite, got {value}")


def _count(minimum=1, **kwargs):
    return attrs.field(converter=_to_int, validator=attrs.validators.ge(minimum), **kwargs)


@attrs.frozen
class RunConfig:
    """
    One experiment: problem size, FMM parameters, schedule and network.

    The FMM columns are the usual benchmark parameters (bodies, P, theta,
    ncrit, nspawn, distribution); the rest drive the simulated machine.
    """

    num_bodies: int = _count(default=10_000)
    order: int = attrs.field(
        default=10,
        converter=_to_int,
        validator=[attrs.validators.ge(1), attrs.validators.le(MAX_ORDER)],
    )
    theta: float = attrs.field(default=0.4, converter=float, validator=_open_unit)
    ncrit: int = _count(default=64)
    nspawn: int = _count(default=1000)
    distribution: str = attrs.field(default="cube", validator=attrs.validators.in_(DISTRIBUTIONS))
    ranks: int = _count(default=1)
    mode: str = attrs.field(default="bulkSync", validator=attrs.validators.in_(MODES))
    alpha0: float = attrs.field(
        default=1.0, converter=float, validator=[_finite, attrs.validators.ge(0.0)]
    )
    steps: int = _count(default=1)
    seed: int = _count(minimum=0, default=0)
    latency_ms: float = attrs.field(
        default=0.0, converter=float, validator=[_finite, attrs.validators.ge(0.0)]
    )
    bandwidth: float = attrs.field(default=math.inf, converter=float, validator=attrs.validators.gt(0.0))
    reduction_latency_ms: float = attrs.field(
        default=None,
        converter=_to_optional_float,
        validator=attrs.validators.optional([_finite, attrs.validators.ge(0.0)]),
    )
    output: str = "data/output"
    bins: int = _count(default=64)
    rounds: int = _count(default=3)
    mutual: bool = attrs.field(default=False, converter=_to_bool)
    weighting: str = attrs.field(default="eq1", validator=attrs.validators.in_(WEIGHTINGS))

    def net_model(self):
        if self.reduction_latency_ms is None:
            return NetModel(self.latency_ms, self.bandwidth)
        return NetModel(self.latency_ms, self.bandwidth, self.reduction_latency_ms)

    def schedule(self):
        return Schedule(self.mode)

    def to_config_text(self):
        """Serialize as ``key=value`` lines; unset optional fields are omitted."""
        lines = []
        for field in attrs.fields(RunConfig):
            value = getattr(self, field.name)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{field.name}={value}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as file:
            file.write(self.to_config_text())


FIELD_NAMES = tuple(field.name for field in attrs.fields(RunConfig))

FLAG_HELP = {
    "num_bodies": "number of bodies",
    "order": f"expansion order P, 1..{MAX_ORDER}",
    "theta": "opening angle, in (0, 1)",
    "ncrit": "maximum bodies per leaf",
    "nspawn": "minimum target bodies before a traversal task is spawned",
    "distribution": "one of " + ", ".join(DISTRIBUTIONS),
    "ranks": "number of simulated ranks",
    "mode": "one of " + ", ".join(MODES),
    "alpha0": "initial remote weighting constant",
    "steps": "time steps to simulate",
    "seed": "random seed for body generation",
    "latency_ms": "per-message latency in milliseconds",
    "bandwidth": "network bandwidth in bytes per millisecond",
    "reduction_latency_ms": "per-hop latency of reductions; defaults to latency_ms",
    "output": "output directory",
    "bins": "histogram bins per splitter round",
    "rounds": "histogram refinement rounds",
    "mutual": "use mutual interactions in the local traversal (true/false)",
    "weighting": "one of " + ", ".join(WEIGHTINGS),
}


class ArgumentParser(argparse.ArgumentParser):
    """Parser that raises :class:`UsageError` instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def flag_name(field_name):
    return "--" + field_name.replace("_", "-")


def add_config_arguments(parser):
    """Add one flag per RunConfig field plus ``--config``; unset flags stay absent."""
    parser.add_argument("--config", default=argparse.SUPPRESS, help="key=value config file")
    for name in FIELD_NAMES:
        parser.add_argument(
            flag_name(name), dest=name, default=argparse.SUPPRESS, help=FLAG_HELP[name]
        )
    return parser


def read_config_file(path):
    """
    Read a ``key=value`` file.

    Raises:
        UsageError: On a missing file or an unknown key.
    """
    try:
        with open(path, encoding="utf-8") as file:
            values = dotenv_values(stream=file)
    except OSError as e:
        raise UsageError(f"Cannot read config file {path}: {e}") from e
    unknown = sorted(set(values) - set(FIELD_NAMES))
    if unknown:
        raise UsageError(f"Unknown keys in {path}: {', '.join(unknown)}")
    return {key: value for key, value in values.items() if value is not None}


def make_config(values):
    """
    Build a RunConfig from string or typed values.

    Raises:
        UsageError: If a value does not convert or is out of range.
    """
    unknown = sorted(set(values) - set(FIELD_NAMES))
    if unknown:
        raise UsageError(f"Unknown settings: {', '.join(unknown)}")
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as e:
        raise UsageError(f"Invalid configuration: {e}") from e


def config_from_namespace(namespace, config_file=None):
    """Merge a config file (``--config`` or ``config_file``) with parsed flags."""
    flags = {name: value for name, value in vars(namespace).items() if name in FIELD_NAMES}
    path = getattr(namespace, "config", None) or config_file
    values = read_config_file(path) if path else {}
    values.update(flags)
    return make_config(values)


def parse_config(argv, config_file=None):
    """
    Parse run flags, layered over an optional config file.

    Args:
        argv (list[str]): Flags such as ``["--num-bodies", "4096", "--theta", "0.5"]``.
        config_file (str, optional): Path of a ``key=value`` file; a ``--config`` flag takes precedence.

    Returns:
        RunConfig: The validated settings.

    Raises:
        UsageError: On an unknown flag or key, or an out-of-range value.
    """
    parser = add_config_arguments(ArgumentParser(prog="fmm", add_help=False))
    namespace = parser.parse_args(argv)
    return config_from_namespace(namespace, config_file)
