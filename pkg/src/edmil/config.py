"""Flat run configuration: defaults < config file < command-line flags."""

from dataclasses import dataclass, field, fields

from .errors import ContractError, ParseError


def parse_kv(text, source="<string>"):
    """Parse ``key = value`` lines (``#`` starts a comment) into a dict of strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}: expected 'key = value'", lineno)
        k, v = (p.strip() for p in line.split("=", 1))
        if not k:
            raise ParseError(f"{source}: empty key", lineno)
        out[k] = v
    return out


def _ints(text):
    return tuple(int(x) for x in str(text).replace(",", " ").split())


def _strs(text):
    return tuple(x for x in str(text).replace(",", " ").split())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    # environment
    env: str = "gridworld"
    width: int = 5
    height: int = 5
    slip: float = 0.1
    goal_reward: float = 10.0
    step_cost: float = -3.0
    gamma: float = 0.95
    horizon: int = 0  # 0 = environment default
    start: str = "0"
    temperature: float = 1.0
    # training
    seed: int = 0
    algo: str = "edm"
    iterations: int = 10_000
    batch_size: int = 64
    lr: float = 1e-3
    rcal_lambda: float = 1e-2
    negative_phase: str = "auto"
    hidden: tuple = (64, 64)
    activation: str = "elu"
    log_every: int = 500
    checkpoint_every: int = 0
    # sgld / buffer
    sgld_step: float = 0.01
    sgld_noise: float = 0.01
    sgld_steps: int = 20
    sgld_clamp: bool = False
    buffer_size: int = 10_000
    reinit_prob: float = 0.05
    # data / evaluation
    n_traj: int = 1
    heldout_traj: int = 10
    reference_episodes: int = 1000
    eval_episodes: int = 300
    state_only_multiple: int = 0
    # sweep axes
    algos: tuple = ("edm", "bc", "rcal")
    traj_counts: tuple = (1, 3, 7, 10, 15)
    seeds: tuple = tuple(range(20))
    provenance: dict = field(default_factory=dict, compare=False)


_PARSERS = {int: int, float: float, str: str, bool: _bool}
_TUPLE_PARSERS = {"hidden": _ints, "traj_counts": _ints, "seeds": _ints, "algos": _strs}


def config_keys():
    return [f.name for f in fields(RunConfig) if f.name != "provenance"]


def _convert(key, value):
    if key in _TUPLE_PARSERS:
        return _TUPLE_PARSERS[key](value) if isinstance(value, str) else tuple(value)
    ftype = {f.name: f.type for f in fields(RunConfig)}[key]
    ftype = {"int": int, "float": float, "str": str, "bool": bool}.get(ftype, ftype)
    return _PARSERS[ftype](value) if isinstance(value, str) else ftype(value)


def merge_config(file_values=None, flag_values=None, file_source="<file>"):
    """Layer ``file_values`` then ``flag_values`` over the defaults; unknown keys raise."""
    known = set(config_keys())
    values, provenance = {}, {}
    for source, layer in ((file_source, file_values or {}), ("flag", flag_values or {})):
        unknown = set(layer) - known
        if unknown:
            raise ContractError(f"unknown config keys from {source}: {sorted(unknown)}")
        for k, v in layer.items():
            try:
                values[k] = _convert(k, v)
            except ValueError as exc:
                raise ContractError(f"bad value for {k} from {source}: {exc}") from None
            provenance[k] = source
    cfg = RunConfig(**values)
    cfg.provenance = provenance
    return cfg


def load_config(path, flag_values=None):
    with open(path) as fh:
        file_values = parse_kv(fh.read(), str(path))
    return merge_config(file_values, flag_values, str(path))


def env_spec(cfg):
    """The environment keys of ``cfg`` as an env-spec dict of strings."""
    return {"name": cfg.env, "width": str(cfg.width), "height": str(cfg.height), "slip": repr(cfg.slip),
            "goal_reward": repr(cfg.goal_reward), "step_cost": repr(cfg.step_cost),
            "gamma": repr(cfg.gamma), "horizon": str(cfg.horizon), "start": cfg.start,
            "seed": str(cfg.seed)}
