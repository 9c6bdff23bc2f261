"""Run configuration, seed derivation and atomic artifact output.

Config files are INI: a ``[run]`` section (seed, output, replicas) and one
section named after the subcommand.  Command-line ``--set key=value``
overrides win over the file; keys without a section prefix belong to the
subcommand section.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError


def derive_seed(master: int, replica: int, label: str) -> int:
    """64-bit seed for the stream (master, replica, label).

    The seed is the first 8 bytes, read big-endian, of
    sha256(f"{master}:{replica}:{label}".encode("utf-8")).
    """
    digest = hashlib.sha256(f"{int(master)}:{int(replica)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# Typed parameters


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


def _unit(x):
    return 0 <= x <= 1


def _open_unit(x):
    return 0 < x <= 1


def _all_positive(xs):
    return len(xs) > 0 and all(x > 0 for x in xs)


@dataclass(frozen=True)
class Param:
    kind: str
    default: object
    check: object = None
    doc: str = ""

    def parse(self, key: str, raw):
        if raw is None:
            value = None
        elif not isinstance(raw, str):
            value = raw
        else:
            text = raw.strip()
            try:
                if self.kind == "int":
                    value = int(text)
                elif self.kind == "float":
                    value = float(text)
                elif self.kind == "bool":
                    lowered = text.lower()
                    if lowered not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(text)
                    value = lowered in ("true", "1", "yes")
                elif self.kind == "optfloat":
                    value = float(text) if text else None
                elif self.kind == "floats":
                    value = tuple(float(v) for v in text.split(",") if v.strip())
                elif self.kind == "strs":
                    value = tuple(v.strip() for v in text.split(",") if v.strip())
                else:
                    value = text
            except ValueError:
                raise ConfigurationError(f"{key}: cannot read {raw!r} as {self.kind}") from None
        if self.check is not None and not self.check(value):
            raise ConfigurationError(f"{key}: value {value!r} is out of range")
        return value

    def emit(self, value) -> str:
        if self.kind in ("floats",):
            return ", ".join(repr(float(v)) for v in value)
        if self.kind == "strs":
            return ", ".join(value)
        if self.kind == "float":
            return repr(float(value))
        if self.kind == "optfloat":
            return "" if value is None else repr(float(value))
        if self.kind == "bool":
            return "true" if value else "false"
        return str(value)


RUN_SCHEMA = {
    "seed": Param("int", 0, lambda s: 0 <= s < 2**64, "master seed"),
    "output": Param("str", "results", None, "output directory"),
    "replicas": Param("int", 1, _positive, "independent replicas"),
}

SCHEMAS = {
    "solve-pekar": {
        "n": Param("int", 2000, lambda n: n >= 100, "radial grid intervals"),
        "r_max": Param("float", 20.0, _positive, "radial cutoff"),
        "tol": Param("float", 1e-8, _positive, "energy tolerance"),
        "mixing": Param("float", 0.5, _open_unit, "initial SCF damping"),
        "max_iter": Param("int", 500, _positive, "SCF iteration cap"),
    },
    "sample-pekar": {
        "profile": Param("str", "", None, "profile CSV; empty solves the Pekar problem"),
        "drift": Param("str", "pekar", lambda d: d in ("pekar", "ou", "zero"), "pekar | ou | zero"),
        "theta": Param("float", 1.0, _positive, "OU rate for drift = ou"),
        "dt": Param("float", 1e-3, lambda d: 0 < d <= 1e-2, "Euler-Maruyama step"),
        "n_chains": Param("int", 10_000, _positive, "chains per replica"),
        "n_record": Param("int", 100, _positive, "recorded states per chain"),
        "record_every": Param("int", 10, _positive, "steps between recorded states"),
        "burn_in": Param("int", 10_000, _non_negative, "discarded steps"),
        "lags": Param("floats", (0.5,), _all_positive, "increment lags, multiples of dt * record_every"),
    },
    "mcmc-polaron": {
        "epsilon": Param("float", 1.0, _positive, "memory rate eps"),
        "T": Param("float", 4.0, _positive, "half-horizon"),
        "eta": Param("float", 0.05, _non_negative, "Coulomb regularization"),
        "delta": Param("float", 0.0, _non_negative, "time step; 0 picks min(0.01, 1/(10 eps))"),
        "beta": Param("float", 1.0, _unit, "coupling multiplier"),
        "n_steps": Param("int", 10_000, lambda n: n >= 10_000, "sweeps after burn-in"),
        "burn_in": Param("int", -1, lambda n: n >= -1, "adaptive sweeps; -1 picks n_steps // 5"),
        "thin": Param("int", 10, _positive, "stored-path thinning"),
        "free_energy": Param("bool", False, None, "run thermodynamic integration"),
        "ti_points": Param("int", 8, lambda n: n >= 8, "beta grid size"),
    },
    "cluster-sim": {
        "alpha": Param("float", 1.0, _positive, "coupling"),
        "horizon": Param("float", 200.0, _positive, "path length in alpha units"),
        "dt": Param("float", 0.01, _positive, "path output step"),
        "n_clusters": Param("int", 20_000, lambda n: n >= 100, "importance-sampling ensemble"),
    },
    "solve-lambda": {
        "alpha": Param("float", 1.0, _positive, "coupling"),
        "lambda_lo": Param("optfloat", None, None, "bracket start; empty uses the rigorous lower bound"),
        "lambda_hi": Param("optfloat", None, None, "bracket end; empty searches upward"),
        "tol": Param("float", 1e-3, _positive, "bisection width"),
        "n_clusters": Param("int", 20_000, lambda n: n >= 100, "importance-sampling ensemble"),
    },
    "sigma2": {
        "alpha": Param("float", 1.0, _positive, "coupling"),
        "n_clusters": Param("int", 20_000, lambda n: n >= 100, "importance-sampling ensemble"),
    },
    "sweep": {
        "epsilons": Param("floats", (1.0, 0.5, 0.25, 0.125), _all_positive, "descending eps grid"),
        "backends": Param("strs", ("auto",), lambda bs: all(b in ("auto", "cluster", "mcmc") for b in bs),
                          "one per eps, or a single entry for all"),
        "lags": Param("floats", (0.5, 1.0, 2.0), _all_positive, "comparison lags"),
        "n_samples": Param("int", 1500, lambda n: n >= 1000, "increments per law"),
        "n_permutations": Param("int", 100, _positive, "permutations for the null band"),
        "n_clusters": Param("int", 20_000, lambda n: n >= 100, "cluster ensemble size"),
        "dt": Param("float", 0.05, _positive, "cluster path step in eps units"),
        "mcmc_steps": Param("int", 10_000, lambda n: n >= 10_000, "MCMC sweeps"),
        "mcmc_T": Param("float", 0.0, _non_negative, "MCMC half-horizon; 0 picks 4/eps"),
        "beta": Param("float", 1.0, _unit, "coupling multiplier for MCMC"),
        "free_energy": Param("bool", False, None, "thermodynamic integration for MCMC rows"),
        "profile": Param("str", "", None, "Pekar profile CSV; empty solves it"),
    },
    "report": {
        "input": Param("str", "", None, "directory of a sweep run"),
        "lag_check": Param("floats", (), None, "lags for the trend check; empty uses all"),
    },
}


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    seed: int = 0
    output: str = "results"
    replicas: int = 1

    def to_ini(self) -> str:
        """Effective config with every key, re-parseable to an equal RunConfig."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {k: RUN_SCHEMA[k].emit(getattr(self, k)) for k in RUN_SCHEMA}
        schema = SCHEMAS[self.subcommand]
        cp[self.subcommand] = {k: schema[k].emit(self.params[k]) for k in schema}
        buf = []
        for section in cp.sections():
            buf.append(f"[{section}]")
            buf.extend(f"{k} = {v}" for k, v in cp[section].items())
            buf.append("")
        return "\n".join(buf)

    def echo(self) -> dict:
        """Config without the output directory, so runs in different places compare equal."""
        return {"subcommand": self.subcommand, "seed": self.seed, "replicas": self.replicas,
                "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}}

    def input_hash(self) -> str:
        """sha256 of the canonical config echo."""
        text = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_config(subcommand: str, path: str | os.PathLike | None = None,
                 overrides: dict | None = None, text: str | None = None) -> RunConfig:
    """Build a validated RunConfig from an INI file (or text) and overrides.

    Override keys are ``key`` or ``section.key``.  Unknown sections or keys,
    unparsable values and out-of-range values raise ConfigurationError
    naming the key.
    """
    if subcommand not in SCHEMAS:
        raise ConfigurationError(f"unknown subcommand {subcommand!r}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        if text is not None:
            cp.read_string(text)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    raw = {"run": {}, subcommand: {}}
    for section in cp.sections():
        if section not in raw:
            raise ConfigurationError(f"unknown section [{section}] for {subcommand}")
        raw[section].update(cp[section].items())
    for key, value in (overrides or {}).items():
        section, _, name = key.rpartition(".")
        raw[section or subcommand][name] = value

    run = {}
    for key, value in raw["run"].items():
        if key not in RUN_SCHEMA:
            raise ConfigurationError(f"unknown key run.{key}")
    for key, param in RUN_SCHEMA.items():
        run[key] = param.parse(f"run.{key}", raw["run"].get(key, param.default))
    schema = SCHEMAS[subcommand]
    for key in raw[subcommand]:
        if key not in schema:
            raise ConfigurationError(f"unknown key {subcommand}.{key}")
    params = {key: param.parse(f"{subcommand}.{key}", raw[subcommand].get(key, param.default))
              for key, param in schema.items()}
    return RunConfig(subcommand, params, run["seed"], run["output"], run["replicas"])


# ---------------------------------------------------------------------------
# Artifacts


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_artifact(path: str | os.PathLike, data) -> dict:
    """Write text or bytes atomically; return its manifest entry."""
    path = Path(path)
    blob = data.encode("utf-8") if isinstance(data, str) else bytes(data)
    try:
        _atomic_write(path, blob)
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc
    return {"name": path.name, "bytes": len(blob), "sha256": hashlib.sha256(blob).hexdigest()}


@dataclass
class RunResult:
    config: RunConfig
    status: str = "ok"
    wall_clock: float = 0.0
    manifest: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def write_results(result: RunResult, artifacts: dict, directory: str | os.PathLike | None = None) -> list:
    """Write artifacts, then manifest.json, then run.json.

    ``artifacts`` maps file names to text or bytes.  The manifest lists
    name, size and sha256 of every artifact together with the config echo
    and input hash, and is itself deterministic; wall-clock times go to
    run.json only.
    """
    out = Path(directory if directory is not None else result.config.output)
    entries = [write_artifact(out / name, artifacts[name]) for name in sorted(artifacts)]
    manifest = {"config": result.config.echo(), "input_hash": result.config.input_hash(),
                "status": result.status, "files": entries}
    write_artifact(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_artifact(out / "config.ini", result.config.to_ini())
    run = {"status": result.status, "wall_clock_seconds": result.wall_clock, "timings": result.timings}
    write_artifact(out / "run.json", json.dumps(run, indent=2, sort_keys=True) + "\n")
    result.manifest = entries
    return entries


def dumps(payload) -> str:
    """JSON with sorted keys; floats keep round-trip precision."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
