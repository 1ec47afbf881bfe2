"""Experiment configuration: TOML files, named presets and flag overrides.

Schema (every key optional; unknown keys are rejected)::

    preset = "fig2-chaotic"      # experiment preset applied before this file
    seed = 1234
    samples = 100                # initial states per time point
    bootstrap = 1000             # bootstrap resamples for variance errors

    [model]                      # open XYZ chain, d = 2
    n_sites = 10
    jx = 0.0  jy = 0.0  jz = 1.0
    hx = 1.05 hy = 0.0  hz = 0.5
    hamiltonian = "xyz"          # or "random" (GUE, seeded) for the otoc command

    [observable]
    string = "X4"                # space separated letter+site tokens, 0-based sites

    [times]                      # either `values` or start/stop/num (inclusive)
    start = 0.0  stop = 10.0  num = 41

    [ensemble]
    kind = "haar_product"        # finite_product | clustered_haar
    design = "pauli6"            # finite_product site ensemble
    blocks = [[0, 1], [2, 3]]    # clustered_haar partition

    [prep_error]
    epsilon = 0.0
    weighting = "norm"           # or "plain"
    draws = 1000                 # perturbed copies averaged per site

    [shots]
    k = 0                        # 0 = exact expectation values

    [region]
    regions = [[4], [3, 4]]
    sampled = false

    [otoc]
    w = "X0"
    v = "Z3"
    t1 = 0.0

    [output]
    dir = "out"
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .algebra import ChainSpec, PauliString, PAULI_LETTERS
from .dynamics import PRESETS as MODEL_PRESETS, SpinChainParams
from .quench import (
    CLUSTERED_HAAR,
    DEFAULT_BOOTSTRAP,
    DEFAULT_PREP_DRAWS,
    FINITE_PRODUCT,
    HAAR_PRODUCT,
    EnsembleSpec,
    PrepErrorModel,
    ShotPlan,
    pauli_six_design,
)

REGION_GUARD = 12


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


DEFAULTS: dict = {
    "preset": None,
    "seed": 0,
    "samples": 100,
    "bootstrap": DEFAULT_BOOTSTRAP,
    "model": {
        "n_sites": 8, "jx": 0.0, "jy": 0.0, "jz": 1.0,
        "hx": 1.05, "hy": 0.0, "hz": 0.5, "hamiltonian": "xyz",
    },
    "observable": {"string": None},
    "times": {"values": None, "start": 0.0, "stop": 10.0, "num": 41},
    "ensemble": {"kind": HAAR_PRODUCT, "design": "pauli6", "blocks": None},
    "prep_error": {"epsilon": 0.0, "weighting": "norm", "draws": DEFAULT_PREP_DRAWS},
    "shots": {"k": 0},
    "region": {"regions": None, "sampled": False},
    "otoc": {"w": None, "v": None, "t1": 0.0},
    "output": {"dir": "out"},
}

_BLANK_FIELDS = {k: 0.0 for k in ("jx", "jy", "jz", "hx", "hy", "hz")}


def _model_preset(name: str, n_sites: int, stop: float, num: int, samples: int = 100) -> dict:
    return {
        "model": {**_BLANK_FIELDS, **MODEL_PRESETS[name], "n_sites": n_sites},
        "times": {"start": 0.0, "stop": stop, "num": num},
        "samples": samples,
    }


# Toolkit-chosen parameters, documented in the README.
PRESETS: dict[str, dict] = {
    "fig2-chaotic": _model_preset("fig2-chaotic", 10, 10.0, 41),
    "fig2-integrable": _model_preset("fig2-integrable", 10, 10.0, 41),
    "fig5-xxz": _model_preset("fig5-xxz", 10, 10.0, 50),
    "fig5-xxz-chaotic": _model_preset("fig5-xxz-chaotic", 10, 10.0, 50),
    "fig6-ising": _model_preset("fig6-ising", 10, 10.0, 50),
    "fig6-ising-chaotic": _model_preset("fig6-ising-chaotic", 10, 10.0, 50),
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a table")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_pauli(spec: str, chain: ChainSpec) -> PauliString:
    """``"X4 Z5"`` -> sigma_x on site 4 times sigma_z on site 5 (qubits, 0-based)."""
    letters = [0] * chain.n_sites
    tokens = spec.replace(",", " ").split()
    if not tokens:
        raise ConfigError("empty Pauli string")
    for tok in tokens:
        letter, site = tok[0].upper(), tok[1:]
        if letter not in PAULI_LETTERS or not site.isdigit():
            raise ConfigError(f"bad Pauli token {tok!r}; expected e.g. 'X4'")
        n = int(site)
        if n >= chain.n_sites:
            raise ConfigError(f"site {n} outside a chain of {chain.n_sites} sites")
        if letters[n]:
            raise ConfigError(f"site {n} appears twice in {spec!r}")
        letters[n] = PAULI_LETTERS.index(letter)
    return PauliString(chain, tuple(letters))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    raw: dict
    model: SpinChainParams
    hamiltonian: str
    observable: PauliString
    times: tuple[float, ...]
    ensemble: EnsembleSpec
    samples: int
    bootstrap: int
    prep_error: PrepErrorModel
    prep_draws: int
    shots: ShotPlan | None
    regions: tuple[tuple[int, ...], ...]
    region_sampled: bool
    otoc_w: PauliString
    otoc_v: PauliString
    otoc_t1: float
    out: Path
    seed: int

    @property
    def chain(self) -> ChainSpec:
        return self.model.chain

    def config_hash(self) -> str:
        """SHA-256 of the resolved config without the output directory."""
        hashed = {k: v for k, v in self.raw.items() if k != "output"}
        blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _times(t: dict) -> tuple[float, ...]:
    if t["values"] is not None:
        times = tuple(float(x) for x in t["values"])
    else:
        num = int(t["num"])
        if num < 1:
            raise ConfigError("times.num must be >= 1")
        if num == 1:
            times = (float(t["start"]),)
        else:
            step = (float(t["stop"]) - float(t["start"])) / (num - 1)
            times = tuple(float(t["start"]) + i * step for i in range(num))
    if not times or not all(math.isfinite(x) for x in times):
        raise ConfigError("times must be a nonempty list of finite numbers")
    return times


def resolve(raw: dict) -> ExperimentConfig:
    m = raw["model"]
    try:
        chain = ChainSpec(int(m["n_sites"]), 2)
        model = SpinChainParams(chain, **{k: m[k] for k in _BLANK_FIELDS})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc
    if m["hamiltonian"] not in ("xyz", "random"):
        raise ConfigError("model.hamiltonian must be 'xyz' or 'random'")
    seed = int(raw["seed"])
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    obs = raw["observable"]["string"] or f"X{(chain.n_sites - 1) // 2}"
    observable = parse_pauli(obs, chain)

    ens = raw["ensemble"]
    try:
        if ens["kind"] == HAAR_PRODUCT:
            ensemble = EnsembleSpec.haar_product(chain, seed)
        elif ens["kind"] == FINITE_PRODUCT:
            if ens["design"] != "pauli6":
                raise ConfigError(f"unknown finite design {ens['design']!r}")
            ensemble = EnsembleSpec.finite_product(chain, pauli_six_design(), seed)
        elif ens["kind"] == CLUSTERED_HAAR:
            if ens["blocks"] is None:
                ensemble = EnsembleSpec.paired_blocks(chain, seed)
            else:
                ensemble = EnsembleSpec.clustered_haar(chain, ens["blocks"], seed)
        else:
            raise ConfigError(f"unknown ensemble kind {ens['kind']!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    pe = raw["prep_error"]
    try:
        prep = PrepErrorModel(float(pe["epsilon"]), pe["weighting"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    k = int(raw["shots"]["k"])
    if k < 0:
        raise ConfigError("shots.k must be >= 0")
    shots = ShotPlan(k, seed) if k else None
    if shots and prep.epsilon > 0:
        raise ConfigError("shot noise and preparation error cannot be combined")

    regions = raw["region"]["regions"]
    if regions is None:
        regions = [[int(observable_site)] for observable_site in _support_sites(observable)]
    regions = tuple(tuple(sorted(int(n) for n in r)) for r in regions)
    for r in regions:
        if len(r) > REGION_GUARD:
            raise ConfigError(
                f"region of {len(r)} sites exceeds the subset-enumeration guard of {REGION_GUARD}"
            )
        if any(n < 0 or n >= chain.n_sites for n in r):
            raise ConfigError(f"region {list(r)} outside the chain")

    o = raw["otoc"]
    w = parse_pauli(o["w"] or "X0", chain)
    v = parse_pauli(o["v"] or f"Z{chain.n_sites - 1}", chain)

    samples = int(raw["samples"])
    if samples < 2:
        raise ConfigError("samples must be >= 2")
    return ExperimentConfig(
        raw=raw,
        model=model,
        hamiltonian=m["hamiltonian"],
        observable=observable,
        times=_times(raw["times"]),
        ensemble=ensemble,
        samples=samples,
        bootstrap=int(raw["bootstrap"]),
        prep_error=prep,
        prep_draws=int(pe["draws"]),
        shots=shots,
        regions=regions,
        region_sampled=bool(raw["region"]["sampled"]),
        otoc_w=w,
        otoc_v=v,
        otoc_t1=float(o["t1"]),
        out=Path(raw["output"]["dir"]),
        seed=seed,
    )


def _support_sites(s: PauliString) -> list[int]:
    return [n for n, a in enumerate(s.letters) if a]


def load_config(path: str | Path | None = None, *, preset: str | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then preset, then file, then flag overrides."""
    file_data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                file_data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    name = preset or file_data.get("preset")
    raw = copy.deepcopy(DEFAULTS)
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        raw = _merge(raw, PRESETS[name])
        raw["preset"] = name
    raw = _merge(raw, file_data)
    if preset is not None:
        raw["preset"] = preset
    if overrides:
        raw = _merge(raw, overrides)
    return resolve(raw)
