"""Experiment runners behind the command-line subcommands.

Each ``cmd_*`` writes tidy CSV files plus a ``summary.json`` sidecar into the
configured output directory and returns the summary dict. Output bytes depend
only on the resolved config and seed, never on the thread count.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import ChainSpec, DenseOperator, PauliString, mask_sites, string_to_matrix
from .config import ExperimentConfig
from .decomposition import (
    operator_size_distribution,
    random_baseline,
    region_distribution,
    decompose,
)
from .dynamics import (
    build_xyz,
    eigendecompose,
    evolve_from_eigenbasis,
    evolve_states,
    random_hamiltonian,
)
from .otoc import ResponsePair, exact_otoc, global_haar_states, mc_otoc_variance
from .quench import (
    CLUSTERED_HAAR,
    _run_chunks,
    clustered_variance_exact,
    exact_variance,
    expectations,
    mc_region_variance,
    prep_error_local_states,
    product_expectation,
    recover_region_distribution,
    region_variances_all,
    sample_states,
    summarize,
)

BAND_LEVEL = 0.99
# spawn-key slot for shot-noise streams, disjoint from site indices
_SHOT_KEY = 0x5407


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def _meta(cfg: ExperimentConfig, command: str) -> list[str]:
    return [
        f"opsize {__version__}",
        f"command: {command}",
        f"config_sha256: {cfg.config_hash()}",
        f"seed: {cfg.seed}",
    ]


def write_csv(path: Path, columns: list[str], rows, meta: list[str]) -> Path:
    lines = [f"# {m}" for m in meta]
    lines.append(",".join(columns))
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_json(path: Path, data: dict, meta: list[str]) -> Path:
    payload = {"meta": meta, **data}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return path


def _hamiltonian(cfg: ExperimentConfig) -> DenseOperator:
    if cfg.hamiltonian == "random":
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0x4A11,)))
        return random_hamiltonian(cfg.chain, rng)
    return build_xyz(cfg.model)


def _heisenberg_series(op: DenseOperator, spectral, times):
    op_eig = spectral.to_eigenbasis(op)
    for t in times:
        yield t, evolve_from_eigenbasis(op_eig, spectral, t)


def cmd_size_dist(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Exact size distribution p_l(t) of the evolved observable and its random-operator baseline."""
    chain = cfg.chain
    chain.check_operator_cap()
    spectral = eigendecompose(_hamiltonian(cfg))
    obs = string_to_matrix(cfg.observable)
    baseline = random_baseline(chain)
    meta = _meta(cfg, "size-dist")

    long_rows, wide_rows, per_time = [], [], []
    for t, o_t in _heisenberg_series(obs, spectral, cfg.times):
        p = operator_size_distribution(o_t)
        long_rows.extend((t, l, p.p[l]) for l in range(chain.n_sites + 1))
        wide_rows.append((t, *p.p))
        per_time.append({
            "t": t,
            "mean_size": p.mean_size(),
            "tv_to_baseline": p.total_variation(baseline),
        })

    out = cfg.out
    write_csv(out / "sizes.csv", ["t", "l", "p_l"], long_rows, meta)
    write_csv(out / "baseline.csv", ["l", "p_l"], enumerate(baseline.p), meta)
    write_csv(out / "sizes_map.csv",
              ["t"] + [f"p_{l}" for l in range(chain.n_sites + 1)], wide_rows, meta)
    summary = {"observable": cfg.observable.label(), "times": per_time}
    write_json(out / "summary.json", summary, meta)
    return summary


def _exact_variance_for(cfg: ExperimentConfig, o_t: DenseOperator) -> float:
    d = cfg.chain.local_dim
    if cfg.ensemble.kind == CLUSTERED_HAAR:
        r = region_distribution(decompose(o_t))
        return clustered_variance_exact(r, cfg.ensemble.blocks, d)
    p = operator_size_distribution(o_t)
    return exact_variance(p, d, cfg.prep_error)


def _shot_means(evolved: np.ndarray, evals, evecs,
                cfg: ExperimentConfig, t_index: int) -> tuple[np.ndarray, np.ndarray]:
    k = cfg.shots.shots
    probs = np.abs(evolved @ evecs.conj()) ** 2
    means, errs = np.empty(len(probs)), np.empty(len(probs))
    for i, pr in enumerate(probs):
        seq = np.random.SeedSequence(cfg.seed, spawn_key=(i, _SHOT_KEY, t_index))
        rng = np.random.Generator(np.random.PCG64(seq))
        pr = np.clip(pr, 0, None)
        counts = rng.multinomial(k, pr / pr.sum())
        means[i] = np.dot(counts, evals) / k
        var = np.dot(counts, (evals - means[i]) ** 2) / (k - 1) if k > 1 else math.inf
        errs[i] = math.sqrt(var / k)
    return means, errs


def cmd_variance(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Sampled trajectories, their variance with bootstrap band, and the exact prediction."""
    chain = cfg.chain
    chain.check_operator_cap()
    spectral = eigendecompose(_hamiltonian(cfg))
    obs = string_to_matrix(cfg.observable)
    M = cfg.samples
    e = cfg.ensemble
    with_error = cfg.prep_error.epsilon > 0
    if with_error:
        if e.kind == CLUSTERED_HAAR:
            raise ValueError("preparation errors are modelled for product ensembles only")
        rhos = [prep_error_local_states(e, cfg.prep_error, i, cfg.prep_draws) for i in range(M)]
        states = None
    else:
        states = sample_states(e, M, threads=threads)
    if cfg.shots is not None:
        evals, evecs = np.linalg.eigh(obs.matrix)

    rows, per_time = [], []
    for ti, (t, o_t) in enumerate(_heisenberg_series(obs, spectral, cfg.times)):
        errs = np.zeros(M)
        if with_error:
            values = _run_chunks(
                lambda idx: np.array([product_expectation(o_t.matrix, rhos[i]) for i in idx]),
                M, threads,
            )
        elif cfg.shots is not None:
            evolved = evolve_states(states, spectral, t)
            values, errs = _shot_means(evolved, evals, evecs, cfg, ti)
        else:
            values = expectations(o_t.matrix, states)
        stats = summarize(values, t=t, seed=cfg.seed, n_boot=cfg.bootstrap, tag=ti)
        exact = _exact_variance_for(cfg, o_t)
        lo, hi = stats.band(BAND_LEVEL)
        rows.extend((t, f"sample:{i}", v, errs[i]) for i, v in enumerate(values))
        rows.append((t, "mc_variance", stats.variance, stats.stderr_of_variance))
        rows.append((t, "mc_band_lo", lo, float("nan")))
        rows.append((t, "mc_band_hi", hi, float("nan")))
        rows.append((t, "exact", exact, 0.0))
        per_time.append({
            "t": t, "exact": exact, "mc_variance": stats.variance,
            "stderr": stats.stderr_of_variance, "in_band": bool(lo <= exact <= hi),
        })

    meta = _meta(cfg, "variance")
    write_csv(cfg.out / "variance.csv", ["t", "kind", "value", "err"], rows, meta)
    coverage = sum(r["in_band"] for r in per_time) / len(per_time)
    summary = {
        "observable": cfg.observable.label(),
        "samples": M,
        "damping": cfg.prep_error.damping,
        "band_level": BAND_LEVEL,
        "band_coverage": coverage,
        "times": per_time,
    }
    write_json(cfg.out / "summary.json", summary, meta)
    return summary


def _submasks(R: int):
    Q = R
    while True:
        yield Q
        if Q == 0:
            return
        Q = (Q - 1) & R


def cmd_region(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Subset variances for each region and the inclusion-exclusion recovery of p_R."""
    chain = cfg.chain
    chain.check_operator_cap()
    d = chain.local_dim
    spectral = eigendecompose(_hamiltonian(cfg))
    obs = string_to_matrix(cfg.observable)
    masks = [sum(1 << n for n in r) for r in cfg.regions]

    var_rows, rec_rows, worst = [], [], 0.0
    for ti, (t, o_t) in enumerate(_heisenberg_series(obs, spectral, cfg.times)):
        r = region_distribution(decompose(o_t))
        exact_all = region_variances_all(r, d)
        mc_cache: dict[int, tuple[float, float]] = {}
        for R in masks:
            for Q in sorted(_submasks(R)):
                mc, err = float("nan"), float("nan")
                if cfg.region_sampled:
                    if Q not in mc_cache:
                        s = mc_region_variance(o_t, Q, cfg.ensemble, cfg.samples,
                                               t=t, n_boot=cfg.bootstrap, threads=threads)
                        mc_cache[Q] = (s.variance, s.stderr_of_variance)
                    mc, err = mc_cache[Q]
                var_rows.append((t, R, Q, exact_all[Q], mc, err))
            recovered = recover_region_distribution(
                {Q: exact_all[Q] for Q in _submasks(R) if Q}, R, d)
            rec_mc = float("nan")
            if cfg.region_sampled:
                rec_mc = recover_region_distribution(
                    {Q: mc_cache[Q][0] for Q in _submasks(R) if Q}, R, d)
            direct = r.p[R]
            worst = max(worst, abs(recovered - direct))
            rec_rows.append((t, R, recovered, rec_mc, direct, abs(recovered - direct)))

    meta = _meta(cfg, "region")
    write_csv(cfg.out / "region_variances.csv",
              ["t", "region_mask", "subset_mask", "exact", "mc", "mc_err"], var_rows, meta)
    write_csv(cfg.out / "recovered.csv",
              ["t", "region_mask", "recovered_exact", "recovered_mc", "direct", "abs_diff"],
              rec_rows, meta)
    summary = {
        "regions": [list(mask_sites(R)) for R in masks],
        "max_abs_recovery_error": worst,
    }
    write_json(cfg.out / "summary.json", summary, meta)
    return summary


def single_qubit_otoc_sanity() -> float:
    """H = 0, W = sigma_x, V = sigma_z on one qubit: exact value 4/3."""
    c = ChainSpec(1, 2)
    zero = DenseOperator(c, np.zeros((2, 2)))
    rp = ResponsePair(
        string_to_matrix(PauliString.from_label("X")),
        string_to_matrix(PauliString.from_label("Z")),
        eigendecompose(zero), 0.0, 1.0,
    )
    return exact_otoc(rp)


def cmd_otoc(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Exact squared commutator versus Haar-state response variance on a t2 grid."""
    chain = cfg.chain
    chain.check_operator_cap()
    spectral = eigendecompose(_hamiltonian(cfg))
    w = string_to_matrix(cfg.otoc_w)
    v = string_to_matrix(cfg.otoc_v)
    t1 = cfg.otoc_t1
    states = global_haar_states(chain, cfg.samples, cfg.seed, threads)
    rows, per_time = [], []
    for ti, t2 in enumerate(cfg.times):
        rp = ResponsePair(w, v, spectral, t1, t2)
        exact = exact_otoc(rp)
        s = mc_otoc_variance(rp, cfg.samples, cfg.seed, n_boot=cfg.bootstrap, states=states)
        rows.append((t1, t2, exact, s.variance, s.stderr_of_variance))
        per_time.append({"t2": t2, "exact": exact, "mc": s.variance,
                         "stderr": s.stderr_of_variance,
                         "within_4_stderr": bool(abs(s.variance - exact) <= 4 * s.stderr_of_variance)})
    meta = _meta(cfg, "otoc")
    write_csv(cfg.out / "otoc.csv", ["t1", "t2", "exact", "mc", "err"], rows, meta)
    summary = {
        "w": cfg.otoc_w.label(), "v": cfg.otoc_v.label(), "t1": t1,
        "single_qubit_sanity": single_qubit_otoc_sanity(),
        "times": per_time,
    }
    write_json(cfg.out / "summary.json", summary, meta)
    return summary
