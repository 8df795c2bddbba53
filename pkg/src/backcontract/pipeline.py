"""The five experiment stages. Each reads its inputs from and writes its outputs to ``cfg.out_dir``."""

from __future__ import annotations

import dataclasses
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np
import scipy

from . import __version__, sampling
from .backward import build_tree, cx_from_N, fit_backward, lemma2_inclusion, sigma_profile
from .chains import concatenation_check, first_entry_profile, sample_first_entries, tower_mass
from .config import ExperimentConfig
from .errors import ConfigurationError, HypothesisViolation, TreeTruncated
from .io import read_csv, read_json, write_csv, write_json
from .profile import (CONVERGENT, TailClass, TailProfile, classify_tail, estimate_tails,
                      lp_diagnostic)
from .rates import (default_gamma, derive_b, domination_bound, gamma_bound, least_n0, make_rate,
                    rate_from_dict, theorem_series)

log = logging.getLogger(__name__)

BOUND_TOL = 1e-12


# --- profile ----------------------------------------------------------------

def cmd_profile(cfg: ExperimentConfig, threads: int = 1) -> dict:
    system = cfg.map_system
    a = make_rate("exp", c=cfg.lam)
    profile = estimate_tails(system, a, cfg.orbit_horizon, cfg.tail_samples, cfg.seed, threads)
    return write_profile(cfg, profile)


def write_profile(cfg: ExperimentConfig, profile: TailProfile) -> dict:
    """Classify ``profile`` and write ``tails.csv`` and ``tailclass.json`` (also used for planted laws)."""
    system = cfg.map_system
    cls = classify_tail(profile)
    lp = {format(p, "g"): lp_diagnostic(profile, p).describe() for p in cfg.lp_grid}
    write_csv(cfg.out_dir / "tails.csv", ["n", "mu_hat", "gamma_tail", "stderr"],
              zip(range(1, profile.horizon + 1), profile.mu_hat, profile.gamma_tail, profile.stderr))
    out = {**cls.describe(), "seed": cfg.seed, "sample_size": profile.sample_size,
           "horizon": profile.horizon, "censored_fraction": profile.censored_fraction,
           "lambda": cfg.lam, "system": system.params(), "lp_diagnostics": lp,
           "non_increasing": bool(np.all(np.diff(profile.gamma_tail) <= 0))}
    if cls.regime == "UNDETERMINED":
        out["warning"] = "tail classification UNDETERMINED: too few non-empty tail levels"
        log.warning(out["warning"])
    write_json(cfg.out_dir / "tailclass.json", out)
    return out


def load_profile(cfg: ExperimentConfig) -> tuple[TailProfile, TailClass, dict]:
    tails = read_csv(cfg.out_dir / "tails.csv")
    meta = read_json(cfg.out_dir / "tailclass.json")
    profile = TailProfile(horizon=int(meta["horizon"]),
                          mu_hat=np.array(tails["mu_hat"], dtype=float),
                          gamma_tail=np.array(tails["gamma_tail"], dtype=float),
                          censored_fraction=float(meta["censored_fraction"]),
                          sample_size=int(meta["sample_size"]), seed=meta.get("seed"),
                          stderr=np.array(tails["stderr"], dtype=float))

    def num(key):
        v = meta.get(key)
        return float("nan") if v is None else float(v)

    cls = TailClass(meta["regime"], fit_quality=num("fit_quality"), log_c=num("log_c"),
                    alpha=num("alpha"), tau=num("tau"),
                    window=tuple(meta["fit_window"]) if meta.get("fit_window") else None)
    return profile, cls, meta


# --- rates ------------------------------------------------------------------

def cmd_rates(cfg: ExperimentConfig) -> dict:
    profile, cls, meta = load_profile(cfg)
    a = make_rate("exp", c=cfg.lam)
    if cfg.rate_override is not None:
        b = rate_from_dict(cfg.rate_override)
        gamma = cfg.gamma if cfg.gamma is not None else (
            default_gamma(cls) if cls.regime == "POLYNOMIAL" and cls.alpha > 2 else 0.5)
        n0 = None
        if b.max_index is None or b.max_index >= profile.horizon:
            n0 = least_n0(b, domination_bound(a, profile, gamma))
        rate = {**b.describe(), "gamma": gamma, "n0": n0, "slack": cfg.slack,
                "horizon": profile.horizon, "source": "override"}
    else:
        derived = derive_b(a, profile, cls, gamma=cfg.gamma, slack=cfg.slack)
        b, gamma = derived.b, derived.gamma
        rate = {**derived.describe(), "source": "derived", "tail_regime": cls.regime}

    series = theorem_series(profile, gamma)
    consistency = {}
    for p, rep in meta.get("lp_diagnostics", {}).items():
        p = float(p)
        if p > 3 and rep["verdict"] == CONVERGENT and gamma < gamma_bound(p):
            consistency[format(p, "g")] = series.verdict == CONVERGENT
    out = {"a": a.describe() | {"lambda": cfg.lam}, "b": rate, "gamma": gamma,
           "n0": rate.get("n0"), "slack": cfg.slack, "certification_bound": b.cert_bound,
           "certified_submultiplicative": b.certified_submultiplicative,
           "theorem_series": series.describe(),
           "lp_verdicts": {p: r["verdict"] for p, r in meta.get("lp_diagnostics", {}).items()},
           "series_consistency": consistency}
    write_json(cfg.out_dir / "rates.json", out)
    return out


def load_rate(cfg: ExperimentConfig):
    rates = read_json(cfg.out_dir / "rates.json")
    b = rate_from_dict(rates["b"])
    if not b.certified_submultiplicative:
        raise HypothesisViolation("backward rate is not certified submultiplicative")
    return b, rates


# --- backward ---------------------------------------------------------------

def fitted_rate(b, beta: float):
    if beta <= 0:
        return None
    if b.family == "stretched":
        return make_rate("stretched", c=beta, tau=b.tau)
    if b.family == "poly":
        return make_rate("poly", c=beta)
    return make_rate("exp", c=beta)


def backward_root(cfg: ExperimentConfig, b, index: int, root: np.ndarray) -> tuple[dict, list]:
    system = cfg.map_system
    truncated = None
    try:
        tree = build_tree(system, root, cfg.tree_depth, cfg.node_cap)
    except TreeTruncated as exc:
        tree, truncated = exc.tree, exc.completed_level
    prof = sigma_profile(tree)
    sigma = np.array([s for _, s, _ in prof])
    rows = [(n, cnt, s, ".".join(map(str, path)))
            for (n, s, path), cnt in zip(prof, tree.node_counts)]
    res = {"index": index, "root": root.tolist(), "depth": tree.depth, "truncated_at": truncated,
           "node_counts": tree.node_counts,
           # pre-images die out before n_max: the bound holds vacuously beyond the last level
           "vacuous": truncated is None and tree.depth < cfg.tree_depth}
    window = (cfg.fit_start, tree.depth)
    if tree.depth - cfg.fit_start + 1 < 5:
        res["fit"] = None
        res["note"] = "fewer than 5 levels in the fit window"
        return res, rows
    fit = fit_backward(sigma, b, window)
    l2 = lemma2_inclusion(system, tree, b, tree.depth + cfg.forward_extra)
    c_from_n = cx_from_N(l2.n_hat, system) if l2.n_hat is not None else None
    fit = dataclasses.replace(fit, n_hat=l2.n_hat, c_from_n=c_from_n)
    res["fit"] = fit.describe()
    bb = fitted_rate(b, fit.beta)
    if bb is not None:
        fb = fit_backward(sigma, bb, window)
        n = np.arange(window[0], window[1] + 1)
        holds = bool(np.all(sigma[window[0]:window[1] + 1] >= fb.log_cx + bb.log_at(n) - BOUND_TOL))
        res["fitted_rate_bound"] = {"beta_hat": fit.beta, "log_cx": fb.log_cx, "holds": holds}
    else:
        res["fitted_rate_bound"] = {"beta_hat": fit.beta, "log_cx": None, "holds": False}
    res["lemma2"] = {"N_hat": l2.n_hat, "first_entry_excess": l2.first_entry_excess,
                     "node_total": l2.node_total, "censored_nodes": len(l2.violations),
                     "censored_fraction": l2.censored_fraction,
                     "inclusion_failures": len(l2.inclusion_failures),
                     "bound_failures": len(l2.bound_failures),
                     "forward_horizon": tree.depth + cfg.forward_extra}
    if system.kind == "doubling":
        n = np.arange(sigma.size)
        res["doubling_max_deviation"] = float(np.max(np.abs(sigma - n * system.sup_log_jac)))
    return res, rows


def cmd_backward(cfg: ExperimentConfig, threads: int = 1) -> dict:
    system = cfg.map_system
    b, rates = load_rate(cfg)
    if system.branch_factor ** cfg.tree_depth > cfg.node_cap:
        raise ConfigurationError(
            f"{system.branch_factor}^{cfg.tree_depth} pre-images exceed node_cap={cfg.node_cap}")
    roots = system.from_uniform(sampling.uniforms(cfg.seed, sampling.STREAM_ROOTS, 0, cfg.roots, system.dim))
    job = lambda i: backward_root(cfg, b, i, roots[i])  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(cfg.roots)))
    else:
        results = [job(i) for i in range(cfg.roots)]

    per_root = []
    for res, rows in results:
        d = cfg.out_dir / "backward" / f"root_{res['index']:03d}"
        write_csv(d / "sigma.csv", ["n", "node_count", "sigma_log", "argmin_branch_id"], rows)
        write_json(d / "backward_fit.json", res)
        per_root.append(res)

    fitted = [r for r in per_root if r.get("fit")]
    assessed = [r for r in per_root if not r["vacuous"]]
    ok = [r for r in assessed if r.get("fit")
          and r["fit"]["beta"] >= cfg.beta_target and r["fitted_rate_bound"]["holds"]]
    n_hats = [r["lemma2"]["N_hat"] for r in fitted if r["lemma2"]["N_hat"] is not None]
    hist = {str(k): n_hats.count(k) for k in sorted(set(n_hats))}
    nodes = sum(r["lemma2"]["node_total"] for r in fitted)
    cens = sum(r["lemma2"]["censored_nodes"] for r in fitted)
    summary = {
        "rate": rates["b"], "roots": cfg.roots, "fitted_roots": len(fitted), "beta_target": cfg.beta_target,
        "vacuous_roots": cfg.roots - len(assessed),
        "fraction_beta_ok": len(ok) / len(assessed) if assessed else 1.0,
        "fraction_unreliable": sum(not r["fit"]["reliable"] for r in fitted) / cfg.roots,
        "N_hat_histogram": hist, "N_hat_max": max(n_hats) if n_hats else None,
        "censored_node_fraction": cens / nodes if nodes else 0.0,
        "max_root_censored_fraction": max((r["lemma2"]["censored_fraction"] for r in fitted), default=0.0),
        "inclusion_failures": sum(r["lemma2"]["inclusion_failures"] for r in fitted),
        "bound_failures": sum(r["lemma2"]["bound_failures"] for r in fitted),
        "truncated_roots": sum(r["truncated_at"] is not None for r in per_root),
        "tree_depth": cfg.tree_depth, "fit_window_start": cfg.fit_start,
        "per_root": [{"index": r["index"], "beta": r["fit"]["beta"] if r.get("fit") else None,
                      "log_cx": r["fit"]["log_cx"] if r.get("fit") else None,
                      "N_hat": r["lemma2"]["N_hat"] if r.get("fit") else None} for r in per_root],
    }
    if system.kind == "doubling":
        summary["doubling_max_deviation"] = max(r.get("doubling_max_deviation", 0.0) for r in per_root)
    write_json(cfg.out_dir / "backward_fit.json", summary)
    return summary


# --- chains -----------------------------------------------------------------

def cmd_chains(cfg: ExperimentConfig, threads: int = 1) -> dict:
    system = cfg.map_system
    b, rates = load_rate(cfg)
    H = cfg.orbit_horizon
    violations = concatenation_check(system, b, cfg.triples, H, cfg.seed, threads)
    u = sample_first_entries(system, b, H, cfg.chain_samples, cfg.seed, threads)
    write_csv(cfg.out_dir / "chains.csv", ["sample_index", "u_value", "chain_length", "censored"],
              ((i, int(v), int(v), int(v == 0)) for i, v in enumerate(u)))
    prof = first_entry_profile(u, H)
    tower = tower_mass(b, prof.mu_hat, prof.censored_fraction)
    out = {"rate": rates["b"], "horizon": H,
           "concatenation": {"triples": cfg.triples, "violations": len(violations), "tolerance": 1e-8,
                             "examples": [v.__dict__ for v in violations[:20]]},
           "u_mass": prof.mu_hat, "censored_fraction": prof.censored_fraction,
           "terms": tower.terms, "partial_sums": tower.partial_sums, **tower.describe()}
    write_json(cfg.out_dir / "tower.json", out)
    return out


# --- report -----------------------------------------------------------------

def cmd_report(cfg: ExperimentConfig) -> dict:
    d = cfg.out_dir
    tails = read_json(d / "tailclass.json")
    rates = read_json(d / "rates.json")
    back = read_json(d / "backward_fit.json")
    tower = read_json(d / "tower.json")

    checks = [
        ("tails_non_increasing", "estimated Leb(Gamma_n) is non-increasing", tails["non_increasing"]),
        ("rate_certified", "backward rate certified submultiplicative", rates["certified_submultiplicative"]),
        ("concatenation", "zero concatenation violations at tolerance 1e-8",
         tower["concatenation"]["violations"] == 0),
        ("backward_bound", f"beta_hat >= {back['beta_target']} with a uniform bound on >= 95% of roots",
         back["fraction_beta_ok"] >= 0.95),
        ("lemma2_inclusion", "every non-censored node lies in U_n..U_(n+N_hat)", back["inclusion_failures"] == 0),
        ("lemma2_censoring", "censored node fraction below 1%", back["censored_node_fraction"] < 0.01),
        ("final_bound", "back_log_jac >= log b_n + log K^-N_hat at every node", back["bound_failures"] == 0),
        ("series_consistency", "L^p convergence implies convergence of the gamma-series",
         all(rates["series_consistency"].values())),
    ]
    if cfg.map_system.kind == "doubling":
        checks.append(("doubling_exact", "sigma_n = n log d to 1e-9", back["doubling_max_deviation"] <= 1e-9))
    report = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "provenance": {"version": __version__, "python": platform.python_version(),
                       "numpy": np.__version__, "scipy": scipy.__version__, "config": cfg.resolved()},
        "verdicts": {"tail_regime": tails["regime"], "tail_alpha": tails.get("alpha"),
                     "tail_tau": tails.get("tau"),
                     "rate": rates["b"], "theorem_series": rates["theorem_series"]["verdict"],
                     "tower": tower["verdict"],
                     "fraction_beta_ok": back["fraction_beta_ok"], "vacuous_roots": back["vacuous_roots"],
                     "N_hat_max": back["N_hat_max"],
                     "censored_node_fraction": back["censored_node_fraction"]},
        "checks": [{"id": i, "description": desc, "passed": bool(ok)} for i, desc, ok in checks],
    }
    report["all_passed"] = all(c["passed"] for c in report["checks"])
    write_json(d / "report.json", report)
    return report


STAGES = {"profile": cmd_profile, "rates": cmd_rates, "backward": cmd_backward,
          "chains": cmd_chains, "report": cmd_report}
THREADED = {"profile", "backward", "chains"}


def run_stage(name: str, cfg: ExperimentConfig, threads: int = 1) -> dict:
    fn = STAGES[name]
    return fn(cfg, threads) if name in THREADED else fn(cfg)

