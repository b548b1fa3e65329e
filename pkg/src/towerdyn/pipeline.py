"""Stage orchestration and report emission.

Stages run in dependency order; each writes CSV artifacts into the output
directory and contributes fields to ``summary.json``.  CSV artifacts depend
only on the configuration and seed, so repeated runs reproduce them byte for
byte.  The summary also records the wall-clock runtime.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .config import STAGES, RunConfig
from .critical import (CriticalOrbitTable, DecayClass, build_tables, check_summability,
                       classify_dn, classify_growth, closest_returns, fibonacci_map,
                       fibonacci_numbers, fibonacci_scaling_check, find_fibonacci_parameter)
from .errors import AllCensored, DegenerateSequence, KacDivergence, Renormalizable
from .full_return import (Omega0Choice, ReturnMapQ, build_return_map, choose_omega0,
                          renormalization_test, tail_of_R)
from .inducing.binding import build_level_sets, estimate_outside_expansion, fix_delta
from .inducing.construction import (InducingContext, LargeScalePartition, calibrate_epsilon,
                                    core_interval, delta_net, induce_to_large_scale,
                                    tail_of_phat)
from .maps import MapSpec, make_map
from .tower import (CLTResult, MeasureEstimate, Observable, build_tower, clt_test, correlation,
                    fit_correlation_decay, invariant_density)

log = logging.getLogger(__name__)

SUMMARY_KEYS = ("map", "params", "ell", "star_verdict", "bn_class", "dn_class", "phat_tail",
                "R_tail", "corr_class", "beta", "alpha", "sigma", "ks", "censored_mass",
                "runtime_sec")
DEPENDENCIES = {"analyze": (), "induce": ("analyze",), "returnmap": ("analyze",),
                "tower": ("analyze", "returnmap"), "corr": (), "clt": ()}


def write_csv(path: Path, header: tuple[str, ...], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def class_record(dc: DecayClass | None, error: str = "") -> dict | None:
    """JSON form of a decay class; ``None`` when absent and no reason is known."""
    if dc is None:
        return {"class": "inconclusive", "reason": error} if error else None
    out = {"class": dc.kind, "r2": dc.fit_quality, "window": list(dc.window)}
    out.update({k: float(v) for k, v in dc.params.items()})
    if dc.label:
        out["label"] = dc.label
    return out


@dataclass
class Pipeline:
    """Runs stages for one configuration and collects the summary."""

    cfg: RunConfig
    summary: dict = field(default_factory=dict)
    done: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    fib_parameter: str | None = None

    def __post_init__(self) -> None:
        self.summary = {k: None for k in SUMMARY_KEYS}
        self.summary.update({"map": self.cfg.family, "params": list(self.cfg.params),
                             "ell": self.cfg.ell, "seed": self.cfg.seed, "stages": []})
        self._t0 = time.perf_counter()

    @property
    def out(self) -> Path:
        p = self.cfg.out_dir
        p.mkdir(parents=True, exist_ok=True)
        return p

    def _csv(self, name: str, header, rows) -> str:
        write_csv(self.out / name, header, rows)
        self.artifacts.append(name)
        return name

    # -- shared objects --------------------------------------------------------

    @cached_property
    def map(self) -> MapSpec:
        if self.cfg.fibonacci:
            self.fibfind()
            return fibonacci_map(self.cfg.family, self.fib_parameter)
        return make_map(self.cfg.family, self.cfg.params, critical_order=self.cfg.ell)

    @cached_property
    def tables(self) -> list[CriticalOrbitTable]:
        return build_tables(self.map, self.cfg.N, self.cfg.gamma)

    @cached_property
    def context(self) -> InducingContext:
        m = self.map
        for i in range(len(m.critical_points)):
            v = renormalization_test(m, c_index=i)
            if v.renormalizable:
                raise Renormalizable(
                    f"cycle of intervals of period {v.period} at {v.interval}: "
                    "renormalizable or periodic attractor")
        bcfg = fix_delta(m, self.tables, P_max=self.cfg.P_max)
        levels = build_level_sets(m, bcfg, self.tables[0].b)
        ctx = InducingContext(m, bcfg, levels)
        if self.cfg.epsilon is not None:
            return ctx.with_eps(self.cfg.epsilon)
        return ctx

    @cached_property
    def omega0(self) -> Omega0Choice:
        return choose_omega0(self.context)

    @cached_property
    def Q(self) -> ReturnMapQ:
        return build_return_map(self.context, self.omega0, self.cfg.n_max_return,
                                samples=self.cfg.samples_return)

    @cached_property
    def mu(self) -> MeasureEstimate:
        mu = invariant_density(self.map, n_samples=self.cfg.density_samples, seed=self.cfg.seed)
        self._csv("density.csv", ("bin_lo", "bin_hi", "density"), mu.csv_rows())
        self.summary["density_invariance_defect"] = mu.invariance_defect
        return mu

    # -- stages ----------------------------------------------------------------

    def fibfind(self) -> str:
        """Locate the Fibonacci parameter and record its closest returns."""
        if self.fib_parameter is not None:
            return self.fib_parameter
        a = find_fibonacci_parameter(self.cfg.family, self.cfg.fib_bracket, self.cfg.fib_k)
        m = fibonacci_map(self.cfg.family, a)
        self.fib_parameter = m.hp_params[0]
        S = fibonacci_numbers(self.cfg.fib_k)
        recs = closest_returns(m, m.critical_points[0], S[-1])
        self._csv("fib_returns.csv", ("k", "time", "distance"),
                  [(k + 1, t, float(d)) for k, (t, d) in enumerate(recs)])
        fib = {"parameter": self.fib_parameter,
               "returns_fibonacci": [t for t, _ in recs[: self.cfg.fib_k]] == S}
        try:
            sc = fibonacci_scaling_check(m, R=self.cfg.fib_k)
            fib.update(beta_prime=sc.beta_prime, scaling_r2=sc.r2)
        except (ValueError, DegenerateSequence) as exc:
            fib["scaling_error"] = str(exc)
        self.summary["fibonacci"] = fib
        self.summary["params"] = [float(m.params[0])]
        return self.fib_parameter

    def analyze(self) -> None:
        m = self.map
        reports = []
        for i, t in enumerate(self.tables):
            self._csv(f"critical_c{i}.csv", ("n", "logD", "gamma", "b", "d", "dist_to_C"),
                      t.rows())
            rep = check_summability(t)
            bn, bn_err = _try_class(lambda: classify_growth(t.b, "b-sequence"))
            dn, dn_err = _try_class(lambda: classify_dn(t))
            reports.append((rep, bn, bn_err, dn, dn_err))
        rep, bn, bn_err, dn, dn_err = reports[0]
        self.summary.update(star_verdict=rep.star, starstar_verdict=rep.starstar,
                            bn_class=class_record(bn, bn_err), dn_class=class_record(dn, dn_err),
                            critical_points=[float(c) for c in m.critical_points])

    def induce(self) -> None:
        ctx = self.context
        ch = self.omega0
        net = delta_net(core_interval(self.map), ctx.delta2(ch.length))
        if self.cfg.epsilon is None:
            cal = calibrate_epsilon(ctx, net[:4], self.cfg.n_max_induce, samples=1024, levels=0)
            ctx = cal.ctx
            self.summary["measured_rho"] = cal.rho
        self.__dict__["context"] = ctx
        exp = estimate_outside_expansion(self.map, ctx.cfg)
        parts: list[LargeScalePartition] = [
            induce_to_large_scale(ctx, J, self.cfg.n_max_induce, samples=self.cfg.samples_induce,
                                  omega0_len=ch.length, geometry=(k == 0))
            for k, J in enumerate(net)]
        self._csv("partition.csv", ("piece_lo", "piece_hi", "p_hat", "s", "itinerary"),
                  parts[0].csv_rows())
        tail = tail_of_phat(parts)
        self._csv("phat_tail.csv", ("n", "count", "mass"), tail.csv_rows())
        self.summary.update(
            phat_tail=class_record(tail.fit, tail.fit_error),
            delta=ctx.cfg.delta, dprime=ctx.cfg.dprime, epsilon=ctx.cfg.eps,
            outside_expansion={"C": exp.C, "lambda": exp.lam})

    def returnmap(self) -> None:
        Q = self.Q
        self._csv("Q.csv", ("omega_lo", "omega_hi", "R", "s", "t"), Q.csv_rows())
        tail = tail_of_R(Q)
        self._csv("R_tail.csv", ("n", "count", "mass"), tail.csv_rows())
        self.summary.update(R_tail=class_record(tail.fit, tail.fit_error),
                            censored_mass=Q.unresolved_mass / Q.length,
                            omega0=list(Q.omega0), t0=Q.t0,
                            markov_error=Q.markov_error)
        rec = self.summary["R_tail"]
        self.summary["decay_class"] = rec["class"] if rec else None
        self.summary["tails_file"] = "R_tail.csv"

    def tower(self) -> None:
        try:
            tw = build_tower(self.Q)
            self.summary["tower_status"] = "ok"
        except KacDivergence as exc:
            log.warning("tower: %s", exc)
            tw = build_tower(self.Q, truncated=True)
            self.summary["tower_status"] = f"KacDivergence: {exc}"
        holds, first = tw.tail_identity()
        base = tw.base_tail()
        height = tw.height_tail()
        self._csv("tower_tail.csv", ("n", "tower_tail", "base_tail"),
                  [(n, float(height[n]), float(base[n])) for n in range(tw.n_max + 1)])
        self.summary.update(tower_total_mass=tw.total_mass,
                            tower_kac_ratio=tw.kac_ratio, tower_tail_identity=holds)

    def corr(self) -> None:
        phi, psi = Observable.parse(self.cfg.phi), Observable.parse(self.cfg.psi)
        curve = correlation(self.map, self.mu, phi, psi, self.cfg.corr_n_max,
                            self.cfg.corr_samples, self.cfg.seed)
        self._csv("corr.csv", ("n", "C", "se", "censored"), curve.csv_rows())
        self.summary["curve_file"] = "corr.csv"
        try:
            dc = fit_correlation_decay(curve)
            self.summary.update(corr_class=class_record(dc), beta=dc.params.get("beta"),
                                alpha=dc.params.get("alpha"))
        except AllCensored as exc:
            self.summary["corr_class"] = {"class": "at-least-exponential", "reason": str(exc)}
        except DegenerateSequence as exc:
            self.summary["corr_class"] = {"class": "inconclusive", "reason": str(exc)}

    def clt(self) -> None:
        phi = Observable.parse(self.cfg.clt_phi)
        res: CLTResult = clt_test(self.map, self.mu, phi, self.cfg.clt_block,
                                  self.cfg.clt_trials, self.cfg.seed)
        self.summary.update(sigma=res.sigma, ks=res.ks, clt_pass=res.passed)

    # -- driver ----------------------------------------------------------------

    def run(self, stages) -> dict:
        order = []
        for s in stages:
            for d in (*DEPENDENCIES[s], s):
                if d not in order:
                    order.append(d)
        for s in STAGES:
            if s in order and s not in self.done:
                log.info("stage %s", s)
                getattr(self, s)()
                self.done.append(s)
                self.summary["stages"] = list(self.done)
        return self.finish()

    def finish(self) -> dict:
        self.summary["runtime_sec"] = time.perf_counter() - self._t0
        self.summary["artifacts"] = sorted(set(self.artifacts))
        (self.out / "summary.json").write_text(json.dumps(_jsonable(self.summary), indent=2,
                                                          sort_keys=True) + "\n")
        (self.out / "report.txt").write_text(format_report(self.summary))
        return self.summary


def _try_class(fn) -> tuple[DecayClass | None, str]:
    try:
        return fn(), ""
    except DegenerateSequence as exc:
        return None, str(exc)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _cls(rec) -> str:
    if not rec:
        return "-"
    text = rec.get("class", "-")
    if rec.get("label"):
        text += f" ({rec['label']})"
    return text


def _num(v) -> str:
    return "-" if v is None else f"{v:.6g}"


def format_report(summary: dict) -> str:
    """Aligned text table of the headline results."""
    rows = [
        ("map", f"{summary.get('map')} {summary.get('params')}"),
        ("(*) verdict", summary.get("star_verdict") or "-"),
        ("b_n class", _cls(summary.get("bn_class"))),
        ("d_n class", _cls(summary.get("dn_class"))),
        ("p_hat tail", _cls(summary.get("phat_tail"))),
        ("R tail", _cls(summary.get("R_tail"))),
        ("censored mass", _num(summary.get("censored_mass"))),
        ("correlation", _cls(summary.get("corr_class"))),
        ("beta", _num(summary.get("beta"))),
        ("alpha", _num(summary.get("alpha"))),
        ("sigma", _num(summary.get("sigma"))),
        ("KS", _num(summary.get("ks"))),
        ("runtime [s]", _num(summary.get("runtime_sec"))),
    ]
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k:<{width}}  {v}\n" for k, v in rows)


def load_summary(out_dir: str | Path) -> dict:
    """Read ``summary.json`` from an output directory.

    Raises:
        FileNotFoundError: no stage has written a summary there yet.
    """
    return json.loads((Path(out_dir) / "summary.json").read_text())
