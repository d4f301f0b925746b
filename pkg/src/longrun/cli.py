"""``longrun`` command line: simulate, value, synthesize, verify, accept.

Exit codes: 0 success, 1 criterion or certificate failure, 2 usage error.
"""
from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import acceptance
from .dynamics import PureControl, simulate as run_simulation
from .errors import CertificationFailure, InvarianceViolation
from .evaluations import from_dict as evaluation_from_dict
from .payoff_values import (OptimizerConfig, limit_value, payoff, undiscounted_value, value,
                            weighted_value)
from .problems import get_problem, problem_names
from .random_controls import control_from_dict
from .schemas import validate
from .synthesis import RobustnessCertificate, SynthesisConfig, synthesize_robust, verify_uniform


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        click.echo(text, nl=False)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("none", "null"):
        return None
    return text


def _load_problem(name: str, params: tuple):
    kwargs = {}
    for item in params:
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got {item!r}", param_hint="--param")
        k, v = item.split("=", 1)
        kwargs[k.strip()] = _parse_scalar(v.strip())
    try:
        problem = get_problem(name, **kwargs)
    except KeyError as exc:
        raise click.BadParameter(str(exc.args[0]), param_hint="--problem") from None
    except TypeError as exc:
        raise click.BadParameter(str(exc), param_hint="--param") from None
    return problem, kwargs


def _parse_y0(text: str, problem) -> np.ndarray:
    try:
        y0 = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}", param_hint="--y0") from None
    if y0.shape != (problem.dim,):
        raise click.BadParameter(f"expected {problem.dim} coordinates", param_hint="--y0")
    if not problem.contains(y0[None])[0]:
        raise click.BadParameter("initial state lies outside the state set", param_hint="--y0")
    return y0


def _read_json(text: str, hint: str):
    """Inline JSON if ``text`` starts with ``{``, otherwise a file path."""
    try:
        if text.lstrip().startswith("{"):
            return json.loads(text)
        return json.loads(Path(text).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(str(exc), param_hint=hint) from None


def _parse_evals(items: tuple) -> list:
    out = []
    for item in items:
        doc = _read_json(item, "--eval")
        try:
            validate("evaluation", doc)
            out.append(evaluation_from_dict(doc))
        except Exception as exc:
            raise click.BadParameter(f"invalid evaluation: {exc}", param_hint="--eval") from None
    return out


def _problem_doc(name, kwargs):
    return {"name": name, "params": {k: kwargs[k] for k in sorted(kwargs)}}


_common = [
    click.option("--problem", required=True, help="Built-in problem name."),
    click.option("--param", "params", multiple=True, metavar="KEY=VALUE", help="Problem parameter."),
    click.option("--y0", required=True, help="Initial state, comma separated."),
    click.option("--dt", type=click.FloatRange(min=0, min_open=True), default=0.1, show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
]


def common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Long-run values and robust controls for controlled ODEs."""


@main.command("simulate")
@common
@click.option("--control", "control_json", default=None,
              help="Pure control as JSON (inline or file); default: constant index --u-index.")
@click.option("--u-index", type=int, default=0, show_default=True, help="Constant control-grid index.")
@click.option("--horizon", type=click.FloatRange(min=0), required=True)
@click.option("--eval", "evals", multiple=True, help="Evaluation JSON (inline or file); repeatable.")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Directory for trajectory.csv, payoffs.csv and simulation.json.")
def cmd_simulate(problem, params, y0, dt, seed, control_json, u_index, horizon, evals, out):
    """Simulate one pure control and score it under each evaluation."""
    prob, kwargs = _load_problem(problem, params)
    y = _parse_y0(y0, prob)
    if control_json is not None:
        doc = _read_json(control_json, "--control")
        try:
            validate("control", doc)
            u = PureControl.from_dict(doc)
        except Exception as exc:
            raise click.BadParameter(f"invalid control: {exc}", param_hint="--control") from None
    else:
        u = PureControl.constant(u_index)
    if max(u.values) >= prob.control_grid.shape[0]:
        raise click.BadParameter("control index outside the control grid", param_hint="--control")
    thetas = _parse_evals(evals)
    try:
        traj = run_simulation(prob, u, y, horizon, dt)
    except InvarianceViolation as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    rows = []
    for th in thetas:
        p, err = payoff(prob, th, y, u, dt, return_error=True)
        rows.append({"descriptor": th.descriptor(), "evaluation": th.to_dict(), "payoff": float(p),
                     "error_band": float(err)})
    doc = {"problem": _problem_doc(problem, kwargs), "y0": y.tolist(), "dt": dt, "horizon": horizon,
           "control": u.to_dict(), "payoffs": rows}
    validate("simulation", doc)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["evaluation", "payoff", "error_band"])
    for r in rows:
        w.writerow([r["descriptor"], repr(r["payoff"]), repr(r["error_band"])])
    if out is None:
        click.echo(buf.getvalue(), nl=False)
        return
    _emit(traj.to_csv(), out / "trajectory.csv")
    _emit(buf.getvalue(), out / "payoffs.csv")
    _emit(_dumps(doc), out / "simulation.json")


@main.command("value")
@common
@click.option("--eval", "evals", multiple=True, help="Evaluation JSON (inline or file); repeatable.")
@click.option("--rho", "rhos", multiple=True, type=click.FloatRange(min=0, max=1, min_open=True),
              default=(0.1, 0.03, 0.01), show_default=True, help="Weighted-average rates.")
@click.option("--beta", type=click.FloatRange(min=0, max=1, min_open=True, max_open=True), default=0.5,
              show_default=True)
@click.option("--quick", is_flag=True, help="Small search budget.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="JSON bundle path.")
@click.option("--csv", "csv_out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="CSV of per-evaluation values.")
def cmd_value(problem, params, y0, dt, seed, evals, rhos, beta, quick, out, csv_out):
    """Values per evaluation, the long-run value and the weighted-average ladder."""
    prob, kwargs = _load_problem(problem, params)
    y = _parse_y0(y0, prob)
    thetas = _parse_evals(evals)
    cfg = OptimizerConfig(seed=seed, dt=dt)
    if quick:
        cfg = replace(cfg, population=24, generations=6, restarts=1, refine_iters=20)
    warnings = []
    lim = limit_value(prob, y, cfg, raise_on_gap=False)
    if lim.band > cfg.tauberian_threshold:
        warnings.append(f"Cesaro/Abel values disagree by {lim.band:.3g} at T={lim.ladder[-1][0]:g}")
        click.echo(f"warning: {warnings[-1]}", err=True)
    rows = []
    for th in thetas:
        v, u = value(prob, th, y, cfg, seeds=[lim.control])
        _, err = payoff(prob, th, y, u, dt, return_error=True)
        rows.append({"descriptor": th.descriptor(), "evaluation": th.to_dict(), "value": float(v),
                     "error_band": float(err), "control": u.to_dict()})
    weighted = [{"rho": r, "beta": beta,
                 "value": float(weighted_value(prob, y, r, beta, cfg, seeds=[lim.control])[0])} for r in rhos]
    doc = {
        "problem": _problem_doc(problem, kwargs),
        "y0": y.tolist(),
        "seed": seed,
        "dt": dt,
        "optimizer": cfg.to_dict(),
        "values": rows,
        "limit": lim.to_dict(),
        "undiscounted": float(undiscounted_value(prob, y, cfg, limit=lim)),
        "weighted": weighted,
        "warnings": warnings,
    }
    validate("value", doc)
    _emit(_dumps(doc), out)
    if csv_out is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["evaluation", "y0", "value", "control", "error_band"])
        for r in rows:
            c = r["control"]
            summary = " ".join(f"{b:g}:{v}" for b, v in zip(c["breakpoints"], c["values"]))
            w.writerow([r["descriptor"], " ".join(map(repr, y.tolist())), repr(r["value"]), summary,
                        repr(r["error_band"])])
        _emit(buf.getvalue(), csv_out)


@main.command("synthesize")
@common
@click.option("--epsilon", type=click.FloatRange(min=0, min_open=True), required=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True,
              help="Directory for control.json, certificate.json and certificate.csv.")
def cmd_synthesize(problem, params, y0, dt, seed, epsilon, out):
    """Build a robust random control and its certificate."""
    prob, kwargs = _load_problem(problem, params)
    y = _parse_y0(y0, prob)
    base = SynthesisConfig()
    cfg = replace(base, optimizer=replace(base.optimizer, seed=seed, dt=dt),
                  best_response=replace(base.best_response, seed=seed, dt=dt))
    try:
        res = synthesize_robust(prob, y, epsilon, cfg)
    except CertificationFailure as exc:
        click.echo(f"stage {exc.stage} failed: {exc}", err=True)
        click.echo(json.dumps(exc.report, sort_keys=True, default=str), err=True)
        sys.exit(1)
    control_doc = res.control.to_dict()
    cert_doc = res.certificate.to_dict()
    cert_doc["diagnostics"] = dict(cert_doc["diagnostics"], problem=_problem_doc(problem, kwargs),
                                   y0=y.tolist(), seed=seed)
    validate("control", control_doc)
    validate("certificate", cert_doc)
    _emit(_dumps(control_doc), out / "control.json")
    _emit(_dumps(cert_doc), out / "certificate.json")
    _emit(res.certificate.to_csv(), out / "certificate.csv")
    click.echo(f"worst regular gap {res.certificate.worst_regular_gap:.6g}; "
               f"{'passed' if res.certificate.passed else 'FAILED'}")
    if not res.certificate.passed:
        sys.exit(1)


@main.command("verify")
@click.option("--problem", required=True, help="Built-in problem name.")
@click.option("--param", "params", multiple=True, metavar="KEY=VALUE", help="Problem parameter.")
@click.option("--y0", required=True, help="Initial state, comma separated.")
@click.option("--control", "control_path", required=True, help="Control artifact JSON.")
@click.option("--certificate", "cert_path", required=True, help="Certificate JSON to reproduce.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Where to write the recomputed certificate.")
def cmd_verify(problem, params, y0, control_path, cert_path, out):
    """Recompute a certificate from a persisted control and compare byte for byte."""
    prob, kwargs = _load_problem(problem, params)
    y = _parse_y0(y0, prob)
    cdoc = _read_json(control_path, "--control")
    old = _read_json(cert_path, "--certificate")
    try:
        validate("control", cdoc)
        validate("certificate", old)
    except Exception as exc:
        raise click.BadParameter(f"invalid artifact: {exc}") from None
    u = control_from_dict(cdoc)
    cert = RobustnessCertificate.from_dict(old)
    catalog = [evaluation_from_dict(e.evaluation) for e in cert.entries]
    new = verify_uniform(prob, y, u, cert.V_star, catalog, cert.S0, cert.epsilon, cert.dt, slack=cert.slack,
                         sup_tv_steps=cert.sup_tv_steps, diagnostics=old.get("diagnostics", {}))
    new_doc = new.to_dict()
    validate("certificate", new_doc)
    text = _dumps(new_doc)
    if out is not None:
        _emit(text, out)
    identical = text == _dumps(old)
    click.echo(f"certificate {'reproduced' if identical else 'DIFFERS'}; "
               f"worst regular gap {new.worst_regular_gap:.6g}; {'passed' if new.passed else 'FAILED'}")
    if not (identical and new.passed):
        sys.exit(1)


@main.command("accept")
@click.option("--filter", "filter_", default=None,
              help="Run only criteria with this tag (tv, dynamics, values, random, synthesis), number or name.")
def cmd_accept(filter_):
    """Run the acceptance suite and print one line per criterion."""
    chosen = acceptance.select(filter_)
    if not chosen:
        raise click.BadParameter(f"no criterion matches {filter_!r}", param_hint="--filter")
    outcomes = acceptance.run_all(filter_, echo=click.echo)
    failed = [o.number for o in outcomes if not o.passed]
    click.echo(f"{len(outcomes) - len(failed)}/{len(outcomes)} passed"
               + (f"; failed: {', '.join(map(str, failed))}" if failed else ""))
    if failed:
        sys.exit(1)


@main.command("problems")
def cmd_problems():
    """List the built-in problems."""
    for name in problem_names():
        click.echo(name)


if __name__ == "__main__":
    main()
