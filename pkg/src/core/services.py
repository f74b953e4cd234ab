import asyncio
import logging
from dataclasses import dataclass, field
from typing import Any, Awaitable, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src import VERSION
from src.core.entities.exp_solution import ExpSolution
from src.core.entities.grid import MarkovStoppingRule, ValueField
from src.core.entities.reports import SolverWarning, WarningCode
from src.core.entities.simulation import TailVerdict
from src.core.entities.utility import UtilityFamily
from src.core.errors import ErrorCode, StoppingError, ValidationFailure
from src.core.interfaces.result_sink import IResultSink
from src.core.interfaces.sampler import IPathSampler
from src.core.use_cases.exp_solver import (check_drift, exp_solution_rule, exp_stop_set_oracle, exp_value_field,
                                           solve_exp_finite, solve_exp_infinite)
from src.core.use_cases.grid_solver import initial_field, solve_finite, solve_infinite
from src.core.use_cases.house_selling import (check_offer_monotonicity, exp_stop_set_upward_closed,
                                              house_sampler)
from src.core.use_cases.model_core import build_problem, embedded_matrix
from src.core.use_cases.ola_rules import certify_immediate_stop, exp_ola_set, poisson_threshold
from src.core.use_cases.risk_compare import (compare_exp_stop_sets, compare_stop_regions, require_ordered,
                                             stochastic_order_check)
from src.core.use_cases.simulator import (UniformizedSampler, apply_rule, calibrate_estimator,
                                          mc_expected_utility, sample_paths, tail_diagnostic)
from src.core.use_cases.utility import eval_utility
from src.infrastructure.config.loader import LoadedConfig
from src.infrastructure.persistence.report_repo import exp_table, jsonable, outcome_table, value_rule_table

logger = logging.getLogger(__name__)

COMMANDS = ("validate", "solve-finite", "solve-infinite", "solve-exp", "ola", "simulate",
            "tail-check", "compare-risk", "house")

COVERAGE_TARGET = 0.99


@dataclass
class CommandResult:
    command: str
    exit_code: int
    report: Dict[str, Any]
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def persist(self, sink: IResultSink) -> List[str]:
        written = [sink.write_table(name, table) for name, table in self.tables.items()]
        written.append(sink.write_report("report", self.report))
        return [w for w in written if w]


@dataclass
class _Optimal:
    """A rule to simulate, the value it is checked against and the solver's report."""
    rule: MarkovStoppingRule
    value: Union[ValueField, ExpSolution]
    reference: float
    solver: Dict[str, Any]


def error_report(command: str, exc: StoppingError, loaded: Optional[LoadedConfig] = None) -> Dict[str, Any]:
    report = {"command": command, "version": VERSION, "exit_code": exc.exit_code, "error": exc.to_dict()}
    if loaded is not None:
        report["config"] = loaded.config.echo()
    return jsonable(report)


def _state_map(names, values) -> Dict[str, Any]:
    return {str(s): v for s, v in zip(names, values)}


def _stop_set_label(solution: ExpSolution, names) -> Union[str, List[str]]:
    if len(solution.stop_set) == len(names):
        return "all"
    return [names[i] for i in solution.stop_set]


def _require_gamma(loaded: LoadedConfig) -> float:
    gamma = loaded.config.exp.gamma
    if gamma is None:
        raise ValidationFailure(ErrorCode.SCHEMA_ERROR, "an exponential utility or exp.gamma is required",
                                {"pointer": "/exp/gamma"})
    return float(gamma)


class StoppingService:
    """
    Runs one command against a loaded config. The numerical work is synchronous
    and runs in worker threads so the event loop stays free for the HTTP surface.
    """

    def __init__(self):
        self._handlers: Dict[str, Callable[[LoadedConfig], Awaitable[Tuple[Dict[str, Any], Dict[str, pd.DataFrame], int]]]] = {
            "validate": self._validate,
            "solve-finite": self._solve_finite,
            "solve-infinite": self._solve_infinite,
            "solve-exp": self._solve_exp,
            "ola": self._ola,
            "simulate": self._simulate,
            "tail-check": self._tail_check,
            "compare-risk": self._compare_risk,
            "house": self._house,
        }

    async def run(self, command: str, loaded: LoadedConfig) -> CommandResult:
        handler = self._handlers.get(command)
        if handler is None:
            raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"unknown command {command!r}",
                                    {"commands": list(COMMANDS)})
        logger.info(f"running {command}")
        result, tables, exit_code = await handler(loaded)
        report = jsonable({
            "command": command,
            "version": VERSION,
            "exit_code": exit_code,
            "config": loaded.config.echo(),
            "result": result,
        })
        return CommandResult(command=command, exit_code=exit_code, report=report, tables=tables)

    # --- commands ---

    async def _validate(self, loaded: LoadedConfig):
        model = loaded.model
        result: Dict[str, Any] = {
            "valid": True,
            "model": model.to_dict(),
            "exit_rates": _state_map(model.states, model.q),
            "embedded_chain": embedded_matrix(model),
            "grid": {"t_max": loaded.grid.t_max, "dt": loaded.grid.dt, "K": loaded.grid.K},
        }
        if loaded.problem is not None:
            u = loaded.problem.utility
            result["utility"] = u.label()
            if u.restricted:
                result["caps"] = _state_map(model.states, loaded.problem.caps)
            if u.family == UtilityFamily.EXPONENTIAL:
                result["drift_flags"] = _state_map(model.states, check_drift(model, u.gamma))
        return result, {}, 0

    async def _solve_finite(self, loaded: LoadedConfig):
        problem = loaded.require_problem()
        cfg = loaded.config
        sol = await asyncio.to_thread(solve_finite, problem, cfg.solver.n, loaded.grid,
                                      refine=cfg.grid.refine, threads=loaded.threads)
        names = problem.model.states
        t0 = np.full(problem.model.m, problem.t0)
        idx = np.arange(problem.model.m)
        stages = [_state_map(names, v.at(idx, t0)) for v in sol.values]
        first = sol.decision_rules()[0] if sol.rules else None
        result = {
            "horizon": sol.horizon,
            "value_t0_by_stage": stages,
            "h_star_t0": _state_map(names, first.wait(idx, t0)) if first is not None else None,
            "diagnostics": sol.diagnostics,
        }
        tables = {"values": value_rule_table(sol.values[-1], first, names)}
        return result, tables, 0

    async def _solve_infinite(self, loaded: LoadedConfig):
        problem = loaded.require_problem()
        cfg = loaded.config
        sol = await asyncio.to_thread(solve_infinite, problem, loaded.grid, cfg.solver.tol, cfg.solver.max_iter,
                                      refine=cfg.grid.refine, threads=loaded.threads)
        names = problem.model.states
        idx = np.arange(problem.model.m)
        t0 = np.full(problem.model.m, problem.t0)
        result = {
            "iterations": sol.iterations,
            "residual": sol.residual,
            "value_t0": _state_map(names, sol.value.at(idx, t0)),
            "h_star_t0": _state_map(names, sol.rule.wait(idx, t0)),
            "diagnostics": sol.diagnostics,
        }
        return result, {"values": value_rule_table(sol.value, sol.rule, names)}, 0

    async def _solve_exp(self, loaded: LoadedConfig):
        model = loaded.model
        gamma = _require_gamma(loaded)
        exp = loaded.config.exp
        names = model.states
        warnings: List[SolverWarning] = []
        if exp.n is not None:
            stages = await asyncio.to_thread(solve_exp_finite, model, gamma, exp.n)
            sol = stages[-1]
            result: Dict[str, Any] = {"stages": [s.to_dict() for s in stages]}
        else:
            sol = await asyncio.to_thread(solve_exp_infinite, model, gamma, exp.tol, exp.max_iter, exp.polish)
            result = {}
            if exp.oracle:
                oracle = await asyncio.to_thread(exp_stop_set_oracle, model, gamma, exp.oracle_cap)
                gap = float(np.max(np.abs(oracle.W - sol.W)))
                result["oracle"] = {
                    "W": oracle.W,
                    "stop_set": list(oracle.stop_set),
                    "candidates": [list(c) for c in oracle.candidates],
                    "sup_gap": gap,
                    "agrees": gap <= 10 * exp.tol and oracle.stop_set == sol.stop_set,
                }
                if len(oracle.candidates) > 1:
                    warnings.append(SolverWarning(code=WarningCode.MULTIPLE_CANDIDATES,
                                                  message=f"{len(oracle.candidates)} max-consistent stop sets",
                                                  details={"candidates": [list(c) for c in oracle.candidates]}))
        result.update({
            "gamma": gamma,
            "W": _state_map(names, sol.W),
            "stop_set": _stop_set_label(sol, names),
            "drift_flags": _state_map(names, check_drift(model, gamma)),
            "solution": sol.to_dict(),
            "warnings": warnings,
        })
        return result, {"exp": exp_table(sol, names)}, 0

    async def _ola(self, loaded: LoadedConfig):
        problem = loaded.require_problem()
        ola = loaded.config.ola
        report = await asyncio.to_thread(certify_immediate_stop, problem, ola.t, ola.method, ola.exclude)
        names = problem.model.states
        result: Dict[str, Any] = {
            "ola": report,
            "certificate": {names[i]: c for i, c in report.certificate.items()},
        }
        if problem.utility.family == UtilityFamily.EXPONENTIAL:
            result["exp_ola_set"] = exp_ola_set(problem.model, problem.utility.gamma)
        if ola.poisson is not None:
            gamma = _require_gamma(loaded)
            p = ola.poisson
            result["poisson_threshold"] = poisson_threshold(p.lam, problem.model.c, gamma, p.g, p.i_max)
        return result, {}, 0

    # --- simulation ---

    def _sampler(self, loaded: LoadedConfig) -> Optional[IPathSampler]:
        if loaded.house is not None:
            return house_sampler(loaded.house)
        sim = loaded.config.simulation
        if sim.sampler == "uniformized":
            return UniformizedSampler(loaded.model, rate=sim.rate)
        return None

    async def _optimal(self, loaded: LoadedConfig) -> _Optimal:
        problem = loaded.require_problem()
        cfg = loaded.config
        model, grid = problem.model, loaded.grid
        i0 = model.index(cfg.simulation.i0)
        if cfg.simulation.rule == "immediate":
            value = initial_field(problem, grid)
            ref = float(eval_utility(problem.utility, model.g[i0] - model.c * problem.t0))
            return _Optimal(MarkovStoppingRule.constant(grid, model.m), value, ref, {"rule": "immediate"})
        if problem.utility.family == UtilityFamily.EXPONENTIAL:
            sol = await asyncio.to_thread(solve_exp_infinite, model, problem.utility.gamma, cfg.exp.tol,
                                          cfg.exp.max_iter, cfg.exp.polish)
            ref = float(np.exp(model.c * sol.gamma * problem.t0) * sol.W[i0])
            return _Optimal(exp_solution_rule(sol, grid), sol, ref,
                            {"rule": "exp-solver", "stop_set": list(sol.stop_set)})
        sol = await asyncio.to_thread(solve_infinite, problem, grid, cfg.solver.tol, cfg.solver.max_iter,
                                      refine=cfg.grid.refine, threads=loaded.threads)
        ref = float(sol.value.at(np.array([i0]), np.array([problem.t0]))[0])
        return _Optimal(sol.rule, sol.value, ref,
                        {"rule": "grid-solver", "iterations": sol.iterations, "diagnostics": sol.diagnostics})

    async def _simulate(self, loaded: LoadedConfig):
        problem = loaded.require_problem()
        sim = loaded.config.simulation
        opt = await self._optimal(loaded)
        sampler = self._sampler(loaded)
        est = await asyncio.to_thread(mc_expected_utility, problem, opt.rule, sim.i0, sim.n_paths, sim.seed,
                                      sim.n_jumps, sampler, sim.block_size, loaded.threads)
        warnings: List[SolverWarning] = []
        if est.unstopped_fraction > 0:
            warnings.append(SolverWarning(code=WarningCode.HORIZON_WARNING,
                                          message=f"{est.unstopped_fraction:.4%} of paths cut at the last jump",
                                          details={"n_jumps": sim.n_jumps}))
        z = (est.mean - opt.reference) / est.se if est.se > 0 else 0.0
        within = abs(z) <= 3.0
        est.verdict = "PASS" if within else "FAIL"
        result: Dict[str, Any] = {
            "estimate": est,
            "reference": opt.reference,
            "z_score": z,
            "within_3se": within,
            "solver": opt.solver,
        }
        if sim.calibration_repeats > 0:
            cal = await asyncio.to_thread(calibrate_estimator, problem, opt.rule, sim.i0, opt.reference,
                                          sim.calibration_repeats, sim.n_paths, sim.seed, sim.n_jumps, sampler)
            result["calibration"] = cal
            if cal.coverage < COVERAGE_TARGET:
                warnings.append(SolverWarning(code=WarningCode.COVERAGE_WARNING,
                                              message=f"coverage {cal.coverage:.2%} below {COVERAGE_TARGET:.0%}",
                                              details={"covered": cal.covered, "repeats": cal.repeats}))
        result["warnings"] = warnings
        tables: Dict[str, pd.DataFrame] = {}
        if sim.dump_paths:
            batch = await asyncio.to_thread(sample_paths, problem.model, sim.i0, sim.n_paths, sim.seed,
                                            sim.n_jumps, None, sampler, sim.block_size, loaded.threads)
            tables["paths"] = outcome_table(batch, apply_rule(batch, opt.rule, problem.t0), problem.model.states)
        return result, tables, 0

    async def _tail_check(self, loaded: LoadedConfig):
        problem = loaded.require_problem()
        sim = loaded.config.simulation
        opt = await self._optimal(loaded)
        diag = await asyncio.to_thread(tail_diagnostic, problem, opt.rule, opt.value, sim.i0, sim.n_list,
                                       sim.tail_paths, sim.seed, self._sampler(loaded), sim.block_size,
                                       loaded.threads)
        exit_code = 0 if diag.verdict == TailVerdict.PASS else 3
        if exit_code:
            logger.warning(f"tail diagnostic inconclusive from state {sim.i0}")
        return {"tail": diag, "solver": opt.solver}, {}, exit_code

    # --- property checks ---

    async def _compare_risk(self, loaded: LoadedConfig):
        cfg = loaded.config
        if cfg.compare is None:
            raise ValidationFailure(ErrorCode.SCHEMA_ERROR, "compare-risk needs a compare section",
                                    {"pointer": "/compare"})
        model, grid = loaded.model, loaded.grid
        u, w = cfg.compare.u.to_spec(), cfg.compare.w.to_spec()
        result: Dict[str, Any] = {"u": u.label(), "w": w.label()}
        result["risk_aversion"] = require_ordered(model, grid, u, w)

        if (cfg.compare.exp_stop_sets and u.family == UtilityFamily.EXPONENTIAL
                and w.family == UtilityFamily.EXPONENTIAL):
            result["exp_stop_sets"] = await asyncio.to_thread(compare_exp_stop_sets, model, u.gamma, w.gamma)

        pu, pw = build_problem(model, u, cfg.t0), build_problem(model, w, cfg.t0)
        sol_u, sol_w = await asyncio.gather(
            asyncio.to_thread(solve_infinite, pu, grid, cfg.solver.tol, cfg.solver.max_iter,
                              refine=cfg.grid.refine, threads=loaded.threads),
            asyncio.to_thread(solve_infinite, pw, grid, cfg.solver.tol, cfg.solver.max_iter,
                              refine=cfg.grid.refine, threads=loaded.threads),
        )
        result["containment"] = compare_stop_regions(model, u, w, grid, solutions=(sol_u, sol_w))
        if cfg.compare.stochastic:
            result["stochastic_order"] = await asyncio.to_thread(
                stochastic_order_check, model, sol_u.rule, sol_w.rule, cfg.compare.i0, cfg.compare.n_paths,
                cfg.compare.seed, cfg.t0, cfg.simulation.n_jumps)
        tables = {
            "values_u": value_rule_table(sol_u.value, sol_u.rule, model.states),
            "values_w": value_rule_table(sol_w.value, sol_w.rule, model.states),
        }
        return result, tables, 0

    async def _house(self, loaded: LoadedConfig):
        if loaded.house is None:
            raise ValidationFailure(ErrorCode.SCHEMA_ERROR, "house needs an alpha vector", {"pointer": "/alpha"})
        problem = loaded.require_problem()
        house, grid = loaded.house, loaded.grid
        names = house.model.states
        result: Dict[str, Any] = {"total_rate": house.total_rate,
                                  "offer_distribution": _state_map(names, house.offer_distribution)}
        tables: Dict[str, pd.DataFrame] = {}

        opt = await self._optimal(loaded)
        if isinstance(opt.value, ExpSolution):
            result["exp_upward_closed"] = exp_stop_set_upward_closed(house, opt.value)
            tables["exp"] = exp_table(opt.value, names)
            field_value = exp_value_field(opt.value, grid, house.c)
        else:
            field_value = opt.value
        result["monotonicity"] = check_offer_monotonicity(house, problem.utility, field_value, opt.rule)
        tables["values"] = value_rule_table(field_value, opt.rule, names)

        sim = loaded.config.simulation
        diag = await asyncio.to_thread(tail_diagnostic, problem, opt.rule, opt.value, sim.i0, sim.n_list,
                                       sim.tail_paths, sim.seed, house_sampler(house), sim.block_size,
                                       loaded.threads)
        result["tail"] = diag
        result["solver"] = opt.solver
        return result, tables, 0 if diag.verdict == TailVerdict.PASS else 3
