"""
Trainer Module - MAP parameter learning by EM

E step: belief propagation on the coupled-chain graph.
M step: closed-form Dirichlet-MAP updates for the initial distributions and
transition matrices, and a constrained solve for the emission tables that
keeps expected goals monotone in offense and defense state.

Several random restarts are run and the one with the best final objective
(log evidence plus Dirichlet log prior) is kept.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import xlogy

from .domain import Cardinalities, Hyperparams, ModelParams, Posterior, Schedule, expected_goals_surface
from .errors import ContradictoryEvidenceError, NonFiniteMessageError, TrainingError
from .graph_engine import FactorGraph, MessageState, build_graph, dirichlet_log_prior, log_evidence, run_bp
from .validator import validate_params

logger = logging.getLogger(__name__)

WITHIN = "within"
BETWEEN = "between"

# Distance decay of the transition prior: weight of a jump of d states is base**-d
_DECAY_BASE = {WITHIN: 8.0, BETWEEN: 2.0}


@dataclass
class TrainConfig:
    """EM settings."""
    max_iterations: int = 100
    restarts: int = 8
    seed: int = 0
    bp_cycles: int = 20
    convergence_tol: float = 1e-6
    monotonicity_tol: float = 1e-9
    emission_solver_iters: int = 500
    damping: float = 0.0
    threads: int = 1

    def __post_init__(self):
        for name in ("max_iterations", "restarts", "bp_cycles", "emission_solver_iters", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("convergence_tol", "monotonicity_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping must lie in [0, 1), got {self.damping}")


@dataclass
class RestartTrace:
    restart: int
    seed: int
    objectives: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def final_objective(self) -> float:
        return self.objectives[-1] if self.objectives else float("-inf")


@dataclass
class TrainTrace:
    """Objective path of every restart and the index of the selected one."""
    restarts: List[RestartTrace]
    selected: int

    @property
    def final_objectives(self) -> List[float]:
        return [r.final_objective for r in self.restarts]

    @property
    def objectives(self) -> List[float]:
        return self.restarts[self.selected].objectives

    @property
    def best_objective(self) -> float:
        return self.restarts[self.selected].final_objective

    def rows(self) -> List[Tuple[int, int, float]]:
        """(restart, iteration, objective), iterations counted from 1."""
        return [(r.restart, i, obj) for r in self.restarts for i, obj in enumerate(r.objectives, start=1)]


@dataclass
class FitResult:
    """Selected parameters together with the inference state they came with."""
    params: ModelParams
    trace: TrainTrace
    graph: FactorGraph
    posterior: Posterior
    messages: MessageState


@dataclass
class SufficientStatistics:
    """Posterior expectations summed into the shapes the M step needs."""
    head_o: np.ndarray
    head_d: np.ndarray
    xi_within_o: np.ndarray
    xi_between_o: np.ndarray
    xi_within_d: np.ndarray
    xi_between_d: np.ndarray
    home_counts: np.ndarray
    away_counts: np.ndarray


# ============================================================================
# HYPERPARAMETERS AND INITIALIZATION
# ============================================================================

def make_transition_alphas(S: int, c: float, kind: str = WITHIN) -> np.ndarray:
    """
    Dirichlet parameters for a transition matrix.

    Each row holds c pseudocounts spread by distance from the diagonal,
    on top of a flat 1, so row sums are c + S.
    """
    if kind not in _DECAY_BASE:
        raise ValueError(f"kind must be {WITHIN!r} or {BETWEEN!r}, got {kind!r}")
    if S < 1 or not c > 0:
        raise ValueError(f"need S >= 1 and c > 0, got S={S}, c={c}")
    states = np.arange(S)
    distance = np.abs(states[:, None] - states[None, :])
    weights = _DECAY_BASE[kind] ** (-distance.astype(float))
    return 1.0 + c * weights / weights.sum(axis=1, keepdims=True)


def make_emission_dirichlet(goal_frequencies, c: float) -> np.ndarray:
    """Pseudocounts proportional to how often each goal count occurs: 1 + c*f."""
    f = np.asarray(goal_frequencies, dtype=float)
    if f.ndim != 1 or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise ValueError(f"goal frequencies must be a probability vector, got {f}")
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    return 1.0 + c * f


def _goal_frequencies(goals: np.ndarray, G: int) -> np.ndarray:
    if goals.size == 0:
        return np.full(G, 1.0 / G)
    return np.bincount(goals, minlength=G)[:G] / goals.size


def make_hyperparams(
    schedule: Schedule,
    card: Cardinalities,
    c_transition: float = 87.0,
    c_goal: float = 236.0,
) -> Hyperparams:
    """Lambda from the schedule's capped home and away goal frequencies."""
    records = schedule.records()
    cap = card.goal_cap
    home = np.array([min(r.raw_home_goals, cap) for r in records], dtype=int)
    away = np.array([min(r.raw_away_goals, cap) for r in records], dtype=int)
    G = card.num_goal_states
    return Hyperparams(
        alpha_within=make_transition_alphas(card.num_strength_states, c_transition, WITHIN),
        alpha_between=make_transition_alphas(card.num_strength_states, c_transition, BETWEEN),
        beta=make_emission_dirichlet(_goal_frequencies(home, G), c_goal),
        phi=make_emission_dirichlet(_goal_frequencies(away, G), c_goal),
        c_transition=c_transition,
        c_goal=c_goal,
    )


def _random_cpt(rng: np.random.Generator, dirichlet: np.ndarray, S: int) -> np.ndarray:
    """Random emission rows placed so expected goals rise with offense and fall with defense."""
    G = dirichlet.shape[0]
    rows = rng.dirichlet(dirichlet / dirichlet.mean(), size=S * S) + 1e-6
    rows /= rows.sum(axis=1, keepdims=True)
    rows = rows[np.argsort(rows @ np.arange(G), kind="stable")]
    cells = sorted(product(range(S), range(S)), key=lambda kj: (kj[0] - kj[1], kj[0]))
    cpt = np.empty((S, S, G))
    for (k, j), row in zip(cells, rows):
        cpt[k, j] = row
    return cpt


def initial_params(rng: np.random.Generator, hyper: Hyperparams) -> ModelParams:
    """Random feasible starting point for one restart."""
    S = hyper.num_strength_states

    def transition():
        return 0.5 * rng.dirichlet(np.full(S, 5.0), size=S) + 0.5 * np.eye(S)

    return ModelParams(
        pi=rng.dirichlet(np.ones(S)),
        rho=rng.dirichlet(np.ones(S)),
        omega_within=transition(),
        omega_between=transition(),
        delta_within=transition(),
        delta_between=transition(),
        psi=_random_cpt(rng, hyper.beta, S),
        gamma_cpt=_random_cpt(rng, hyper.phi, S),
    )


# ============================================================================
# M STEP
# ============================================================================

def sufficient_statistics(posterior: Posterior) -> SufficientStatistics:
    graph = posterior.graph
    G = graph.card.num_goal_states
    heads = graph.heads
    within = ~graph.edge_between
    goals = np.eye(G)
    return SufficientStatistics(
        head_o=posterior.gamma_o[heads].sum(axis=0),
        head_d=posterior.gamma_d[heads].sum(axis=0),
        xi_within_o=posterior.xi_o[within].sum(axis=0),
        xi_between_o=posterior.xi_o[~within].sum(axis=0),
        xi_within_d=posterior.xi_d[within].sum(axis=0),
        xi_between_d=posterior.xi_d[~within].sum(axis=0),
        home_counts=np.einsum("mij,mg->ijg", posterior.zeta_home, goals[graph.match_home_goals]),
        away_counts=np.einsum("mij,mg->ijg", posterior.zeta_away, goals[graph.match_away_goals]),
    )


def _normalized(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    if total <= 0:
        return np.full(counts.shape, 1.0 / counts.size)
    return counts / total


def m_step_initial(posterior: Posterior) -> Tuple[np.ndarray, np.ndarray]:
    """pi and rho: normalized sums of the chain-head marginals."""
    heads = posterior.graph.heads
    return (_normalized(posterior.gamma_o[heads].sum(axis=0)),
            _normalized(posterior.gamma_d[heads].sum(axis=0)))


def m_step_transition(xi_sums: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Row k: (alpha[k] - 1 + xi_sums[k]) normalized; empty rows become uniform."""
    xi_sums = np.asarray(xi_sums, dtype=float)
    numerators = np.asarray(alpha, dtype=float) - 1.0 + xi_sums
    totals = numerators.sum(axis=1, keepdims=True)
    empty = totals[:, 0] <= 0
    if np.any(empty):
        logger.warning(f"transition rows {np.flatnonzero(empty).tolist()} have no data and a flat prior; set to uniform")
    S = numerators.shape[1]
    safe = np.where(totals > 0, totals, 1.0)
    return np.where(empty[:, None], 1.0 / S, numerators / safe)


def _monotone_constraints(S: int, G: int) -> np.ndarray:
    """Rows c with c @ cpt.ravel() >= 0 exactly when expected goals are monotone."""
    goals = np.arange(G, dtype=float)
    rows = []

    def cell(k, j):
        vec = np.zeros((S, S, G))
        vec[k, j] = goals
        return vec

    for j in range(S):
        for k in range(S - 1):
            rows.append((cell(k + 1, j) - cell(k, j)).ravel())
    for k in range(S):
        for j in range(S - 1):
            rows.append((cell(k, j) - cell(k, j + 1)).ravel())
    return np.array(rows).reshape(len(rows), S * S * G)


def _monotone_violation(cpt: np.ndarray) -> float:
    """Largest wrong-way step of expected goals (0 when monotone)."""
    surface = expected_goals_surface(cpt)
    worst = 0.0
    if surface.shape[0] > 1:
        worst = max(worst, float(-np.diff(surface, axis=0).min()), float(np.diff(surface, axis=1).max()))
    return max(worst, 0.0)


def _feasible_start(weights: np.ndarray) -> np.ndarray:
    """Exponential tilt of the pooled goal distribution; strictly monotone."""
    S, _, G = weights.shape
    pooled = weights.sum(axis=(0, 1)) + 1.0
    pooled /= pooled.sum()
    states = np.arange(S)
    tilt = 0.1 * (states[:, None] - states[None, :])
    logits = np.log(pooled)[None, None, :] + tilt[:, :, None] * np.arange(G)[None, None, :]
    cpt = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return cpt / cpt.sum(axis=-1, keepdims=True)


def emission_objective(weights: np.ndarray, cpt: np.ndarray) -> float:
    """sum of weights * ln cpt (0 * ln 0 = 0)."""
    return float(xlogy(weights, cpt).sum())


def m_step_emission_constrained(
    zeta_goal_counts: np.ndarray,
    dirichlet: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 500,
) -> np.ndarray:
    """
    MAP emission table with monotone expected goals.

    Maximizes sum (counts + dirichlet - 1) * ln cpt over row-stochastic
    tables whose expected goals are non-decreasing in offense state and
    non-increasing in defense state. When the unconstrained optimum already
    satisfies the ordering it is returned as is.

    Args:
        zeta_goal_counts: S x S x G expected counts
        dirichlet: Length-G pseudocounts (>= 1)
        tol: Allowed wrong-way step in expected goals
        max_iter: Iteration cap of the constrained solver

    Returns:
        S x S x G table
    """
    counts = np.asarray(zeta_goal_counts, dtype=float)
    weights = counts + (np.asarray(dirichlet, dtype=float) - 1.0)[None, None, :]
    if np.any(weights < 0):
        raise ValueError("counts plus pseudocounts minus one must be non-negative")
    S, _, G = weights.shape

    totals = weights.sum(axis=-1, keepdims=True)
    analytic = np.where(totals > 0, weights / np.where(totals > 0, totals, 1.0), 1.0 / G)
    if _monotone_violation(analytic) <= tol:
        return analytic

    start = _feasible_start(weights)
    A = _monotone_constraints(S, G)
    scale = max(float(weights.sum()), 1.0)
    flat_w = weights.ravel() / scale

    def objective(x):
        return -float(xlogy(flat_w, x).sum())

    def gradient(x):
        return -flat_w / x

    simplex = np.kron(np.eye(S * S), np.ones(G))
    result = minimize(
        objective,
        start.ravel(),
        jac=gradient,
        method="SLSQP",
        bounds=[(1e-12, 1.0)] * (S * S * G),
        constraints=[
            {"type": "eq", "fun": lambda x: simplex @ x - 1.0, "jac": lambda x: simplex},
            {"type": "ineq", "fun": lambda x: A @ x, "jac": lambda x: A},
        ],
        options={"maxiter": max_iter, "ftol": 1e-12},
    )
    if not result.success:
        logger.debug(f"emission solver stopped early: {result.message}")

    cpt = np.clip(result.x.reshape(S, S, G), 0.0, None)
    cpt /= cpt.sum(axis=-1, keepdims=True)

    # Blend toward the strictly feasible start until every ordering constraint holds
    margins = A @ cpt.ravel()
    if np.any(margins < 0):
        start_margins = A @ start.ravel()
        violated = margins < 0
        eps = float(np.max(-margins[violated] / (start_margins[violated] - margins[violated])))
        eps = min(1.0, eps * (1.0 + 1e-9) + 1e-15)
        cpt = (1.0 - eps) * cpt + eps * start
        cpt /= cpt.sum(axis=-1, keepdims=True)

    if emission_objective(weights, cpt) < emission_objective(weights, start):
        cpt = start
    return cpt


def _emission_update(counts, dirichlet, current: np.ndarray, config: TrainConfig) -> np.ndarray:
    candidate = m_step_emission_constrained(counts, dirichlet, config.monotonicity_tol, config.emission_solver_iters)
    weights = counts + (np.asarray(dirichlet) - 1.0)[None, None, :]
    if (_monotone_violation(current) <= config.monotonicity_tol
            and emission_objective(weights, candidate) < emission_objective(weights, current)):
        logger.debug("constrained emission update would lower the objective; keeping current table")
        return current
    return candidate


def m_step(posterior: Posterior, params: ModelParams, hyper: Hyperparams, config: TrainConfig) -> ModelParams:
    """All six parameter blocks from one posterior."""
    stats = sufficient_statistics(posterior)
    pi, rho = m_step_initial(posterior)
    return ModelParams(
        pi=pi,
        rho=rho,
        omega_within=m_step_transition(stats.xi_within_o, hyper.alpha_within),
        omega_between=m_step_transition(stats.xi_between_o, hyper.alpha_between),
        delta_within=m_step_transition(stats.xi_within_d, hyper.alpha_within),
        delta_between=m_step_transition(stats.xi_between_d, hyper.alpha_between),
        psi=_emission_update(stats.home_counts, hyper.beta, params.psi, config),
        gamma_cpt=_emission_update(stats.away_counts, hyper.phi, params.gamma_cpt, config),
    )


# ============================================================================
# EM LOOP
# ============================================================================

def training_objective(graph: FactorGraph, params: ModelParams, hyper: Hyperparams, posterior: Posterior) -> float:
    """ln P(X | theta) + ln P(theta | Lambda), up to the Dirichlet normalizer."""
    return log_evidence(graph, params, posterior) + dirichlet_log_prior(params, hyper)


class ConvergenceMonitor:
    """Tracks the objective and decides when EM has converged."""

    def __init__(self, tol: float, max_iterations: int, is_exact: bool):
        self.tol = tol
        self.max_iterations = max_iterations
        self.is_exact = is_exact
        self.history: List[float] = []

    def report(self, objective: float):
        if self.history and objective < self.history[-1] - 1e-9 * max(1.0, abs(self.history[-1])):
            drop = self.history[-1] - objective
            if self.is_exact:
                logger.warning(f"objective fell by {drop:.3g} at iteration {len(self.history) + 1}")
            else:
                logger.debug(f"objective fell by {drop:.3g} at iteration {len(self.history) + 1} (loopy graph)")
        self.history.append(objective)
        logger.debug(f"iteration {len(self.history)}: objective {objective:.8f}")

    @property
    def converged(self) -> bool:
        if len(self.history) < 2:
            return False
        previous, current = self.history[-2], self.history[-1]
        return abs(current - previous) <= self.tol * max(abs(previous), 1e-12)

    @property
    def finished(self) -> bool:
        return self.converged or len(self.history) >= self.max_iterations


def _e_step(graph, params, cycles, damping, messages, restart, iteration) -> Posterior:
    try:
        return run_bp(graph, params, cycles=cycles, damping=damping, messages=messages)
    except (ContradictoryEvidenceError, NonFiniteMessageError) as e:
        raise TrainingError(str(e), restart=restart, iteration=iteration) from e


def em_iterate(
    graph: FactorGraph,
    params: ModelParams,
    hyper: Hyperparams,
    iterations: int,
    config: Optional[TrainConfig] = None,
    messages: Optional[MessageState] = None,
) -> Tuple[ModelParams, Posterior, List[float]]:
    """
    Run a fixed number of E+M iterations from given parameters.

    A closing E step makes the returned posterior match the returned
    parameters. messages, when given, are warm-started and updated in place.

    Returns:
        (params, posterior, objective after each E step)
    """
    config = config or TrainConfig()
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    messages = messages if messages is not None else MessageState.uniform(graph)
    objectives = []
    for iteration in range(1, iterations + 1):
        posterior = _e_step(graph, params, config.bp_cycles, config.damping, messages, None, iteration)
        objectives.append(training_objective(graph, params, hyper, posterior))
        params = m_step(posterior, params, hyper, config)
    posterior = _e_step(graph, params, config.bp_cycles, config.damping, messages, None, iterations + 1)
    objectives.append(training_objective(graph, params, hyper, posterior))
    return params, posterior, objectives


def _run_restart(graph: FactorGraph, hyper: Hyperparams, config: TrainConfig, restart: int):
    seed = config.seed + restart
    rng = np.random.default_rng(seed)
    params = initial_params(rng, hyper)
    messages = MessageState.uniform(graph)
    monitor = ConvergenceMonitor(config.convergence_tol, config.max_iterations, graph.is_forest)
    logger.info(f"Restart {restart} (seed {seed}) started")

    while True:
        iteration = len(monitor.history) + 1
        posterior = _e_step(graph, params, config.bp_cycles, config.damping, messages, restart, iteration)
        monitor.report(training_objective(graph, params, hyper, posterior))
        if monitor.finished:
            break
        params = m_step(posterior, params, hyper, config)

    trace = RestartTrace(restart=restart, seed=seed, objectives=list(monitor.history), converged=monitor.converged)
    logger.info(
        f"Restart {restart} finished after {len(trace.objectives)} iterations: "
        f"objective {trace.final_objective:.4f}{'' if trace.converged else ' (iteration cap)'}"
    )
    return params, trace, posterior, messages


def train(schedule: Schedule, hyper: Hyperparams, config: Optional[TrainConfig] = None) -> FitResult:
    """
    Fit by EM with random restarts and keep the best.

    Args:
        schedule: Non-empty match schedule
        hyper: Dirichlet hyperparameters; fix S and G
        config: EM settings

    Returns:
        FitResult with the selected parameters, the full trace and the
        posterior and messages that go with the selected parameters
    """
    config = config or TrainConfig()
    if schedule.num_matches == 0:
        raise TrainingError("schedule has no matches")
    card = Cardinalities.for_states(hyper.num_strength_states, hyper.num_goal_states)
    graph = build_graph(schedule, card)
    logger.info(
        f"Training S={card.num_strength_states}, G={card.num_goal_states} on {schedule.num_matches} matches, "
        f"{schedule.num_weeks} weeks ({'tree' if graph.is_forest else 'loopy'} graph), {config.restarts} restarts"
    )

    if config.threads > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=min(config.threads, config.restarts)) as pool:
            results = list(pool.map(lambda r: _run_restart(graph, hyper, config, r), range(config.restarts)))
    else:
        results = [_run_restart(graph, hyper, config, r) for r in range(config.restarts)]

    finals = [trace.final_objective for _, trace, _, _ in results]
    selected = int(np.argmax(finals))
    params, _, posterior, messages = results[selected]
    trace = TrainTrace(restarts=[t for _, t, _, _ in results], selected=selected)

    problems = validate_params(params, monotonicity_tol=config.monotonicity_tol)
    if problems:
        raise TrainingError(f"trained parameters are invalid: {problems[0]}", restart=selected)
    logger.info(f"Selected restart {selected} with objective {finals[selected]:.4f}")
    return FitResult(params=params, trace=trace, graph=graph, posterior=posterior, messages=messages)


def em_fit(schedule: Schedule, hyper: Hyperparams, config: Optional[TrainConfig] = None) -> Tuple[ModelParams, TrainTrace]:
    """Best-restart parameters and the trace of every restart."""
    result = train(schedule, hyper, config)
    return result.params, result.trace
