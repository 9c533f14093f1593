"""
Storage Module - model files and tabular outputs

Models and Elo ratings are JSON; everything tabular is CSV. Every file is
written to a temporary sibling first and moved into place with os.replace.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .baselines import EloModel
from .domain import Cardinalities, Hyperparams, ModelParams, Posterior, Schedule
from .errors import ConfigError
from .graph_engine import export_posterior_csv
from .ingest import format_date, schedule_sidecar, serialize_matches
from .predictor import ScorelineDistribution, TimelinePoint, wdl

logger = logging.getLogger(__name__)

MODEL_FORMAT = "team-strength-model/1"
PARAM_BLOCKS = ("pi", "rho", "omega_within", "omega_between", "delta_within", "delta_between", "psi", "gamma_cpt")
PathLike = Union[str, Path]


def atomic_write(path: PathLike, text: str) -> Path:
    """Write text to path via a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    logger.debug(f"Wrote {path}")
    return path


def _canonical(body: Dict[str, Any]) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def content_hash(body: Dict[str, Any]) -> str:
    return hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest()


# ============================================================================
# MODEL FILES
# ============================================================================

@dataclass
class StoredModel:
    params: ModelParams
    hyper: Hyperparams
    card: Cardinalities
    train_config: Dict[str, Any] = field(default_factory=dict)
    final_objective: Optional[float] = None
    team_names: Dict[int, str] = field(default_factory=dict)
    ingest: Dict[str, Any] = field(default_factory=dict)
    content_hash: str = ""


def save_model(
    path: PathLike,
    params: ModelParams,
    hyper: Hyperparams,
    train_config: Optional[Any] = None,
    final_objective: Optional[float] = None,
    team_names: Optional[Mapping[int, str]] = None,
    ingest_settings: Optional[Mapping[str, Any]] = None,
) -> str:
    """
    Write a model JSON file and return its content hash.

    The hash is SHA-256 over the canonical (sorted, compact) JSON of the
    body, so the same model always yields the same file. ingest_settings
    records how the training matches were read (season gap, strictness,
    column overrides) so later commands rebuild the same schedule.
    """
    config = asdict(train_config) if train_config is not None and not isinstance(train_config, dict) else train_config
    body = {
        "format": MODEL_FORMAT,
        "cardinalities": {
            "num_strength_states": params.num_strength_states,
            "num_goal_states": params.num_goal_states,
        },
        "params": {name: getattr(params, name).tolist() for name in PARAM_BLOCKS},
        "hyperparams": {
            "alpha_within": hyper.alpha_within.tolist(),
            "alpha_between": hyper.alpha_between.tolist(),
            "beta": hyper.beta.tolist(),
            "phi": hyper.phi.tolist(),
            "c_transition": float(hyper.c_transition),
            "c_goal": float(hyper.c_goal),
        },
        "train_config": config or {},
        "final_objective": None if final_objective is None else float(final_objective),
        "teams": {str(team): name for team, name in sorted((team_names or {}).items())},
        "ingest": dict(ingest_settings or {}),
    }
    digest = content_hash(body)
    document = dict(body, content_hash=digest)
    atomic_write(path, json.dumps(document, indent=2, sort_keys=True) + "\n")
    logger.info(f"Saved model to {path} (hash {digest[:12]})")
    return digest


def load_model(path: PathLike) -> StoredModel:
    """Read a model file written by save_model; a tampered file is rejected."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    document = json.loads(path.read_text(encoding="utf-8"))
    stored_hash = document.pop("content_hash", None)
    if document.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a {MODEL_FORMAT} file")
    if stored_hash != content_hash(document):
        raise ValueError(f"{path}: content hash does not match the model body")

    card_doc = document["cardinalities"]
    card = Cardinalities.for_states(card_doc["num_strength_states"], card_doc["num_goal_states"])
    params = ModelParams(**{name: np.array(document["params"][name], dtype=float) for name in PARAM_BLOCKS})
    if (params.num_strength_states, params.num_goal_states) != (card.num_strength_states, card.num_goal_states):
        raise ConfigError(f"{path}: parameter shapes do not match the declared cardinalities")
    hyper_doc = document["hyperparams"]
    hyper = Hyperparams(
        alpha_within=np.array(hyper_doc["alpha_within"]),
        alpha_between=np.array(hyper_doc["alpha_between"]),
        beta=np.array(hyper_doc["beta"]),
        phi=np.array(hyper_doc["phi"]),
        c_transition=hyper_doc["c_transition"],
        c_goal=hyper_doc["c_goal"],
    )
    return StoredModel(
        params=params,
        hyper=hyper,
        card=card,
        train_config=document.get("train_config", {}),
        final_objective=document.get("final_objective"),
        team_names={int(team): name for team, name in document.get("teams", {}).items()},
        ingest=document.get("ingest", {}),
        content_hash=stored_hash,
    )


# ============================================================================
# ELO FILES
# ============================================================================

def save_elo_model(path: PathLike, model: EloModel, team_names: Optional[Mapping[int, str]] = None) -> Path:
    names = team_names or {}
    document = {
        "ratings": {names.get(team, str(team)): rating for team, rating in sorted(model.ratings.items())},
        "k_factor": model.k_factor,
        "home_advantage": model.home_advantage,
        "thresholds": list(model.thresholds),
    }
    return atomic_write(path, json.dumps(document, indent=2) + "\n")


def load_elo_model(path: PathLike, team_ids: Optional[Mapping[str, int]] = None) -> EloModel:
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    ids = team_ids or {}
    ratings = {ids.get(name, int(name) if name.isdigit() else name): float(r) for name, r in document["ratings"].items()}
    return EloModel(
        ratings=ratings,
        k_factor=float(document["k_factor"]),
        home_advantage=float(document["home_advantage"]),
        thresholds=tuple(document["thresholds"]),
    )


# ============================================================================
# CSV OUTPUTS
# ============================================================================

def _write_frame(path: PathLike, frame: pd.DataFrame) -> Path:
    return atomic_write(path, frame.to_csv(index=False, lineterminator="\n"))


def write_matches_csv(path: PathLike, schedule: Schedule) -> Tuple[Path, Path]:
    """Canonical match CSV plus its JSON sidecar (same stem, .json)."""
    path = Path(path)
    csv_path = atomic_write(path, serialize_matches(schedule.records()))
    sidecar = atomic_write(path.with_suffix(".json"), json.dumps(schedule_sidecar(schedule), indent=2) + "\n")
    return csv_path, sidecar


def write_trace_csv(path: PathLike, trace) -> Path:
    return _write_frame(path, pd.DataFrame(trace.rows(), columns=["restart", "iteration", "objective"]))


def write_timeline_csv(path: PathLike, rows: Sequence[Tuple[str, str, TimelinePoint]]) -> Path:
    """rows: (team name, role, point)."""
    frame = pd.DataFrame(
        [(team, role, p.week, p.date.isoformat(), p.strength) for team, role, p in rows],
        columns=["team_name", "role", "week", "date", "strength"],
    )
    return _write_frame(path, frame)


def prediction_row(match_date, home: str, away: str, dist: ScorelineDistribution) -> Dict[str, Any]:
    triple = wdl(dist)
    row = {
        "date": format_date(match_date) if match_date is not None else "",
        "home": home,
        "away": away,
        "p_win": triple.p_home_win,
        "p_draw": triple.p_draw,
        "p_away": triple.p_away_win,
    }
    G = dist.joint.shape[0]
    for gh in range(G):
        for ga in range(G):
            row[f"g{gh}_{ga}"] = float(dist.joint[gh, ga])
    return row


def write_predictions_csv(path: PathLike, rows: Sequence[Dict[str, Any]]) -> Path:
    return _write_frame(path, pd.DataFrame(list(rows)))


def write_eval_csv(path: PathLike, rows) -> Path:
    from .harness import METHODS

    records = []
    for row in rows:
        record = {
            "week": row.week,
            "date": row.date.isoformat(),
            "home": row.home,
            "away": row.away,
            "outcome": row.outcome,
        }
        record.update({f"p_{m}": row.probability(m) for m in METHODS})
        record.update({f"ll_{m}": row.log_likelihood(m) for m in METHODS})
        records.append(record)
    columns = ["week", "date", "home", "away", "outcome"] + [f"p_{m}" for m in METHODS] + [f"ll_{m}" for m in METHODS]
    return _write_frame(path, pd.DataFrame(records, columns=columns))


def write_net_series_csv(path: PathLike, series: List[Dict[str, Any]]) -> Path:
    columns = ["week", "cum_net_vs_naive", "cum_net_vs_elo", "cum_net_vs_book"]
    return _write_frame(path, pd.DataFrame(series, columns=columns))


def write_posterior_csv(path: PathLike, posterior: Posterior) -> Path:
    return atomic_write(path, export_posterior_csv(posterior))


def write_latents_csv(path: PathLike, simulated) -> Path:
    schedule = simulated.schedule
    bridged = schedule.bridged
    frame = pd.DataFrame(
        [(schedule.name_of(team), week, simulated.offense[(team, week)], simulated.defense[(team, week)],
          week in bridged.get(team, ()))
         for team, week in sorted(simulated.offense)],
        columns=["team", "week", "offense", "defense", "bridged"],
    )
    return _write_frame(path, frame)
