"""
Ingest Module - football-data.co.uk style match files

Parses match CSVs into MatchRecords, buckets them into weeks with season
boundaries, and turns bookmaker decimal odds into implied probabilities.
"""

import io
import logging
from dataclasses import dataclass, fields, replace
from datetime import date, datetime
from itertools import groupby
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from .domain import MatchRecord, PredictionTriple, Schedule
from .errors import IngestError, ScheduleError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CsvSchema:
    """Column names of a match file. Odds and season columns are optional."""
    date: str = "Date"
    home: str = "HomeTeam"
    away: str = "AwayTeam"
    home_goals: str = "FTHG"
    away_goals: str = "FTAG"
    odds_home: str = "WHH"
    odds_draw: str = "WHD"
    odds_away: str = "WHA"
    season: str = "Season"

    REQUIRED = ("date", "home", "away", "home_goals", "away_goals")

    def with_overrides(self, overrides: Mapping[str, str]) -> "CsvSchema":
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ValueError(f"unknown schema fields: {', '.join(unknown)}")
        return replace(self, **dict(overrides))


@dataclass
class RowIssue:
    """A row skipped in lenient mode."""
    line: int
    reason: str


def parse_date(text: str) -> date:
    """DD/MM/YY or DD/MM/YYYY; two-digit years below 50 are 20xx."""
    parts = text.strip().split("/")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"malformed date {text!r}")
    day, month, year = parts
    if len(year) == 2:
        yy = int(year)
        full_year = 2000 + yy if yy < 50 else 1900 + yy
    elif len(year) == 4:
        full_year = int(year)
    else:
        raise ValueError(f"malformed date {text!r}")
    try:
        return datetime(full_year, int(month), int(day)).date()
    except ValueError:
        raise ValueError(f"malformed date {text!r}")


def format_date(value: date) -> str:
    return value.strftime("%d/%m/%Y")


def _parse_goals(text: str, column: str) -> int:
    text = text.strip()
    if not text.isdigit():
        raise ValueError(f"non-integer goals {text!r} in {column}")
    return int(text)


def _parse_odds(row: Mapping[str, str], schema: CsvSchema, line: int) -> Optional[Tuple[float, float, float]]:
    cells = [row.get(col, "") for col in (schema.odds_home, schema.odds_draw, schema.odds_away)]
    if any(cell is None or not str(cell).strip() for cell in cells):
        return None
    try:
        odds = tuple(float(cell) for cell in cells)
    except ValueError:
        logger.warning(f"line {line}: dropping unreadable odds {cells}")
        return None
    if any(not o > 1.0 for o in odds):
        logger.warning(f"line {line}: dropping odds {odds} (decimal odds must exceed 1.0)")
        return None
    return odds


_RAGGED = "\x00ragged"


def _read_rows(csv_text: str) -> Tuple[pd.DataFrame, List[int]]:
    """
    Read a CSV as strings, keeping one frame row per data line.

    A line with more fields than the header is kept as a row of _RAGGED
    markers; its field count is appended to the returned list.
    """
    try:
        width = len(pd.read_csv(io.StringIO(csv_text), nrows=0).columns)
        ragged: List[int] = []

        def on_bad_line(cells: List[str]) -> List[str]:
            ragged.append(len(cells))
            return [_RAGGED] * width

        # header=None so the header line, not the first data line, fixes the width
        raw = pd.read_csv(io.StringIO(csv_text), header=None, names=list(range(width)), dtype=str,
                          keep_default_na=False, skip_blank_lines=False, engine="python", on_bad_lines=on_bad_line)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"unreadable CSV: {e}")
    raw = raw.fillna("")
    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = [str(c).strip() for c in raw.iloc[0]]
    return frame, ragged


def _ragged_reason(row: Mapping[str, str], width: int, ragged: List[int]) -> Optional[str]:
    if row and all(v == _RAGGED for v in row.values()):
        return f"expected {width} fields, saw {ragged.pop(0)}"
    return None


def parse_matches_with_issues(
    csv_text: str,
    schema: Optional[CsvSchema] = None,
    goal_cap: int = 4,
    strict: bool = True,
) -> Tuple[List[MatchRecord], List[RowIssue]]:
    """
    Parse a match CSV.

    In strict mode the first bad row raises IngestError; otherwise bad rows
    are skipped and returned as RowIssues.
    """
    schema = schema or CsvSchema()
    if not csv_text.strip():
        raise IngestError("missing header row", line=1)
    frame, ragged = _read_rows(csv_text)
    columns = list(frame.columns)
    missing = [getattr(schema, name) for name in CsvSchema.REQUIRED if getattr(schema, name) not in columns]
    if missing:
        raise IngestError(f"unknown required column(s): {', '.join(missing)}", line=1)

    team_ids: Dict[str, int] = {}
    records: List[MatchRecord] = []
    issues: List[RowIssue] = []

    for position, row in enumerate(frame.to_dict(orient="records")):
        line = position + 2
        if all(not str(v).strip() for v in row.values()):
            continue
        try:
            reason = _ragged_reason(row, len(columns), ragged)
            if reason:
                raise ValueError(reason)
            match_date = parse_date(row[schema.date])
            home_name = row[schema.home].strip()
            away_name = row[schema.away].strip()
            if not home_name or not away_name:
                raise ValueError("empty team name")
            raw_home = _parse_goals(row[schema.home_goals], schema.home_goals)
            raw_away = _parse_goals(row[schema.away_goals], schema.away_goals)
            if home_name == away_name:
                raise ValueError(f"{home_name} cannot play itself")
        except ValueError as e:
            if strict:
                raise IngestError(str(e), line=line)
            logger.warning(f"line {line}: skipped ({e})")
            issues.append(RowIssue(line=line, reason=str(e)))
            continue

        for name in (home_name, away_name):
            team_ids.setdefault(name, len(team_ids))
        season = row.get(schema.season, "").strip() or None
        records.append(MatchRecord.create(
            match_date,
            team_ids[home_name],
            team_ids[away_name],
            raw_home,
            raw_away,
            goal_cap=goal_cap,
            odds=_parse_odds(row, schema, line),
            season=season,
            home_name=home_name,
            away_name=away_name,
        ))

    logger.info(f"Parsed {len(records)} matches between {len(team_ids)} teams ({len(issues)} rows skipped)")
    return records, issues


def parse_matches(
    csv_text: str,
    schema: Optional[CsvSchema] = None,
    goal_cap: int = 4,
    strict: bool = True,
) -> List[MatchRecord]:
    """
    Parse a match CSV into MatchRecords.

    Args:
        csv_text: Whole file contents, header row first
        schema: Column names (football-data.co.uk defaults)
        goal_cap: Goals above this are capped (raw values are kept)
        strict: Abort on the first bad row instead of skipping it

    Returns:
        One record per data row, team ids in first-appearance order
    """
    records, _ = parse_matches_with_issues(csv_text, schema, goal_cap, strict)
    return records


def parse_fixtures(csv_text: str, schema: Optional[CsvSchema] = None) -> List[Tuple[date, str, str]]:
    """Upcoming fixtures: (date, home name, away name); goal columns are ignored."""
    schema = schema or CsvSchema()
    frame, ragged = _read_rows(csv_text)
    for col in (schema.date, schema.home, schema.away):
        if col not in frame.columns:
            raise IngestError(f"unknown required column(s): {col}", line=1)
    fixtures = []
    for position, row in enumerate(frame.to_dict(orient="records")):
        if all(not str(v).strip() for v in row.values()):
            continue
        try:
            reason = _ragged_reason(row, len(frame.columns), ragged)
            if reason:
                raise ValueError(reason)
            fixtures.append((parse_date(row[schema.date]), row[schema.home].strip(), row[schema.away].strip()))
        except ValueError as e:
            raise IngestError(str(e), line=position + 2)
    return fixtures


def serialize_matches(records: Sequence[MatchRecord], schema: Optional[CsvSchema] = None) -> str:
    """Canonical CSV for records (raw goals, optional odds, season)."""
    schema = schema or CsvSchema()
    rows = []
    for rec in records:
        odds = rec.odds or ("", "", "")
        rows.append({
            schema.date: format_date(rec.date),
            schema.home: rec.home_name,
            schema.away: rec.away_name,
            schema.home_goals: rec.raw_home_goals,
            schema.away_goals: rec.raw_away_goals,
            schema.odds_home: repr(odds[0]) if rec.odds else "",
            schema.odds_draw: repr(odds[1]) if rec.odds else "",
            schema.odds_away: repr(odds[2]) if rec.odds else "",
            schema.season: rec.season or "",
        })
    columns = [schema.date, schema.home, schema.away, schema.home_goals, schema.away_goals,
               schema.odds_home, schema.odds_draw, schema.odds_away, schema.season]
    return pd.DataFrame(rows, columns=columns).to_csv(index=False, lineterminator="\n")


def _split_window(
    window: List[MatchRecord],
    split_double_fixtures: bool,
    week_offset: int,
) -> List[List[MatchRecord]]:
    """Break a 7-day window wherever a team would play twice."""
    buckets: List[List[MatchRecord]] = []
    current: List[MatchRecord] = []
    in_bucket: set = set()
    for day, day_iter in groupby(window, key=lambda r: r.date):
        day_records = list(day_iter)
        day_teams: set = set()
        for rec in day_records:
            for team, name in ((rec.home, rec.home_name), (rec.away, rec.away_name)):
                if team in day_teams:
                    raise ScheduleError(f"team {name} plays twice on {day.isoformat()}")
                day_teams.add(team)
        clash = in_bucket & day_teams
        if clash:
            if not split_double_fixtures:
                names = sorted(rec.home_name if rec.home in clash else rec.away_name
                               for rec in day_records if rec.home in clash or rec.away in clash)
                raise ScheduleError(f"team {names[0]} plays twice in week {week_offset + len(buckets) + 1}")
            buckets.append(current)
            current, in_bucket = [], set()
        current.extend(day_records)
        in_bucket |= day_teams
    buckets.append(current)
    return buckets


def bucket_weeks(
    records: Sequence[MatchRecord],
    season_gap_days: int = 45,
    split_double_fixtures: bool = True,
) -> Schedule:
    """
    Bucket records into 7-day weeks anchored at the earliest match.

    Empty windows are dropped. A window in which a team plays twice is split
    at the date of its second fixture (or rejected when split_double_fixtures
    is False). Consecutive weeks more than season_gap_days apart, or whose
    season ids differ, are separated by a season boundary.
    """
    if not records:
        raise ScheduleError("no matches to schedule")

    ordered = [rec for _, rec in sorted(enumerate(records), key=lambda p: (p[1].date, p[0]))]
    seen = set()
    for rec in ordered:
        key = (rec.home, rec.away, rec.date)
        if key in seen:
            raise ScheduleError(f"duplicate match {rec.home_name} v {rec.away_name} on {rec.date.isoformat()}")
        seen.add(key)

    anchor = ordered[0].date
    buckets: List[List[MatchRecord]] = []
    for _, window_iter in groupby(ordered, key=lambda r: (r.date - anchor).days // 7):
        buckets.extend(_split_window(list(window_iter), split_double_fixtures, len(buckets)))
    splits = len(buckets) - len({(r.date - anchor).days // 7 for r in ordered})

    boundaries = set()
    for week_id in range(2, len(buckets) + 1):
        previous, current = buckets[week_id - 2], buckets[week_id - 1]
        gap = (current[0].date - max(r.date for r in previous)).days
        before, after = previous[-1].season, current[0].season
        if gap > season_gap_days or (before is not None and after is not None and before != after):
            boundaries.add(week_id)

    # Fill in season ids for records that came without one
    labelled: List[List[MatchRecord]] = []
    season_number = 0
    label = None
    for week_id, bucket in enumerate(buckets, start=1):
        if week_id == 1 or week_id in boundaries:
            season_number += 1
            given = next((r.season for r in bucket if r.season), None)
            label = given or f"season-{season_number}"
        labelled.append([r if r.season else replace(r, season=label) for r in bucket])

    names = {}
    for rec in ordered:
        names.setdefault(rec.home, rec.home_name)
        names.setdefault(rec.away, rec.away_name)

    schedule = Schedule.from_weeks(
        labelled,
        [bucket[0].date for bucket in labelled],
        boundaries,
        team_names=names,
    )
    logger.info(
        f"Scheduled {len(ordered)} matches into {schedule.num_weeks} weeks, "
        f"{len(boundaries) + 1} seasons ({splits} double-fixture splits)"
    )
    return schedule


def schedule_sidecar(schedule: Schedule) -> Dict:
    """Team id <-> name and week id -> date range, for the canonical match file."""
    weeks = {}
    for week_id, bucket in enumerate(schedule.weeks, start=1):
        dates = [rec.date for rec in bucket] or [schedule.week_date(week_id)]
        weeks[str(week_id)] = [min(dates).isoformat(), max(dates).isoformat()]
    return {
        "teams": {str(team): schedule.name_of(team) for team in sorted(schedule.team_names)},
        "weeks": weeks,
        "season_boundaries": sorted(schedule.season_boundaries),
    }


def implied_probabilities(odds: Sequence[float]) -> PredictionTriple:
    """
    Bookmaker-implied home/draw/away probabilities.

    Inverse decimal odds are normalized proportionally, which removes the
    overround.
    """
    if len(odds) != 3:
        raise ValueError(f"need three decimal odds, got {len(odds)}")
    if any(not o > 1.0 for o in odds):
        raise ValueError(f"decimal odds must exceed 1.0, got {tuple(odds)}")
    inverse = [1.0 / o for o in odds]
    total = sum(inverse)
    p_home, p_draw = inverse[0] / total, inverse[1] / total
    return PredictionTriple(p_home, p_draw, 1.0 - p_home - p_draw)
