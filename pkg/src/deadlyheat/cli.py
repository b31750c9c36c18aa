"""Command-line front end.

Every subcommand reads one JSON run configuration (``--config``), may
override a few fields with flags, and writes its outputs under
``<out>/<region>/`` together with a ``manifest.json`` that pins the config
hash, seed and file-format versions.  Exit status: 0 success, 1 usage or
configuration error, 2 data error.

Configuration keys (all optional except one of ``regions``/``synth``)::

    {
      "seed": 0,
      "out": "runs/demo",
      "regions": [{"name": "madrid", "level": "city", "mortality": "m.csv",
                   "meteo": "z.csv", "ssc": "ssc.csv", "holidays": "hol.csv"}],
      "synth": {"years": 20, "random_events": {"per_year": 3, "ratios": [0.05, 0.25, 0.45]}},
      "preprocess": {"impute": true, "scale_provincial": true},
      "transformer": {"epochs": 300},
      "glm": {"encoding": "categorical_harmonic", "harmonics": 2},
      "alarm": {"alpha_l1": 0.15, "alpha_l2": 0.30},
      "rolling": {"warmup_years": 2, "finetune_window": "new", "finetune_years": 1},
      "sweep": {"alpha_min": 0.01, "alpha_max": 0.5, "step": 0.001}
    }

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .decision import AlarmConfig, label_event
from .errors import ConfigError, DataError, DeadlyHeatError
from .evaluation import (RollingConfig, metrics, metrics_block, read_outcomes_csv, run_rolling, sweep,
                         write_metrics_json, write_outcomes_csv, write_sweep_csv, ConfusionCounts)
from .forecaster import FORMAT_VERSION as CHECKPOINT_VERSION
from .forecaster import TransformerConfig, load_checkpoint, predict_horizon, save_checkpoint, train
from .glm import GlmDesignConfig, baseline_for_year, predict_mean
from .synoptic import detect_heatwaves
from .synth import WorldParams, generate, random_events, write_world
from .timeseries import DailySeries, impute_meteo, impute_mortality, ingest_csv, scale_provincial, write_merged_csv

log = logging.getLogger("deadlyheat")

FORMAT_VERSIONS = {"manifest": 1, "checkpoint": CHECKPOINT_VERSION, "outcomes": 1, "metrics": 1, "sweep": 1,
                   "report": 1}
TOP_KEYS = {"seed", "out", "regions", "synth", "preprocess", "transformer", "glm", "alarm", "rolling", "sweep"}
REGION_KEYS = {"name", "level", "mortality", "meteo", "ssc", "holidays"}


# ---------------------------------------------------------------- configuration


def _build(cls, obj, section: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"'{section}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {unknown}")
    if "seed" in obj:
        raise ConfigError(f"'{section}.seed' is not allowed; set the top-level seed")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}': {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    out: Path = Path("out")
    regions: list = field(default_factory=list)
    synth: dict | None = None
    preprocess: dict = field(default_factory=lambda: {"impute": True, "scale_provincial": True})
    transformer: TransformerConfig = TransformerConfig()
    glm: GlmDesignConfig = GlmDesignConfig()
    alarm: AlarmConfig = AlarmConfig()
    rolling: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=lambda: {"alpha_min": 0.01, "alpha_max": 0.5, "step": 0.001})
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, obj: dict, base_dir: Path = Path(".")) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("the config must be a JSON object")
        unknown = sorted(set(obj) - TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        seed = obj.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        cfg = cls(seed=seed, raw=obj)
        cfg.out = base_dir / obj.get("out", "out")
        for i, r in enumerate(obj.get("regions", [])):
            if not isinstance(r, dict) or set(r) - REGION_KEYS or not {"name", "mortality", "meteo"} <= set(r):
                raise ConfigError(f"regions[{i}] needs name, mortality, meteo and only {sorted(REGION_KEYS)}")
            r = dict(r)
            for k in ("mortality", "meteo", "ssc", "holidays"):
                if r.get(k) is not None:
                    r[k] = base_dir / r[k]
            cfg.regions.append(r)
        if "synth" in obj:
            synth = dict(obj["synth"])
            if "seed" in synth:
                raise ConfigError("'synth.seed' is not allowed; set the top-level seed")
            ev = synth.pop("random_events", None)
            try:
                WorldParams.from_json(dict(synth, seed=0))
            except (ValueError, TypeError, KeyError) as exc:
                raise ConfigError(f"invalid 'synth': {exc}") from exc
            if ev is not None and (not isinstance(ev, dict) or set(ev) - {"per_year", "ratios", "lengths",
                                                                          "ssc_pattern", "skip_years"}):
                raise ConfigError("'synth.random_events' takes per_year, ratios, lengths, ssc_pattern, skip_years")
            cfg.synth = dict(synth, random_events=ev)
        if not cfg.regions and cfg.synth is None:
            raise ConfigError("config needs 'regions' or 'synth'")
        pre = obj.get("preprocess", {})
        if set(pre) - {"impute", "scale_provincial"}:
            raise ConfigError(f"unknown keys in 'preprocess': {sorted(set(pre) - {'impute', 'scale_provincial'})}")
        cfg.preprocess.update(pre)
        cfg.transformer = dataclasses.replace(_build(TransformerConfig, obj.get("transformer", {}), "transformer"),
                                              seed=seed)
        cfg.glm = _build(GlmDesignConfig, obj.get("glm", {}), "glm")
        cfg.alarm = _build(AlarmConfig, obj.get("alarm", {}), "alarm")
        roll = obj.get("rolling", {})
        bad = set(roll) - {"warmup_years", "finetune_window", "finetune_years"}
        if bad:
            raise ConfigError(f"unknown keys in 'rolling': {sorted(bad)}")
        cfg.rolling = dict(roll)
        sw = obj.get("sweep", {})
        if set(sw) - {"alpha_min", "alpha_max", "step"}:
            raise ConfigError("'sweep' takes alpha_min, alpha_max, step")
        cfg.sweep.update(sw)
        cfg.rolling_config()  # validate now
        return cfg

    def rolling_config(self) -> RollingConfig:
        try:
            return RollingConfig(transformer=self.transformer, glm=self.glm, alarm=self.alarm, **self.rolling)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid 'rolling': {exc}") from exc

    def canonical(self) -> dict:
        obj = dict(self.raw)
        obj["seed"] = self.seed
        obj["alarm"] = {"alpha_l1": self.alarm.alpha_l1, "alpha_l2": self.alarm.alpha_l2}
        return obj

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def world_params(self) -> WorldParams:
        synth = dict(self.synth)
        ev = synth.pop("random_events", None)
        years = synth.get("years", WorldParams.years)
        start_year = synth.get("start_year", WorldParams.start_year)
        if ev is not None:
            ev = dict(ev)
            synth["events"] = [e.to_json() for e in random_events(
                self.seed, start_year, years, ev.pop("per_year", 3), ev.pop("ratios", (0.05, 0.25, 0.45)),
                lengths=tuple(ev.pop("lengths", (5, 6, 7, 8))), **ev)]
        return WorldParams.from_json(dict(synth, seed=self.seed))


def load_config(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {p} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    if seed is not None:
        obj["seed"] = seed
    cfg = RunConfig.from_dict(obj, p.parent)
    if out is not None:
        cfg.out = Path(out)
    return cfg


# ---------------------------------------------------------------- data loading


@dataclass
class Region:
    name: str
    series: DailySeries
    truth: object = None
    params: WorldParams | None = None


def load_regions(cfg: RunConfig, only: str | None = None) -> list[Region]:
    regions = []
    if cfg.synth is not None:
        params = cfg.world_params()
        series, truth = generate(params)
        regions.append(Region(params.region_name, series, truth, params))
    for r in cfg.regions:
        level = r.get("level", "city")
        try:
            s = ingest_csv(r["mortality"], r["meteo"], r.get("ssc"), r.get("holidays"),
                           region_name=r["name"], level=level)
        except FileNotFoundError as exc:
            raise DataError(f"region {r['name']}: {exc}") from None
        if cfg.preprocess.get("impute", True):
            s = impute_meteo(impute_mortality(s))
        if level == "province" and cfg.preprocess.get("scale_provincial", True):
            s = scale_provincial(s)
        regions.append(Region(r["name"], s))
    if only is not None:
        regions = [r for r in regions if r.name == only]
        if not regions:
            raise ConfigError(f"no region named {only!r} in the config")
    return regions


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(directory: Path, cfg: RunConfig, command: str, extra: dict | None = None) -> Path:
    files = sorted(p for p in directory.rglob("*") if p.is_file() and p.name != "manifest.json")
    obj = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "config": cfg.canonical(),
        "seed": cfg.seed,
        "package_version": __version__,
        "format_versions": FORMAT_VERSIONS,
        "files": {p.relative_to(directory).as_posix(): _sha256(p) for p in files},
    }
    if extra:
        obj.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _region_dir(cfg: RunConfig, region: Region) -> Path:
    d = cfg.out / region.name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# ---------------------------------------------------------------- subcommands


def cmd_synth(cfg: RunConfig, args) -> int:
    if cfg.synth is None:
        raise ConfigError("the synth command needs a 'synth' section")
    for region in load_regions(cfg, args.region):
        if region.params is None:
            continue
        d = _region_dir(cfg, region)
        write_world(d, region.series, region.truth, region.params)
        write_manifest(d, cfg, "synth")
        print(f"{region.name}: {len(region.series)} days, {len(region.params.events)} events -> {d}")
    return 0


def cmd_ingest(cfg: RunConfig, args) -> int:
    for region in load_regions(cfg, args.region):
        d = _region_dir(cfg, region)
        write_merged_csv(region.series, d / "merged.csv")
        write_manifest(d, cfg, "ingest")
        print(f"{region.name}: {len(region.series)} days {region.series.start}..{region.series.end}")
    return 0


def cmd_detect(cfg: RunConfig, args) -> int:
    for region in load_regions(cfg, args.region):
        events = detect_heatwaves(region.series)
        d = _region_dir(cfg, region)
        _write_rows(d / "events.csv", ("start", "end", "length"),
                    [(e.start.isoformat(), e.end.isoformat(), e.length) for e in events])
        write_manifest(d, cfg, "detect")
        print(f"{region.name}: {len(events)} heatwaves")
    return 0


def cmd_label(cfg: RunConfig, args) -> int:
    for region in load_regions(cfg, args.region):
        s = region.series
        fits = {}
        rows = []
        for e in detect_heatwaves(s):
            y = e.start.year
            if y - 2 < s.start.year:
                continue  # no two-year baseline window
            if y not in fits:
                fits[y] = baseline_for_year(s, y, cfg.glm)
            level, r = label_event(s, fits[y], e)
            rows.append((e.start.isoformat(), e.end.isoformat(), level.name, repr(r)))
        d = _region_dir(cfg, region)
        _write_rows(d / "labels.csv", ("event_start", "event_end", "level", "ratio"), rows)
        write_manifest(d, cfg, "label")
        print(f"{region.name}: {len(rows)} labelled events")
    return 0


def _cutoff(series: DailySeries, date: str | None) -> int:
    if date is None:
        return len(series)
    try:
        return series.index_of(dt.date.fromisoformat(date))
    except ValueError:
        raise ConfigError(f"--date {date!r} is not an ISO date") from None
    except KeyError as exc:
        raise DataError(str(exc)) from None


def cmd_train(cfg: RunConfig, args) -> int:
    for region in load_regions(cfg, args.region):
        stop = _cutoff(region.series, args.date)
        res = train(region.series, config=cfg.transformer, stop=stop, seed=cfg.seed)
        d = _region_dir(cfg, region)
        save_checkpoint(d / "model.json", res, extra={"train_end": region.series.date(stop - 1).isoformat()})
        write_manifest(d, cfg, "train")
        print(f"{region.name}: trained on {stop} days, final loss {res.loss_trace[-1]:.6f}")
    return 0


def cmd_forecast(cfg: RunConfig, args) -> int:
    if args.date is None:
        raise ConfigError("forecast needs --date (the forecast origin)")
    for region in load_regions(cfg, args.region):
        d = _region_dir(cfg, region)
        ckpt = Path(args.checkpoint) if args.checkpoint else d / "model.json"
        if not ckpt.exists():
            raise DataError(f"checkpoint {ckpt} not found; run 'train' first")
        weights, _, _ = load_checkpoint(ckpt)
        s = region.series
        t = _cutoff(s, args.date)
        all_cause = predict_horizon(weights, s.slice(0, t + 1), t)
        dates = [s.date(t) + dt.timedelta(days=k) for k in range(1, weights.config.h + 1)]
        glm = baseline_for_year(s, s.date(t).year, cfg.glm)
        base = predict_mean(glm, dates, s.holidays)
        rows = [(day.isoformat(), repr(float(a)), repr(float(b)), repr(float((a - b) / b)))
                for day, a, b in zip(dates, all_cause, base)]
        _write_rows(d / f"forecast_{s.date(t).isoformat()}.csv", ("date", "all_cause", "baseline", "ratio"), rows)
        write_manifest(d, cfg, "forecast")
        for r in rows:
            print(region.name, *r, sep=",")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    rcfg = cfg.rolling_config()
    for region in load_regions(cfg, args.region):
        d = _region_dir(cfg, region)
        ck_dir = d / "checkpoints"

        def keep(year, res, glm):
            save_checkpoint(ck_dir / f"{year}.json", res, extra={"year": year})
            (d / "baselines").mkdir(exist_ok=True)
            (d / "baselines" / f"{year}.json").write_text(json.dumps(glm.to_json(), sort_keys=True) + "\n",
                                                          encoding="utf-8")

        result = run_rolling(region.series, rcfg, on_year=keep)
        write_outcomes_csv(result.outcomes, cfg.alarm, d / "outcomes.csv")
        write_metrics_json(result.outcomes, cfg.alarm, d / "metrics.json", region=region.name)
        write_manifest(d, cfg, "evaluate")
        for level in ("l1", "l2"):
            c = metrics_block(result.outcomes, level, cfg.alarm.alpha(level))
            print(f"{region.name} {level.upper()}: {c['counts']} {c['metrics']}")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    level = args.level or "l1"
    for region in load_regions_names(cfg, args.region):
        d = cfg.out / region
        path = d / "outcomes.csv"
        if not path.exists():
            raise DataError(f"{path} not found; run 'evaluate' first")
        outcomes = read_outcomes_csv(path)
        if not outcomes:
            raise DataError(f"{path} has no events to sweep")
        points = sweep(outcomes, level, **cfg.sweep)
        write_sweep_csv(points, d / f"sweep_{level}.csv")
        print(f"{region}: {len(points)} thresholds -> {d / f'sweep_{level}.csv'}")
    return 0


def load_regions_names(cfg: RunConfig, only: str | None) -> list[str]:
    names = [r["name"] for r in cfg.regions]
    if cfg.synth is not None:
        names.insert(0, cfg.synth.get("region_name", WorldParams.region_name))
    if only is not None:
        if only not in names:
            raise ConfigError(f"no region named {only!r} in the config")
        names = [only]
    return names


def cmd_report(cfg: RunConfig, args) -> int:
    names = load_regions_names(cfg, args.region)
    blocks = {}
    for name in names:
        p = cfg.out / name / "metrics.json"
        if not p.exists():
            raise DataError(f"{p} not found; run 'evaluate' first")
        blocks[name] = json.loads(p.read_text(encoding="utf-8"))
    rows = []
    for level in ("l1", "l2"):
        pooled = ConfusionCounts()
        per = {}
        for name in names:
            c = ConfusionCounts(**blocks[name][level]["counts"])
            pooled = pooled + c
            per[name] = metrics(c).percent() if c.total else None
        per["Total"] = metrics(pooled).percent() if pooled.total else None
        for key, label in (("accuracy", "Acc."), ("precision", "Pr."), ("recall", "Rec."), ("f1", "F1")):
            rows.append([level.upper(), label] + [("-" if per[n] is None else per[n][key]) for n in names + ["Total"]])
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_rows(cfg.out / "report.csv", ["level", "metric"] + names + ["Total"], rows)
    for r in rows:
        print(",".join(r))
    return 0


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic world (CSV files + truth.json)"),
    "ingest": (cmd_ingest, "validate, impute and merge region CSV files"),
    "detect": (cmd_detect, "write detected heatwave events"),
    "label": (cmd_label, "write observed event levels from the two-year baseline"),
    "train": (cmd_train, "train the forecaster and write a checkpoint"),
    "forecast": (cmd_forecast, "write the h-day forecast from a --date origin"),
    "evaluate": (cmd_evaluate, "rolling real-time run: outcomes, metrics, per-year checkpoints"),
    "sweep": (cmd_sweep, "alpha/fpr/fnr trade-off curve from cached outcomes"),
    "report": (cmd_report, "aggregate region metrics into one table"),
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deadlyheat", description="Deadly-heatwave early warning pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--level", choices=("l1", "l2"), help="heatwave level for --alpha / sweep")
        p.add_argument("--alpha", type=float, help="alarm threshold for --level")
        p.add_argument("--region", help="restrict to one region")
        p.add_argument("--date", help="ISO date: forecast origin / training cutoff")
        p.add_argument("--checkpoint", help="checkpoint for 'forecast' (default <out>/<region>/model.json)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.alpha is not None:
            level = args.level or "l1"
            values = {"alpha_l1": cfg.alarm.alpha_l1, "alpha_l2": cfg.alarm.alpha_l2, f"alpha_{level}": args.alpha}
            try:
                cfg.alarm = AlarmConfig(**values)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, DeadlyHeatError, OSError, np.linalg.LinAlgError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
