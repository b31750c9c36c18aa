"""A guided tour of the library API on a small synthetic city.

Run with ``python demos/walkthrough.py``.  Each step prints what it found so
the output reads as a short story: build a world, find its heatwaves, label
them against a two-year baseline, forecast one of them from its first day,
and finally replay the whole thing in real time.
"""

import datetime as dt

import numpy as np

from deadlyheat.decision import ForecastBundle, decide_alarm, label_event
from deadlyheat.evaluation import RollingConfig, metrics, run_rolling, sweep, tally
from deadlyheat.forecaster import TransformerConfig, predict_horizon, train
from deadlyheat.glm import baseline_for_year, predict_mean
from deadlyheat.synoptic import detect_heatwaves
from deadlyheat.synth import WorldParams, generate, random_events, truth_label


def main():
    events = random_events(seed=7, start_year=2000, years=5, per_year=3, ratios=(0.05, 0.25, 0.45),
                           lengths=(6, 7, 8))
    params = WorldParams(years=5, events=events, seed=7, precursor_days=4, temp_boost_per_excess=30.0)
    series, truth = generate(params)
    print(f"1. world: {len(series)} days, mean deaths {series.deaths.mean():.1f}/day, {len(events)} injected events")

    found = detect_heatwaves(series)
    print(f"2. synoptic detector found {len(found)} heatwaves, e.g. {found[0].start}..{found[0].end}")

    year = 2003
    glm = baseline_for_year(series, year)
    print(f"3. baseline for {year} fit on {year - 2}-{year - 1}: dispersion {glm.dispersion:.2f}")
    for e in [e for e in found if e.start.year == year]:
        level, ratio = label_event(series, glm, e)
        print(f"   {e.start}: observed max excess {ratio:+.2f} -> {level.name} (designed {truth_label(truth, e).name})")

    cfg = TransformerConfig(epochs=40)  # a short schedule keeps the tour quick; the default is 300 epochs
    model = train(series, config=cfg, stop=series.year_start_index(year), seed=0)
    e = next(e for e in found if e.start.year == year)
    t = series.index_of(e.start) - 1
    all_cause = predict_horizon(model.weights, series.slice(0, t + 1), t)
    days = [series.date(t) + dt.timedelta(days=k) for k in range(1, cfg.h + 1)]
    bundle = ForecastBundle(days, all_cause, predict_mean(glm, days, series.holidays))
    visible = [d for d in days if e.start <= d <= e.end]
    print(f"4. forecast from {series.date(t)}: ratios {np.round(bundle.ratios, 2)}, "
          f"L1 alarm={decide_alarm(bundle, visible, 0.15)}")

    result = run_rolling(series, RollingConfig(transformer=cfg))
    for level, alpha in (("l1", 0.15), ("l2", 0.30)):
        m = metrics(tally(result.outcomes, level, alpha))
        print(f"5. rolling replay {level.upper()}: {m.percent()}")
    best = min(sweep(result.outcomes, "l1"), key=lambda p: (p.fpr or 0) + (p.fnr or 0))
    print(f"6. sweep: alpha {best.alpha:.3f} balances fpr {best.fpr} and fnr {best.fnr}")


if __name__ == "__main__":
    main()
