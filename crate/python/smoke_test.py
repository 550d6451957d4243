"""Smoke test for the advbid Python bindings.

Build and install the extension first:

    pip install --no-build-isolation -e crates/py

then run `python python/smoke_test.py`.
"""

import json
import sys
import tempfile
import time
from pathlib import Path

import advbid


def main() -> int:
    start = time.time()
    smoke = advbid.default_config(smoke=True)

    days = advbid.generate(smoke)
    day = days[0]
    print(day)
    assert day.slots == 8 and len(day) > 0
    assert all(k == 0.0 for k in day.mix_ratios) == (day.mechanism == "GSP")
    assert advbid.Day.from_json(day.to_json()).day_id == day.day_id

    expert = advbid.solve(day)
    print(expert)
    out = advbid.replay(day, expert.ratios)
    cr, tacr, cr_at_gamma = advbid.score(day, out, expert.utility)
    print(out, f"cr={cr:.4f} tacr={tacr:.4f}")
    assert abs(cr - 1.0) < 0.01 and tacr <= cr_at_gamma
    assert advbid.tolerance_level(0.975, 1.0) == 3

    try:
        advbid.replay(day, [float("nan")])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid ratios must raise ValueError")

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        try:
            advbid.run_expert(root / "missing", root / "experts")
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("a missing dataset must raise FileNotFoundError")

        manifest = json.loads(advbid.run_gen(root / "dataset", smoke))
        assert manifest["stage"] == "gen"
        advbid.run_expert(root / "dataset", root / "experts")
        for algo in ("mirocl", "pid"):
            advbid.run_train(algo, 0, root / "dataset", root / "experts", root / "train" / algo)
            _, tacr = advbid.run_eval(root / "train" / algo, root / "dataset", root / "experts", root / "eval" / algo)
            print(f"{algo}: test TACR {tacr:.4f}")
        print(advbid.run_report([root / "eval"], root / "report"))
        played = advbid.act(root / "train" / "mirocl", root / "dataset", root / "experts", day.day_id)
        assert len(played.ratios) == day.slots

    print(f"ok in {time.time() - start:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
