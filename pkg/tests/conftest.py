"""Shared fixtures: the 459-record survey-style condition manifest."""

from grapedet.data import DatasetManifest, ImageRecord
from grapedet.geometry import NormBox


def make_record(i=0, **kwargs):
    defaults = dict(
        image_path=f"images/img_{i:04d}.png",
        width=100,
        height=100,
        variety="chardonnay",
        weather="sunny",
        maturity="immature",
        sunlight="morning",
        capture_date="2019-07-15",
        vine_id=f"vine_{i:04d}",
        source_id=f"src_{i:04d}",
        boxes=[NormBox(0.5, 0.5, 0.2, 0.2)],
    )
    defaults.update(kwargs)
    return ImageRecord(**defaults)


# Survey-style condition fixture: 459 records over two varieties whose
# per-dimension marginals are fixed; maturity is unset outside the two
# compared growth stages.
CHARDONNAY = dict(
    total=234,
    weather={"sunny": 169, "cloudy": 65},
    maturity={"immature": 83, "mature": 72},  # 79 records carry no stage
    sunlight={"morning": 91, "noon": 75, "afternoon": 68},
)
MERLOT = dict(
    total=225,
    weather={"sunny": 153, "cloudy": 72},
    maturity={"immature": 81, "mature": 82},  # 62 records carry no stage
    sunlight={"morning": 82, "noon": 70, "afternoon": 73},
)


def survey_fixture():
    records = []
    idx = 0
    for variety, spec in (("chardonnay", CHARDONNAY), ("merlot", MERLOT)):
        weathers, maturities, sunlights = [], [], []
        for value, count in spec["weather"].items():
            weathers += [value] * count
        for value, count in spec["maturity"].items():
            maturities += [value] * count
        maturities += [None] * (spec["total"] - len(maturities))
        for value, count in spec["sunlight"].items():
            sunlights += [value] * count
        assert len(weathers) == len(maturities) == len(sunlights) == spec["total"]
        for w, m, s in zip(weathers, maturities, sunlights):
            records.append(
                make_record(idx, variety=variety, weather=w, maturity=m, sunlight=s)
            )
            idx += 1
    return DatasetManifest(records=records)
