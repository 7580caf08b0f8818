import hashlib
import json
import shutil
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from icnn_doe.grid import load_feeder  # noqa: E402
from icnn_doe.snapshots import SamplingSpec, generate  # noqa: E402
from icnn_doe.surrogates import SurrogateSet, full_plan, retrench, train_surrogates  # noqa: E402

SRC = Path(__file__).resolve().parent.parent / "src" / "icnn_doe"
TRAINING_SOURCES = ["grid.py", "snapshots.py", "icnn.py", "surrogates.py", "data/ieee33.json"]
N_SNAPSHOTS = 20000
DATA_SEED = 1
BUNDLES = {"icnn": ("icnn", retrench), "mlp": ("mlp", retrench), "full": ("icnn", full_plan)}


def _source_key():
    h = hashlib.sha256()
    for name in TRAINING_SOURCES:
        h.update((SRC / name).read_bytes())
    h.update(f"{N_SNAPSHOTS}/{DATA_SEED}".encode())
    return h.hexdigest()[:20]


@pytest.fixture(scope="session")
def trained(request):
    """Desk-feeder surrogate bundles, trained once and cached between runs.

    The cache is keyed by a hash of the training code and feeder file, so any
    change there retrains. Wall times of the original training are kept.
    """
    feeder = load_feeder()
    key = _source_key()
    cache = Path(request.config.cache.mkdir("icnn_doe_models"))
    meta_path = cache / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    if meta.get("key") != key:
        shutil.rmtree(cache)
        cache.mkdir(parents=True)
        start = time.perf_counter()
        data = generate(feeder, SamplingSpec.default(feeder, DATA_SEED), N_SNAPSHOTS)
        times = {"data": time.perf_counter() - start}
        for name, (family, planner) in BUNDLES.items():
            start = time.perf_counter()
            train_surrogates(data, planner(feeder), family).save(cache, name)
            times[name] = time.perf_counter() - start
        meta = {"key": key, "seconds": times}
        meta_path.write_text(json.dumps(meta))
    out = {name: SurrogateSet.load(cache, name) for name in BUNDLES}
    out["feeder"] = feeder
    out["seconds"] = meta["seconds"]
    return out
