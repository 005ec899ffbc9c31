"""
Re-ranking sensitivity
======================

k-reciprocal re-ranking has three knobs: the neighborhood size k1, the
query-expansion size k2 and the mixing weight lambda. The default
(20, 6, 0.3) is the common default; this sweep shows how the gain
depends on them when identities have only a handful of gallery samples.
"""
import numpy as np

from ccreid.core import Role, Split
from ccreid.evaluation import evaluate_arrays
from ccreid.pipeline import ExperimentConfig, embed, fit_xqda_on_split, prepare_data
from ccreid.pipeline import init_head
from ccreid.rerank import RerankConfig
from ccreid.trainer import train

cfg = ExperimentConfig()
data = prepare_data(cfg)
report = train(data, init_head(cfg, data.person_maps.shape[-1]), config=cfg.train)
f = embed(data, report.params)
model = fit_xqda_on_split(data, f)

q = data.indices(split=Split.TEST, role=Role.QUERY)
g = data.indices(split=Split.TEST, role=Role.GALLERY)
pids = np.array([r.person_id for r in data.records])
keys = [data.records[i].sample_id for i in g]
print("test queries:", len(q), " gallery:", len(g), " gallery samples per identity: %.1f" % (
    len(g) / len(set(pids[g]))))

for metric in ("euclid", "xqda"):
    base = evaluate_arrays(f[q], f[g], pids[q], pids[g], metric, model, gallery_keys=keys).mAP
    print("\n%s, no re-ranking: mAP %.2f" % (metric, 100 * base))
    print("  k1  k2  lambda   gain")
    for k1 in (5, 10, 20, 30):
        for k2 in (1, 3, 6):
            for lam in (0.1, 0.3, 0.6):
                rr = RerankConfig(k1, min(k2, k1), lam)
                m = evaluate_arrays(f[q], f[g], pids[q], pids[g], metric, model, rerank=rr, gallery_keys=keys).mAP
                print("%4d%4d%8.1f%+7.2f" % (k1, k2, lam, 100 * (m - base)))
