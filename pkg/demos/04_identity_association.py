"""
Associating unlabeled samples into identities
=============================================

Clustering re-id features groups samples that share clothes; the face
descriptor links clusters of the same person across outfits; a (simulated)
annotator keeps only true links; union-find merges what remains.
"""
import numpy as np

from ccreid.association import AssociationConfig, associate
from ccreid.dataset import SynthConfig, synth_generate

cfg = AssociationConfig()
print("threshold", cfg.threshold, " k", cfg.k)
print("\nsigma_b  clusters  links  kept  identities  pairwise F1")
for sigma in (0.0, 0.3, 0.6, 1.0, 1.5):
    data = synth_generate(SynthConfig(biometric_noise=sigma))
    truth = [r.person_id for r in data.records]
    X = data.person_maps.mean(axis=(1, 2))
    res = associate(X, data.face, cfg.threshold, cfg.k, truth=truth)
    print("%7.1f%10d%7d%6d%12d%13.4f" % (sigma, res.clusters.n_clusters, len(res.links), len(res.verified),
                                          len(np.unique(res.identities)), res.f1))

# Annotation mistakes: each accept/reject decision flipped with some probability.
# A single wrongly accepted link merges two whole identities, so precision
# collapses quickly once false accepts start chaining clusters together.
data = synth_generate(SynthConfig())
truth = [r.person_id for r in data.records]
X = data.person_maps.mean(axis=(1, 2))
print("\nannotator error rate  pairwise F1")
for rate in (0.0, 0.01, 0.05, 0.1):
    res = associate(X, data.face, cfg.threshold, cfg.k, truth=truth, error_rate=rate)
    print("%20.2f%13.4f" % (rate, res.f1))
