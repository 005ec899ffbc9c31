"""
Training the head and comparing features and similarities
=========================================================

One call trains the head on the default synthetic dataset and evaluates
seven variants on the test split: fused features with Euclidean and XQDA
distances, each with and without k-reciprocal re-ranking, the two
single-branch features, and the untrained head.
"""
from ccreid import io as rio
from ccreid.pipeline import ExperimentConfig, run_experiment

cfg = ExperimentConfig()
result = run_experiment(cfg)
print("trained %d epochs in %.1f s, loss %.3f -> %.3f" % (
    len(result.report.loss_trace), result.report.seconds, result.report.loss_trace[0], result.report.loss_trace[-1]))
print("xqda kept %d of %d directions\n" % (result.xqda.projection.shape[1], result.xqda.dim))

order = ["untrained", "biometric", "clothes", "euclid", "euclid+rr", "xqda", "xqda+rr"]
reports = []
for key in order:
    rep = result.reports[key]
    rep.metric = key
    reports.append(rep)
print(rio.format_report(reports).split("\n\n")[0])

m = {k: 100 * v.mAP for k, v in result.reports.items()}
print("\nfused vs best single branch: %+.1f mAP" % (m["euclid"] - max(m["biometric"], m["clothes"])))
print("re-ranking on Euclidean:     %+.1f" % (m["euclid+rr"] - m["euclid"]))
print("XQDA over Euclidean:         %+.1f" % (m["xqda"] - m["euclid"]))
print("re-ranking on XQDA:          %+.1f" % (m["xqda+rr"] - m["xqda"]))
