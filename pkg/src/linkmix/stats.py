"""Box-plot summaries shared by the efficiency and class-profile tables."""
import numpy as np

BOX_FIELDS = ("q1", "median", "mean", "q3", "p99", "n")


def box_summary(values):
    """Lower/upper quartile, median, mean and 99th percentile of finite values."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return dict.fromkeys(BOX_FIELDS[:-1], float("nan")) | {"n": 0}
    q1, med, q3, p99 = np.percentile(x, [25, 50, 75, 99])
    return {"q1": float(q1), "median": float(med), "mean": float(x.mean()),
            "q3": float(q3), "p99": float(p99), "n": int(x.size)}
