"""Independent reference implementations shared by several test modules."""
import math


def brute_force(preds, labels, K):
    """Per-class (P, R, F1) by scanning (pred, label) pairs one at a time."""
    out = []
    for k in range(K):
        tp = fp = fn = 0
        for p, t in zip(preds, labels):
            tp += p == k and t == k
            fp += p == k and t != k
            fn += p != k and t == k
        P = tp / (tp + fp) if tp + fp else 0.0
        R = tp / (tp + fn) if tp + fn else 0.0
        F = 2 * P * R / (P + R) if P + R else 0.0
        out.append((P, R, F))
    return out


def hand_adam(gs, theta0=0.0, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out step by step."""
    theta, m, v = theta0, 0.0, 0.0
    for t, g in enumerate(gs, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        theta -= lr * mh / (math.sqrt(vh) + eps)
    return theta
