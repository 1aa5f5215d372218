"""Slow brute-force metric implementations, kept deliberately naive.

They serve as oracles for the vectorised versions in :mod:`.metrics`.
"""

from __future__ import annotations


def rank_by_sorting(scores, truth_index):
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return order.index(truth_index) + 1


def retrieval_reference(sim, truth, ks=(1, 10)):
    ranks = [rank_by_sorting(list(row), t) for row, t in zip(sim, truth)]
    recall = {}
    for k in ks:
        hit = 0
        for r in ranks:
            if r <= k:
                hit += 1
        recall[k] = 100.0 * hit / len(ranks)
    ordered = sorted(ranks)
    return ranks, recall, ordered[(len(ordered) - 1) // 2]


def classification_reference(preds, labels, num_classes):
    recalls, f1s = [], []
    for c in range(num_classes):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        recall = tp / (tp + fn)
        precision = tp / (tp + fp) if tp + fp else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        recalls.append(recall)
        f1s.append(f1)
    return 100.0 * sum(recalls) / num_classes, 100.0 * sum(f1s) / num_classes
