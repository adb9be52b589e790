"""Independent oracles shared across the test suite.

Everything here is deliberately written as straight-line / brute-force code
so it cannot share bugs with the package implementations it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import torch


def finite_difference_failures(
    fn,
    params,
    step: float = 1e-4,
    rtol: float = 1e-3,
    atol: float = 1e-7,
    max_coords_per_param: int | None = None,
    seed: int = 0,
):
    """Compare autograd gradients of fn() against central finite differences.

    fn must rebuild its graph on every call. Returns a list of
    (param_index, coord, analytic, numeric) tuples for failing coordinates;
    an empty list means every checked coordinate agreed within
    atol + rtol * max(|analytic|, |numeric|).
    """
    params = [p for p in params if p.requires_grad]
    loss = fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    failures = []
    with torch.no_grad():
        for pi, (p, g) in enumerate(zip(params, grads)):
            flat = p.view(-1)
            gflat = torch.zeros_like(flat) if g is None else g.reshape(-1)
            n = flat.numel()
            if max_coords_per_param is None or n <= max_coords_per_param:
                coords = range(n)
            else:
                coords = sorted(rng.choice(n, size=max_coords_per_param, replace=False).tolist())
            for c in coords:
                orig = float(flat[c])
                flat[c] = orig + step
                f_plus = float(fn())
                flat[c] = orig - step
                f_minus = float(fn())
                flat[c] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                analytic = float(gflat[c])
                tol = atol + rtol * max(abs(analytic), abs(numeric))
                if abs(analytic - numeric) > tol:
                    failures.append((pi, c, analytic, numeric))
    return failures


def brute_force_hungarian(cost: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Exhaustive minimum over all injective row->column assignments."""
    n, m = cost.shape
    best_cost, best_perm = math.inf, None
    for cols in itertools.permutations(range(m), n):
        total = cost[np.arange(n), list(cols)].sum()
        if total < best_cost:
            best_cost, best_perm = total, cols
    return best_cost, best_perm


def brute_force_ap_spans(preds, gts, threshold):
    """All-points AP from first principles: evaluate precision/recall at every
    score cutoff and integrate the PR curve rectangle by rectangle."""

    def interval_iou(a, b):
        lo = max(a[0], b[0])
        hi = min(a[1], b[1])
        inter = max(0.0, hi - lo)
        union = (a[1] - a[0]) + (b[1] - b[0]) - inter
        return inter / union if union > 0 else 0.0

    order = sorted(range(len(preds)), key=lambda i: (-preds[i][2], i))
    used = set()
    tp_flags = []
    for idx in order:
        span = (preds[idx][0], preds[idx][1])
        candidates = [
            (interval_iou(span, g), j)
            for j, g in enumerate(gts)
            if j not in used and interval_iou(span, g) >= threshold
        ]
        if candidates:
            _, j = max(candidates, key=lambda t: (t[0], -t[1]))
            used.add(j)
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    n_gt = len(gts)
    ap = 0.0
    prev_recall = 0.0
    tp = 0
    for k, flag in enumerate(tp_flags, start=1):
        if flag:
            tp += 1
        precision = tp / k
        recall = tp / n_gt
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def brute_force_ap_binary(scores, relevant):
    """All-points AP for a ranked binary-relevance list (per-clip saliency)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(bool(r) for r in relevant)
    if n_pos == 0:
        return None
    ap = 0.0
    prev_recall = 0.0
    tp = 0
    for k, idx in enumerate(order, start=1):
        if relevant[idx]:
            tp += 1
        precision = tp / k
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def reference_gated_layer(layer, video, video_mask, text, text_mask, anchor):
    """Straight-line recomputation of one gated cross-attention layer using
    the layer's parameter tensors but none of its code paths. Loops over
    heads and positions explicitly. Assumes eval mode (dropout off)."""
    w_q, b_q = layer.w_q.weight.detach(), layer.w_q.bias.detach()
    w_k, b_k = layer.w_k.weight.detach(), layer.w_k.bias.detach()
    w_v, b_v = layer.w_v.weight.detach(), layer.w_v.bias.detach()
    w_va, b_va = layer.w_v_anchor.weight.detach(), layer.w_v_anchor.bias.detach()
    w_qg = layer.w_q_gate.weight.detach()
    w_kg = layer.w_k_gate.weight.detach()
    heads = layer.heads
    d = layer.dim
    dh = d // heads

    b, l_v, _ = video.shape
    l_t = text.shape[1]
    out_video = torch.zeros_like(video)
    g_n_all = torch.zeros(b, l_v, dtype=video.dtype)
    raw_all = torch.zeros(b, l_v, dtype=video.dtype)
    anchor_all = torch.zeros(b, d, dtype=video.dtype)

    for s in range(b):
        q = video[s] @ w_q.T + b_q  # (L_v, d)
        k = text[s] @ w_k.T + b_k
        v = text[s] @ w_v.T + b_v
        valid_t = [j for j in range(l_t) if bool(text_mask[s, j])]
        valid_v = [i for i in range(l_v) if bool(video_mask[s, i])]

        # cross attention per head, no output projection
        attended = torch.zeros(l_v, d, dtype=video.dtype)
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            for i in range(l_v):
                logits = torch.tensor(
                    [float(q[i, sl] @ k[j, sl]) / math.sqrt(dh) for j in valid_t],
                    dtype=video.dtype,
                )
                w = torch.softmax(logits, dim=0)
                for wj, j in zip(w, valid_t):
                    attended[i, sl] += wj * v[j, sl]

        # local gate from mean of projected keys over valid tokens
        k_global = torch.stack([k[j] for j in valid_t]).mean(dim=0)
        g_l = torch.sigmoid((q @ w_qg.T) * (k_global @ w_kg.T))

        # anchor attention: W_K on anchor as query, W_Q on video as keys
        q_a = anchor[s] @ w_k.T + b_k
        v_a = video[s] @ w_va.T + b_va
        enriched = torch.zeros(d, dtype=video.dtype)
        raw = torch.zeros(l_v, dtype=video.dtype)
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            logits = torch.tensor(
                [float(q_a[sl] @ q[i, sl]) / math.sqrt(dh) for i in valid_v],
                dtype=video.dtype,
            )
            w = torch.softmax(logits, dim=0)
            for wi, i in zip(w, valid_v):
                enriched[sl] += wi * v_a[i, sl]
                raw[i] += wi / heads

        raw_valid = torch.tensor([float(raw[i]) for i in valid_v], dtype=video.dtype)
        lo, hi = raw_valid.min(), raw_valid.max()
        g_n = torch.zeros(l_v, dtype=video.dtype)
        for i in valid_v:
            g_n[i] = 1.0 if hi <= lo else (raw[i] - lo) / (hi - lo)

        gated = attended
        if layer.use_local_gate:
            gated = g_l * gated
        if layer.use_nonlocal_gate:
            gated = g_n.unsqueeze(-1) * gated

        x = _layer_norm(video[s] + gated, layer.norm1)
        ffn = x @ layer.ffn.net[0].weight.T + layer.ffn.net[0].bias
        ffn = torch.relu(ffn)
        ffn = ffn @ layer.ffn.net[3].weight.T + layer.ffn.net[3].bias
        x = _layer_norm(x + ffn, layer.norm2)
        for i in range(l_v):
            if bool(video_mask[s, i]):
                out_video[s, i] = x[i]

        g_n_all[s] = g_n
        raw_all[s] = raw
        anchor_all[s] = enriched

    return out_video, anchor_all, g_n_all, raw_all


def _layer_norm(x: torch.Tensor, ln: torch.nn.LayerNorm) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + ln.eps) * ln.weight + ln.bias


def nearest_centroid_accuracy(samples) -> float:
    """Per-video nearest-centroid separability of in-moment vs out clips.

    Centroids are fit on even-indexed clips and evaluated on odd-indexed
    clips, so noise cannot be memorized; chance level is ~0.5.
    """
    correct = total = 0
    for s in samples:
        feats = s.video.embeddings.numpy()
        labels = s.relevance.indicators.numpy()
        even = np.arange(len(labels)) % 2 == 0
        fit_in = feats[even & (labels == 1)]
        fit_out = feats[even & (labels == 0)]
        if len(fit_in) == 0 or len(fit_out) == 0:
            continue
        c_in = fit_in.mean(axis=0)
        c_out = fit_out.mean(axis=0)
        for x, y in zip(feats[~even], labels[~even]):
            pred = 1 if np.linalg.norm(x - c_in) < np.linalg.norm(x - c_out) else 0
            correct += int(pred == y)
            total += 1
    return correct / total if total else 0.0
