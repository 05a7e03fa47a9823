"""Trainable stack: feature pre-embedding, two-way message passing over the
placement graph, and the per-node score head. Gradients are computed by
hand-written reverse passes over this fixed architecture (no autodiff).

All math is float64 so finite-difference checks can be tight.
"""

from __future__ import annotations

import json
import struct

import numpy as np

NODE_DIM = 4
EDGE_DIM = 4
EMB_DIM = 5
MSG_DIM = EMB_DIM + EDGE_DIM  # input to the message map: [embedding || edge features]
OUT_DIM = 2 * EMB_DIM         # forward and backward summaries concatenated
SCORE_HIDDEN = 16

CHECKPOINT_FORMAT = "giph-params-v1"

# Declaration order fixes the checkpoint byte layout.
PARAM_SHAPES = {
    "pre.W1": (NODE_DIM, NODE_DIM),
    "pre.b1": (NODE_DIM,),
    "pre.W2": (EMB_DIM, NODE_DIM),
    "pre.b2": (EMB_DIM,),
    "fwd.h1.W": (MSG_DIM, MSG_DIM),
    "fwd.h1.b": (MSG_DIM,),
    "fwd.h2.W": (EMB_DIM, MSG_DIM),
    "fwd.h2.b": (EMB_DIM,),
    "bwd.h1.W": (MSG_DIM, MSG_DIM),
    "bwd.h1.b": (MSG_DIM,),
    "bwd.h2.W": (EMB_DIM, MSG_DIM),
    "bwd.h2.b": (EMB_DIM,),
    "score.W1": (SCORE_HIDDEN, OUT_DIM),
    "score.b1": (SCORE_HIDDEN,),
    "score.W2": (1, SCORE_HIDDEN),
    "score.b2": (1,),
}

EMBEDDING_PARAMS = tuple(n for n in PARAM_SHAPES if not n.startswith("score."))
SCORE_PARAMS = tuple(n for n in PARAM_SHAPES if n.startswith("score."))


def _relu(x):
    return np.maximum(x, 0.0)


class PolicyParams:
    """All trainable parameters keyed by path, shapes fixed at construction."""

    def __init__(self, arrays):
        if set(arrays) != set(PARAM_SHAPES):
            missing = set(PARAM_SHAPES) - set(arrays)
            extra = set(arrays) - set(PARAM_SHAPES)
            raise ValueError(f"bad parameter set: missing {sorted(missing)}, extra {sorted(extra)}")
        self.arrays = {}
        for name, shape in PARAM_SHAPES.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name}: parameters must be finite")
            self.arrays[name] = a

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self):
        return PolicyParams({n: a.copy() for n, a in self.arrays.items()})

    def n_parameters(self):
        return sum(a.size for a in self.arrays.values())


def init_params(rng):
    """Xavier-uniform weights, zero biases."""
    arrays = {}
    for name, shape in PARAM_SHAPES.items():
        if len(shape) == 2:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return PolicyParams(arrays)


class Gradients:
    """Same tree of shapes as PolicyParams, accumulated per episode."""

    def __init__(self, arrays=None):
        if arrays is None:
            arrays = {n: np.zeros(s) for n, s in PARAM_SHAPES.items()}
        self.arrays = arrays

    def __getitem__(self, name):
        return self.arrays[name]

    def add(self, other):
        for n in self.arrays:
            self.arrays[n] += other.arrays[n]
        return self

    def scaled(self, c):
        return Gradients({n: c * a for n, a in self.arrays.items()})

    def check_finite(self):
        for n, a in self.arrays.items():
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite gradient in {n}")
        return self


def _check_gpnet_shapes(gpnet):
    if gpnet.node_features.shape[1] != NODE_DIM:
        raise ValueError(f"node features must have {NODE_DIM} channels")
    if gpnet.n_edges and gpnet.edge_features.shape[1] != EDGE_DIM:
        raise ValueError(f"edge features must have {EDGE_DIM} channels")


def _pre_embed(xn, params):
    z1 = xn @ params["pre.W1"].T + params["pre.b1"]
    a1 = _relu(z1)
    xt = a1 @ params["pre.W2"].T + params["pre.b2"]
    return {"z1": z1, "a1": a1, "xt": xt}


def _direction_plan(gpnet, direction):
    """Message sources/targets and task visit order for one direction."""
    if direction == "fwd":
        return (gpnet.task_topo_order, gpnet.fwd_edges_by_task,
                gpnet.edge_src, gpnet.edge_dst, gpnet.indeg)
    return (tuple(reversed(gpnet.task_topo_order)), gpnet.bwd_edges_by_task,
            gpnet.edge_dst, gpnet.edge_src, gpnet.outdeg)


def _direction_forward(gpnet, params, direction, xt, aggregate):
    order, groups, msg_src, msg_dst, deg = _direction_plan(gpnet, direction)
    h1w, h1b = params[f"{direction}.h1.W"], params[f"{direction}.h1.b"]
    h2w, h2b = params[f"{direction}.h2.W"], params[f"{direction}.h2.b"]
    n = gpnet.n_nodes
    xe = gpnet.edge_features
    e = np.zeros((n, EMB_DIM))
    agg = np.zeros((n, MSG_DIM))
    h1in = np.zeros((gpnet.n_edges, MSG_DIM))
    h1z = np.zeros((gpnet.n_edges, MSG_DIM))
    h2z = np.empty((n, EMB_DIM))
    denom = np.maximum(deg, 1.0)
    for task in order:
        ids = groups[task]
        lo, hi = gpnet.option_slices[task]
        if ids.size:
            inp = np.concatenate([e[msg_src[ids]], xe[ids]], axis=1)
            z = inp @ h1w.T + h1b
            a = _relu(z)
            h1in[ids] = inp
            h1z[ids] = z
            np.add.at(agg, msg_dst[ids], a)
            if aggregate == "mean":
                agg[lo:hi] /= denom[lo:hi, None]
        z2 = agg[lo:hi] @ h2w.T + h2b
        h2z[lo:hi] = z2
        e[lo:hi] = _relu(z2) + xt[lo:hi]
    return {"e": e, "agg": agg, "h1in": h1in, "h1z": h1z, "h2z": h2z}


def _forward(gpnet, params, aggregate):
    _check_gpnet_shapes(gpnet)
    pre = _pre_embed(gpnet.node_features, params)
    fwd = _direction_forward(gpnet, params, "fwd", pre["xt"], aggregate)
    bwd = _direction_forward(gpnet, params, "bwd", pre["xt"], aggregate)
    emb = np.concatenate([fwd["e"], bwd["e"]], axis=1)
    return emb, {"pre": pre, "fwd": fwd, "bwd": bwd, "emb": emb, "aggregate": aggregate}


def embed(gpnet, params, aggregate="mean"):
    """One full-depth sweep per direction in topological order; node embedding
    is the concatenation of the forward and backward summaries."""
    emb, _ = _forward(gpnet, params, aggregate)
    return emb


def score(embeddings, params):
    """Scalar score per node via the shared MLP head."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] != OUT_DIM:
        raise ValueError(f"embeddings must be (n, {OUT_DIM})")
    z = embeddings @ params["score.W1"].T + params["score.b1"]
    a = _relu(z)
    return (a @ params["score.W2"].T + params["score.b2"]).ravel()


def _score_forward(emb, params):
    z = emb @ params["score.W1"].T + params["score.b1"]
    a = _relu(z)
    q = (a @ params["score.W2"].T + params["score.b2"]).ravel()
    return q, {"z": z, "a": a}


def scores(gpnet, params, aggregate="mean"):
    """Convenience: embed then score; returns (q, cache) for later backprop."""
    emb, cache = _forward(gpnet, params, aggregate)
    q, sc = _score_forward(emb, params)
    cache["score"] = sc
    return q, cache


def _direction_backward(gpnet, params, direction, de, cache, grads, aggregate):
    order, groups, msg_src, msg_dst, deg = _direction_plan(gpnet, direction)
    h1w = params[f"{direction}.h1.W"]
    h2w = params[f"{direction}.h2.W"]
    c = cache
    denom = np.maximum(deg, 1.0)
    de = de.copy()
    dxt = np.zeros_like(de)
    gh1w = grads[f"{direction}.h1.W"]
    gh1b = grads[f"{direction}.h1.b"]
    gh2w = grads[f"{direction}.h2.W"]
    gh2b = grads[f"{direction}.h2.b"]
    for task in reversed(order):
        lo, hi = gpnet.option_slices[task]
        d = de[lo:hi]
        dxt[lo:hi] += d                      # residual connection
        dz2 = d * (c["h2z"][lo:hi] > 0.0)
        gh2w += dz2.T @ c["agg"][lo:hi]
        gh2b += dz2.sum(axis=0)
        dagg = dz2 @ h2w                     # (k, MSG_DIM)
        ids = groups[task]
        if ids.size:
            targets = msg_dst[ids]
            da = dagg[targets - lo]
            if aggregate == "mean":
                da = da / denom[targets, None]
            dz1 = da * (c["h1z"][ids] > 0.0)
            gh1w += dz1.T @ c["h1in"][ids]
            gh1b += dz1.sum(axis=0)
            dinp = dz1 @ h1w
            np.add.at(de, msg_src[ids], dinp[:, :EMB_DIM])
    return dxt


def backprop(gpnet, params, upstream, cache=None, aggregate="mean"):
    """Exact gradients of sum(upstream * q) w.r.t. every parameter, where q
    are the per-node scores of embed followed by score."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (gpnet.n_nodes,):
        raise ValueError("upstream must hold one score gradient per node")
    if cache is None:
        emb, cache = _forward(gpnet, params, aggregate)
        q, sc = _score_forward(emb, params)
        cache["score"] = sc
    grads = Gradients()
    sc = cache["score"]
    emb = cache["emb"]

    dq = upstream[:, None]                     # (n, 1)
    grads.arrays["score.W2"] += dq.T @ sc["a"]
    grads.arrays["score.b2"] += dq.sum(axis=0)
    da = dq @ params["score.W2"]
    dz = da * (sc["z"] > 0.0)
    grads.arrays["score.W1"] += dz.T @ emb
    grads.arrays["score.b1"] += dz.sum(axis=0)
    de = dz @ params["score.W1"]               # (n, OUT_DIM)

    agg = cache.get("aggregate", aggregate)
    dxt_f = _direction_backward(gpnet, params, "fwd", de[:, :EMB_DIM],
                                cache["fwd"], grads.arrays, agg)
    dxt_b = _direction_backward(gpnet, params, "bwd", de[:, EMB_DIM:],
                                cache["bwd"], grads.arrays, agg)
    dxt = dxt_f + dxt_b

    pre = cache["pre"]
    grads.arrays["pre.W2"] += dxt.T @ pre["a1"]
    grads.arrays["pre.b2"] += dxt.sum(axis=0)
    da1 = dxt @ params["pre.W2"]
    dz1 = da1 * (pre["z1"] > 0.0)
    grads.arrays["pre.W1"] += dz1.T @ gpnet.node_features
    grads.arrays["pre.b1"] += dz1.sum(axis=0)
    return grads.check_finite()


# ---------------------------------------------------------------------------
# k-step synchronous variant: every node updates simultaneously for k rounds,
# so information travels at most k hops per direction.


def _direction_forward_k(gpnet, params, direction, e0, k, aggregate):
    _, _, msg_src, msg_dst, deg = _direction_plan(gpnet, direction)
    h1w, h1b = params[f"{direction}.h1.W"], params[f"{direction}.h1.b"]
    h2w, h2b = params[f"{direction}.h2.W"], params[f"{direction}.h2.b"]
    xe = gpnet.edge_features
    denom = np.maximum(deg, 1.0)
    steps = []
    e = e0
    for _ in range(k):
        agg = np.zeros((gpnet.n_nodes, MSG_DIM))
        if gpnet.n_edges:
            inp = np.concatenate([e[msg_src], xe], axis=1)
            z = inp @ h1w.T + h1b
            a = _relu(z)
            np.add.at(agg, msg_dst, a)
        else:
            inp = np.zeros((0, MSG_DIM))
            z = a = inp
        if aggregate == "mean":
            agg = agg / denom[:, None]
        z2 = agg @ h2w.T + h2b
        e_next = _relu(z2) + e0
        steps.append({"e_in": e, "h1in": inp, "h1z": z, "agg": agg, "h2z": z2})
        e = e_next
    return e, steps


def embed_k(gpnet, params, k, aggregate="mean"):
    """k rounds of synchronous two-way message passing; the pre-embedded node
    features seed the recursion and re-enter as the residual at every round."""
    emb, _ = _forward_k(gpnet, params, k, aggregate)
    return emb


def _forward_k(gpnet, params, k, aggregate):
    if k < 1:
        raise ValueError("k must be at least 1")
    _check_gpnet_shapes(gpnet)
    pre = _pre_embed(gpnet.node_features, params)
    ef, steps_f = _direction_forward_k(gpnet, params, "fwd", pre["xt"], k, aggregate)
    eb, steps_b = _direction_forward_k(gpnet, params, "bwd", pre["xt"], k, aggregate)
    emb = np.concatenate([ef, eb], axis=1)
    return emb, {"pre": pre, "fwd": steps_f, "bwd": steps_b, "emb": emb,
                 "k": k, "aggregate": aggregate}


def _direction_backward_k(gpnet, params, direction, de, steps, grads, aggregate):
    _, _, msg_src, msg_dst, deg = _direction_plan(gpnet, direction)
    h1w = params[f"{direction}.h1.W"]
    h2w = params[f"{direction}.h2.W"]
    denom = np.maximum(deg, 1.0)
    de0 = np.zeros_like(de)
    d_cur = de
    for st in reversed(steps):
        de0 += d_cur                          # residual into every round
        dz2 = d_cur * (st["h2z"] > 0.0)
        grads[f"{direction}.h2.W"] += dz2.T @ st["agg"]
        grads[f"{direction}.h2.b"] += dz2.sum(axis=0)
        dagg = dz2 @ h2w
        d_prev = np.zeros_like(d_cur)
        if gpnet.n_edges:
            da = dagg[msg_dst]
            if aggregate == "mean":
                da = da / denom[msg_dst, None]
            dz1 = da * (st["h1z"] > 0.0)
            grads[f"{direction}.h1.W"] += dz1.T @ st["h1in"]
            grads[f"{direction}.h1.b"] += dz1.sum(axis=0)
            dinp = dz1 @ h1w
            np.add.at(d_prev, msg_src, dinp[:, :EMB_DIM])
        d_cur = d_prev
    de0 += d_cur                              # e_in of the first round is e0
    return de0


def backprop_k(gpnet, params, upstream, k, cache=None, aggregate="mean"):
    """Gradient of sum(upstream * q) for the k-step variant."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (gpnet.n_nodes,):
        raise ValueError("upstream must hold one score gradient per node")
    if cache is None:
        emb, cache = _forward_k(gpnet, params, k, aggregate)
        q, sc = _score_forward(emb, params)
        cache["score"] = sc
    grads = Gradients()
    sc = cache["score"]
    emb = cache["emb"]

    dq = upstream[:, None]
    grads.arrays["score.W2"] += dq.T @ sc["a"]
    grads.arrays["score.b2"] += dq.sum(axis=0)
    da = dq @ params["score.W2"]
    dz = da * (sc["z"] > 0.0)
    grads.arrays["score.W1"] += dz.T @ emb
    grads.arrays["score.b1"] += dz.sum(axis=0)
    de = dz @ params["score.W1"]

    agg = cache.get("aggregate", aggregate)
    de0_f = _direction_backward_k(gpnet, params, "fwd", de[:, :EMB_DIM],
                                  cache["fwd"], grads.arrays, agg)
    de0_b = _direction_backward_k(gpnet, params, "bwd", de[:, EMB_DIM:],
                                  cache["bwd"], grads.arrays, agg)
    dxt = de0_f + de0_b

    pre = cache["pre"]
    grads.arrays["pre.W2"] += dxt.T @ pre["a1"]
    grads.arrays["pre.b2"] += dxt.sum(axis=0)
    da1 = dxt @ params["pre.W2"]
    dz1 = da1 * (pre["z1"] > 0.0)
    grads.arrays["pre.W1"] += dz1.T @ gpnet.node_features
    grads.arrays["pre.b1"] += dz1.sum(axis=0)
    return grads.check_finite()


def scores_k(gpnet, params, k, aggregate="mean"):
    emb, cache = _forward_k(gpnet, params, k, aggregate)
    q, sc = _score_forward(emb, params)
    cache["score"] = sc
    return q, cache


# ---------------------------------------------------------------------------
# Checkpoints: a JSON header line followed by raw little-endian float64 data
# in header order.


def save_arrays(arrays, path, extra=None):
    header = {
        "format": CHECKPOINT_FORMAT,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path):
    with open(path, "rb") as fh:
        head = fh.readline()
        try:
            header = json.loads(head.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"corrupt checkpoint {path}: bad header") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"corrupt checkpoint {path}: format {header.get('format')!r}")
        blob = fh.read()
    arrays = {}
    off = 0
    for item in header["arrays"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        size = count * 8
        if off + size > len(blob):
            raise ValueError(f"corrupt checkpoint {path}: truncated data")
        arrays[item["name"]] = np.frombuffer(
            blob[off:off + size], dtype="<f8").reshape(shape).copy()
        off += size
    if off != len(blob):
        raise ValueError(f"corrupt checkpoint {path}: trailing data")
    return arrays, header.get("extra", {})


def save_params(params, policy_path, embedding_path):
    """Split checkpoint: the score head and the embedding stack."""
    save_arrays({n: params[n] for n in SCORE_PARAMS}, policy_path)
    save_arrays({n: params[n] for n in EMBEDDING_PARAMS}, embedding_path)


def load_params(policy_path, embedding_path):
    scores_part, _ = load_arrays(policy_path)
    embed_part, _ = load_arrays(embedding_path)
    merged = {**embed_part, **scores_part}
    return PolicyParams(merged)
