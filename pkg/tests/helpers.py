"""Shared fixtures-by-function: random message streams and brute-force oracles."""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from aerosense.geometry import EnuPoint, GeoPoint, contains, from_enu, in_scope, to_enu
from aerosense.simulator import NUMERIC_FIELDS, MessageTable


def message_record(aircraft_id, t, x, y, z, airspace, v_gs=400.0, heading=90.0,
                   v_vs=0.0, v_dial=400.0, h_dial=3000.0):
    g = from_enu(EnuPoint(x, y, z), airspace.origin)
    return {"aircraft_id": aircraft_id, "t": float(t), "lat": g.lat, "lon": g.lon,
            "alt": g.alt, "v_gs": v_gs, "v_vs": v_vs, "heading": heading,
            "v_dial": v_dial, "h_dial": h_dial}


def table_from_records(recs):
    """Build a table column-wise so invalid rows survive (from_records would too, but
    iterating invalid rows through AdsbMessage would not)."""
    if not recs:
        return MessageTable.empty()
    return MessageTable([r["aircraft_id"] for r in recs],
                        **{n: [r[n] for r in recs] for n in NUMERIC_FIELDS})


def random_stream(rng, airspace, t0, n_aircraft=None, n_messages=None):
    """Unsorted records around ``t0`` with duplicate timestamps, out-of-scope and invalid rows."""
    n_aircraft = n_aircraft or int(rng.integers(1, 7))
    n_messages = n_messages or int(rng.integers(0, 25))
    recs = []
    for _ in range(n_messages):
        ac = f"AC{int(rng.integers(n_aircraft))}"
        t = t0 + 0.5 * int(rng.integers(-40, 10))  # half-second grid forces ties
        r = rng.uniform(0, 400)
        ang = rng.uniform(0, 2 * np.pi)
        rec = message_record(ac, t, r * math.cos(ang), r * math.sin(ang), rng.uniform(0, 12),
                             airspace, v_gs=rng.uniform(0, 800), heading=rng.uniform(0, 360))
        u = rng.random()
        if u < 0.05:
            rec["v_gs"] = -1.0
        elif u < 0.1:
            rec["heading"] = math.nan
        recs.append(rec)
    return recs


def record_valid(r):
    vals = [r[n] for n in NUMERIC_FIELDS]
    return (all(math.isfinite(v) for v in vals) and r["t"] >= 0 and r["v_gs"] >= 0
            and 0 <= r["heading"] < 360 and -90 <= r["lat"] <= 90 and -180 <= r["lon"] <= 180
            and r["alt"] >= -500)


def oracle_snapshot(recs, t, delta, airspace):
    """Scan all messages, group by id, keep the argmax timestamp in the window (later row wins ties)."""
    best = {}
    for r in recs:
        if not (t - delta <= r["t"] <= t) or not record_valid(r):
            continue
        p = to_enu(GeoPoint(r["lat"], r["lon"], r["alt"]), airspace.origin)
        if not in_scope(p, airspace):
            continue
        cur = best.get(r["aircraft_id"])
        if cur is None or r["t"] >= cur["t"]:
            best[r["aircraft_id"]] = r
    return [best[k] for k in sorted(best)]


def oracle_counts(recs, airspace):
    y_ap = y_ar = 0
    for r in recs:
        p = to_enu(GeoPoint(r["lat"], r["lon"], r["alt"]), airspace.origin)
        y_ap += int(contains(airspace.ap, p))
        y_ar += int(contains(airspace.ar, p))
    return y_ap, y_ar


# autodiff primitive cases ------------------------------------------------------------

def primitive_cases():
    """name -> builder(rng) returning (loss_fn, params) for gradient checks.

    Each loss is a random weighting of the primitive's output so no gradient is
    trivially zero.  Inputs avoid kinks (Huber at |a| = delta, ties in max).
    """
    from aerosense import autodiff as ad

    def weighted(out_shape, rng):
        w = ad.Tensor(rng.normal(size=out_shape))
        return lambda t: ad.sum_axis(ad.mul(t, w))

    def leaf(rng, *shape):
        return ad.Tensor(rng.normal(size=shape), requires_grad=True)

    def huber_case(rng):
        a = rng.uniform(0.1, 3.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
        a[np.abs(np.abs(a) - 1.0) < 0.05] += 0.2
        x = ad.Tensor(a, requires_grad=True)
        return [x], lambda: ad.huber(x, 1.0)

    def softmax_case(rng):
        x = leaf(rng, 2, 3, 5)
        mask = np.where(rng.random((2, 3, 5)) < 0.3, -np.inf, 0.0)
        mask[..., 0] = 0.0
        return [x], lambda: ad.masked_softmax(x, mask)

    def bn_train_case(rng):
        x, g, b = leaf(rng, 3, 4, 5), leaf(rng, 5), leaf(rng, 5)
        valid = rng.random((3, 4)) < 0.7
        valid[0, 0] = valid[1, 0] = True
        state = ad.BatchNormState.create(5)
        return [x, g, b], lambda: ad.batch_norm(x, g, b, state, True, valid)

    def bn_eval_case(rng):
        x, g, b = leaf(rng, 3, 4, 5), leaf(rng, 5), leaf(rng, 5)
        state = ad.BatchNormState(rng.normal(size=5), rng.uniform(0.5, 2.0, size=5))
        return [x, g, b], lambda: ad.batch_norm(x, g, b, state, False)

    def max_case(rng):
        x = ad.Tensor(rng.permutation(24).reshape(2, 4, 3) * 0.37 + rng.normal(size=(2, 4, 3)) * 0.01,
                      requires_grad=True)
        valid = np.array([[True, True, False, True], [False, False, False, False]])
        return [x], lambda: ad.masked_max(x, valid, axis=1)

    def matmul_case(rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 2)
        return [a, b], lambda: ad.matmul(a, b)

    def concat_case(rng):
        a, b = leaf(rng, 2, 3), leaf(rng, 2, 4)
        return [a, b], lambda: ad.concat([a, b], axis=-1)

    def scatter_case(rng):
        rows = rng.random((2, 4)) < 0.5
        rows[0, 0] = True
        x = leaf(rng, int(rows.sum()), 3)
        return [x], lambda: ad.scatter_rows(x, rows)

    def dropout_case(rng):
        x = leaf(rng, 4, 6)
        key = (int(rng.integers(1000)), 1)
        return [x], lambda: ad.dropout(x, 0.3, key, True)

    def ln_case(rng):
        x, g, b = leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)
        return [x, g, b], lambda: ad.layer_norm(x, g, b)

    def binary(op):
        def build(rng):
            a, b = leaf(rng, 3, 4), leaf(rng, 1, 4)
            return [a, b], lambda: op(a, b)
        return build

    def unary(op, *shape):
        def build(rng):
            x = leaf(rng, *(shape or (3, 4)))
            return [x], lambda: op(x)
        return build

    builders = {
        "add": binary(ad.add),
        "sub": binary(ad.sub),
        "mul": binary(ad.mul),
        "div_scalar": unary(lambda x: x / 3.0),
        "sigmoid": unary(ad.sigmoid),
        "huber": huber_case,
        "reshape": unary(lambda x: ad.reshape(x, (2, 6))),
        "swapaxes": unary(lambda x: ad.swapaxes(x, 0, 2), 2, 3, 4),
        "sum_axis": unary(lambda x: ad.sum_axis(x, axis=1), 2, 3, 4),
        "scatter_rows": scatter_case,
        "concat": concat_case,
        "matmul": matmul_case,
        "masked_softmax": softmax_case,
        "layer_norm": ln_case,
        "batch_norm_train": bn_train_case,
        "batch_norm_eval": bn_eval_case,
        "dropout": dropout_case,
        "masked_max": max_case,
    }

    def wrap(build):
        def make(rng):
            params, out = build(rng)
            loss = weighted(out().shape, rng)
            return (lambda: loss(out())), params
        return make

    return {name: wrap(b) for name, b in builders.items()}


def full_model_gradcheck(seed=0, pooling="sum", heads="decoupled"):
    """Max relative gradient error of the Huber loss over every model parameter.

    Tiny batch: two snapshots holding 1 and 3 aircraft, d_model 8, two heads,
    dropout off and batch norm in evaluation mode with nontrivial running
    statistics.  Labels sit within the quadratic branch of the Huber loss so
    the objective is smooth where it is probed.
    """
    from aerosense import autodiff as ad
    from aerosense.model import AeroSense, ModelConfig, huber_loss

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(d_model=8, n_heads=2, encoder_hidden=(6, 7), d_hidden=5, dropout=0.0,
                      n_max=4, pooling=pooling, heads=heads)
    model = AeroSense(cfg, seed=seed)
    for p in model.params.values():  # move biases and norms off their init values
        p.data += rng.normal(scale=0.3, size=p.shape)
    for s in model.bn:
        s.running_mean = rng.normal(scale=0.3, size=s.running_mean.shape)
        s.running_var = rng.uniform(0.5, 1.5, size=s.running_var.shape)
    states = [rng.normal(size=(1, 18)), rng.normal(size=(3, 18))]
    batch = model.batch(states)
    pred = model.forward(batch).data
    labels = pred + rng.uniform(-0.5, 0.5, size=pred.shape)

    def loss():
        return huber_loss(model.forward(batch, training=False), labels)

    return ad.grad_check(loss, model.parameters())


# acceptance bookkeeping --------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion.

    The body may fill the yielded dict's ``"detail"`` entry with the measured
    values; the conftest summary hook prints every recorded line.
    """
    info = {"detail": ""}
    start = time.perf_counter()

    def record(status):
        took = time.perf_counter() - start
        line = f"[{status}] criterion {number}: {title} ({took:.1f} s) {info['detail']}".rstrip()
        ACCEPTANCE[number] = line
        print(line)

    try:
        yield info
    except pytest.skip.Exception:
        record("SKIP")
        raise
    except BaseException:
        record("FAIL")
        raise
    record("PASS")
