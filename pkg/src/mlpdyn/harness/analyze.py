"""Post-hoc analysis of a run directory: metrics.csv, table1.csv, phases.json."""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..decomp import (deflate_directions, direction_from_gram, next_layer_split, project_lemma2,
                      rank1_gram, strength_statistics, theorem1_strengths)
from ..errors import DataError
from ..linalg import row_cosines
from ..metrics import (PhaseReport, alpha_consistency, cross_category_pairs, detect_phase_transition,
                       dominance_check, feature_similarity_cross_category,
                       gating_similarity_within_category, gradient_similarity_within_category,
                       o_values, pseudoneuron_weight_change_similarity, within_category_pairs)
from .checkpoint import load_checkpoint
from .config import read_run_config
from .train import ckpt_path, fmt

METRICS_SCHEMA = "mlpdyn-metrics 1"
TABLE_SCHEMA = "mlpdyn-table1 1"

METRIC_DOCS = {
    "epoch": "0-based epoch; values measured at its end",
    "layer": "1-based linear layer l; features are F(l), weights W(l)",
    "train_loss": "mean minibatch loss during the epoch",
    "feature_cos_mean": "cross-category cosine of F(l), mean over seeded pairs",
    "feature_cos_std": "std of the same",
    "grad_cos_mean": "within-category cosine of dLoss/dF(l), mean over seeded pairs",
    "grad_cos_std": "std of the same",
    "gating_sim_mean": "within-category fraction of equal gates of layer l",
    "gating_sim_std": "std of the same",
    "pn_sim_sample_mean": "pseudo-neuron cosine of the summed per-sample dW of each category, "
                          "averaged over categories",
    "pn_sim_sample_std": "std over pairs and categories",
    "pn_sim_aggregate_mean": "pseudo-neuron cosine of the epoch weight change W_end - W_start",
    "pn_sim_aggregate_std": "std of the same",
    "o_mean": "mean over tracked samples of cos(dV, F(l-1)) cos(V, dF(l-1)); "
              "dF is the change to the next instrumented epoch",
    "o_std": "std of the same",
    "o_nonneg_frac": "fraction of tracked samples with o >= 0",
    "alpha_min": "smallest per-category share of samples agreeing with the majority sign "
                 "of cos(dV, F(l-1))",
    "alpha_mean": "mean of the same over categories",
    "dom_kept": "mean |V^T V C^T D F_dot| over tracked samples",
    "dom_ignored": "mean |V^T eps D F_dot| over tracked samples",
    "in_window": "1 if the epoch lies in the direction-estimation window",
}


def _metric_columns(k):
    cols = list(METRIC_DOCS)
    cols.remove("in_window")
    return cols + [f"s{i}" for i in range(1, k + 1)] + ["in_window"]


def _schema_row(schema, columns, docs):
    parts = [f"{c}: {docs[c]}" for c in columns]
    return f"# schema {schema} | " + " | ".join(parts)


@dataclass
class RunData:
    config: object
    spec: object
    labels: np.ndarray
    inputs: np.ndarray
    epochs: list
    train_loss: np.ndarray
    accuracy: np.ndarray
    record_epochs: list
    run_dir: Path

    def record(self, epoch):
        return np.load(self.run_dir / "records" / f"epoch_{epoch:04d}.npz")

    def params(self, epoch):
        return load_checkpoint(ckpt_path(self.run_dir, epoch + 1)).params


def load_run(run_dir):
    run_dir = Path(run_dir)
    if not (run_dir / "config.txt").exists():
        raise DataError(f"{run_dir} is not a run directory (no config.txt)")
    config = read_run_config(run_dir)
    tracked = np.load(run_dir / "tracked.npz")
    if tracked["ids"].size == 0:
        raise DataError(f"{run_dir}: the tracked sample set is empty")
    with (run_dir / "train_log.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    if not rows:
        raise DataError(f"{run_dir}: train_log.csv has no epochs")
    epochs = [int(r[0]) for r in rows]
    loss = np.array([float(r[1]) for r in rows])
    acc = np.array([[float(v) if v else np.nan for v in r[4:]] for r in rows])
    rec = sorted(int(p.stem.split("_")[1]) for p in (run_dir / "records").glob("epoch_*.npz"))
    if not rec:
        raise DataError(f"{run_dir}: no instrumentation records")
    return RunData(config, config.mlp_spec(), tracked["labels"], tracked["inputs"], epochs, loss,
                   acc, rec, run_dir)


def choose_window(run, phase):
    cfg = run.config
    start = cfg.window_start if cfg.window_start >= 0 else 0
    end = cfg.window_end if cfg.window_end >= 0 else phase.transition_epoch
    inside = [t for t in run.record_epochs if start <= t <= end]
    return (start, end), inside or list(run.record_epochs)


def _gates(spec, opened):
    return np.where(opened, 1.0, spec.gate_floor)


class _Cache:
    """Keeps recently loaded records and parameters."""

    def __init__(self, run):
        self.run = run
        self.records = {}
        self.params = {}

    def record(self, epoch):
        if epoch not in self.records:
            if len(self.records) > 4:
                self.records.pop(next(iter(self.records)))
            with self.run.record(epoch) as z:
                self.records[epoch] = {k: z[k] for k in z.files}
        return self.records[epoch]

    def weights(self, epoch):
        if epoch not in self.params:
            if len(self.params) > 4:
                self.params.pop(next(iter(self.params)))
            self.params[epoch] = self.run.params(epoch)
        return self.params[epoch]

    def feature(self, epoch, layer):
        return self.run.inputs if layer == 0 else self.record(epoch)[f"F{layer}"]


def _window_direction(cache, layer, epochs, lr, rows=None):
    m = 0.0
    for t in epochs:
        rec = cache.record(t)
        delta = rec[f"delta{layer}"]
        feat = cache.feature(t, layer - 1)
        if rows is not None:
            delta, feat = delta[rows], feat[rows]
        m = m + rank1_gram(delta, feat, lr)
    return direction_from_gram(m, layer, (epochs[0], epochs[-1])).vector


def _category_pn_similarity(delta, feat, labels, lr, n_pairs, seed):
    vals = []
    for c in np.unique(labels):
        rows = labels == c
        summed = -lr * delta[rows].T @ feat[rows]
        if not np.any(summed):
            continue
        stat = pseudoneuron_weight_change_similarity(summed, n_pairs, seed)
        vals.append(stat)
    if not vals:
        return np.nan, np.nan
    means = np.array([v.mean for v in vals])
    # Pooled std over the per-category pair sets.
    var = np.mean([v.std ** 2 for v in vals]) + means.var()
    return float(means.mean()), float(np.sqrt(var))


def layer_epoch_metrics(cache, run, layer, epoch, next_epoch, direction, basis, pairs):
    cfg = run.config
    lr = cfg.learning_rate
    labels = run.labels
    rec = cache.record(epoch)
    feat = rec[f"F{layer}"]
    prev = cache.feature(epoch, layer - 1)
    delta = rec[f"delta{layer}"]
    cross, within = pairs
    out = {}
    fs = feature_similarity_cross_category(feat, labels, pairs=cross)
    gs = gradient_similarity_within_category(rec[f"Fdot{layer}"], labels, pairs=within)
    ks = gating_similarity_within_category(rec[f"open{layer}"], labels, pairs=within)
    out.update(feature_cos_mean=fs.mean, feature_cos_std=fs.std, grad_cos_mean=gs.mean,
               grad_cos_std=gs.std, gating_sim_mean=ks.mean, gating_sim_std=ks.std)
    out["pn_sim_sample_mean"], out["pn_sim_sample_std"] = _category_pn_similarity(
        delta, prev, labels, lr, cfg.pairs, cfg.seed)
    agg = rec[f"dW{layer}"]
    if np.any(agg):
        ps = pseudoneuron_weight_change_similarity(agg, cfg.pairs, cfg.seed)
        out.update(pn_sim_aggregate_mean=ps.mean, pn_sim_aggregate_std=ps.std)
    else:
        out.update(pn_sim_aggregate_mean=np.nan, pn_sim_aggregate_std=np.nan)

    w = cache.weights(epoch).weights[layer - 1]
    split = project_lemma2(w, direction)
    v = split.coeffs
    # dV(x) = dW(x)^T C for dW(x) = -lr delta(x) F(l-1)(x)^T.
    dv = -lr * prev * (delta @ direction)[:, None]
    cos_dv_f = row_cosines(dv, prev)
    if next_epoch is not None:
        df = cache.feature(next_epoch, layer - 1) - prev
        o = o_values(dv, prev, v, df)
        out.update(o_mean=o.mean(), o_std=o.std(), o_nonneg_frac=np.mean(o >= 0.0))
    else:
        out.update(o_mean=np.nan, o_std=np.nan, o_nonneg_frac=np.nan)
    fracs = [alpha_consistency(cos_dv_f[labels == c]).fraction for c in np.unique(labels)]
    fracs = np.array([f for f in fracs if not np.isnan(f)])
    out["alpha_min"] = fracs.min() if fracs.size else np.nan
    out["alpha_mean"] = fracs.mean() if fracs.size else np.nan
    out["dom_kept"], out["dom_ignored"] = dominance_check(v, direction, split.residual, delta)
    strengths = np.linalg.norm(agg.T @ basis.T, axis=0) if basis.shape[0] else np.zeros(0)
    for i in range(cfg.directions):
        out[f"s{i + 1}"] = strengths[i] if i < strengths.size else np.nan
    return out


def _top_categories(run, window_end, count):
    idx = run.epochs.index(window_end) if window_end in run.epochs else len(run.epochs) - 1
    acc = np.nan_to_num(run.accuracy[idx], nan=-1.0)
    order = sorted(range(acc.size), key=lambda c: (-acc[c], c))
    return order[:count]


TABLE_EPOCH_CAP = 10


def table_epochs(window_epochs):
    """At most ``TABLE_EPOCH_CAP`` window epochs, evenly spread, ends included."""
    if len(window_epochs) <= TABLE_EPOCH_CAP:
        return list(window_epochs)
    pick = np.unique(np.round(np.linspace(0, len(window_epochs) - 1, TABLE_EPOCH_CAP)).astype(int))
    return [window_epochs[i] for i in pick]


def table1_rows(cache, run, layers, window_epochs, bases):
    cfg = run.config
    k = cfg.directions
    lr = cfg.learning_rate
    spec = run.spec
    rows = []
    categories = _top_categories(run, window_epochs[-1], cfg.table_categories)
    chosen = table_epochs(window_epochs)
    for layer in layers:
        if layer + 1 > spec.num_layers:
            continue
        for cat in categories:
            members = np.flatnonzero(run.labels == cat)
            try:
                c_next = _window_direction(cache, layer + 1, window_epochs, lr, members)
            except ValueError:
                continue
            prim, terms = [], []
            for t in chosen:
                rec = cache.record(t)
                split = next_layer_split(cache.weights(t).weights[layer], c_next)
                f_l = rec[f"F{layer}"][members]
                f_prev = cache.feature(t, layer - 1)[members]
                gate = _gates(spec, rec[f"open{layer}"][members])
                d_next = rec[f"delta{layer + 1}"][members]
                for j in range(members.size):
                    if not np.any(f_l[j]):
                        continue
                    p, s = theorem1_strengths(split, -lr * np.outer(d_next[j], f_l[j]), f_l[j],
                                              f_prev[j], gate[j], k)
                    prim.append(p)
                    terms.append(np.pad(s, (0, k - s.size), constant_values=np.nan))
            if not prim:
                continue
            st = strength_statistics(prim, np.array(terms))
            row = {"layer": layer, "category": str(cat), "source": "theorem1",
                   "samples": st.count, "primary_mean": st.primary_mean,
                   "primary_std": st.primary_std}
            for i in range(k):
                row[f"S{i + 1}_mean"] = st.term_mean[i]
                row[f"S{i + 1}_std"] = st.term_std[i]
            rows.append(row)
        basis, strengths = bases[layer]
        row = {"layer": layer, "category": "all", "source": "deflation",
               "samples": strengths.shape[1], "primary_mean": np.nan, "primary_std": np.nan}
        for i in range(k):
            ok = i < strengths.shape[0]
            row[f"S{i + 1}_mean"] = strengths[i].mean() if ok else np.nan
            row[f"S{i + 1}_std"] = strengths[i].std() if ok else np.nan
        rows.append(row)
    return rows


def _table_columns(k):
    cols = ["layer", "category", "source", "samples", "primary_mean", "primary_std"]
    for i in range(1, k + 1):
        cols += [f"S{i}_mean", f"S{i}_std"]
    return cols


TABLE_DOCS = {
    "layer": "1-based linear layer l",
    "category": "category index, or 'all' for the deflation rows",
    "source": "theorem1: per-sample decomposition through layer l+1; deflation: direction "
              "strengths of the epoch weight change of layer l",
    "samples": "number of (epoch, sample) records, or window epochs for deflation rows",
    "primary_mean": "mean Frobenius norm of the primary term",
    "primary_std": "std of the same",
}


def _table_doc(col):
    if col in TABLE_DOCS:
        return TABLE_DOCS[col]
    i, stat = col[1:].split("_")
    return f"{stat} strength of component {i}"


def _format(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return fmt(value)


def _csv_text(schema_row, columns, rows):
    buf = io.StringIO()
    buf.write(schema_row + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row[c]) for c in columns])
    return buf.getvalue()


def analyze_run(run_dir, layers=None):
    """Compute every analysis product in memory and return them."""
    run = load_run(run_dir)
    cfg = run.config
    spec = run.spec
    available = cfg.instrumented_layers()
    layers = available if layers is None else list(layers)
    missing = [l for l in layers if l not in range(1, spec.num_layers)]
    if missing:
        raise DataError(f"no records for layers {missing}; available layers: {available}")
    if len(run.train_loss) >= 10:
        phase = detect_phase_transition(run.train_loss)
    else:
        phase = PhaseReport(len(run.train_loss) - 1, False, run.train_loss.copy())
    (w_start, w_end), window = choose_window(run, phase)
    cache = _Cache(run)
    lr = cfg.learning_rate
    k = cfg.directions

    pairs = (cross_category_pairs(run.labels, cfg.pairs, cfg.seed),
             within_category_pairs(run.labels, cfg.pairs, cfg.seed))
    directions, bases = {}, {}
    for layer in layers:
        try:
            directions[layer] = _window_direction(cache, layer, window, lr)
        except ValueError:
            directions[layer] = None
        aggs = np.stack([cache.record(t)[f"dW{layer}"] for t in window])
        kk = min(k, aggs.shape[1])
        basis = deflate_directions(aggs, kk, layer, (window[0], window[-1])) if np.any(aggs) else None
        dirs = basis.directions if basis is not None else np.zeros((0, aggs.shape[1]))
        bases[layer] = (dirs, basis.strengths() if basis is not None else np.zeros((0, len(window))))

    columns = _metric_columns(k)
    docs = dict(METRIC_DOCS)
    docs.update({f"s{i}": f"norm of the epoch weight change along common direction C_{i}"
                 for i in range(1, k + 1)})
    metric_rows = []
    loss_by_epoch = dict(zip(run.epochs, run.train_loss))
    for n, epoch in enumerate(run.record_epochs):
        nxt = run.record_epochs[n + 1] if n + 1 < len(run.record_epochs) else None
        for layer in layers:
            row = {"epoch": epoch, "layer": layer, "train_loss": loss_by_epoch.get(epoch, np.nan),
                   "in_window": int(epoch in window)}
            if directions[layer] is None:
                row.update({c: np.nan for c in columns if c not in row})
            else:
                row.update(layer_epoch_metrics(cache, run, layer, epoch, nxt, directions[layer],
                                               bases[layer][0], pairs))
            metric_rows.append(row)

    table = table1_rows(cache, run, layers, window, bases)
    tcols = _table_columns(k)
    tdocs = {c: _table_doc(c) for c in tcols}
    phases = {
        "rule": phase.rule,
        "detected": bool(phase.detected),
        "transition_epoch": int(phase.transition_epoch),
        "window": [int(w_start), int(min(w_end, run.epochs[-1]))],
        "window_epochs": [int(t) for t in window],
        "middle_layer": spec.num_layers // 2,
        "table_epochs": [int(t) for t in table_epochs(window)],
        "table_categories": [int(c) for c in _top_categories(run, window[-1], cfg.table_categories)],
        "smoothed_loss": [float(f"{v:.17g}") for v in phase.smoothed],
    }
    return {
        "metrics.csv": _csv_text(_schema_row(METRICS_SCHEMA, columns, docs), columns, metric_rows),
        "table1.csv": _csv_text(_schema_row(TABLE_SCHEMA, tcols, tdocs), tcols, table),
        "phases.json": json.dumps(phases, indent=2, sort_keys=True) + "\n",
    }


def run_analyze(run_dir, layers=None):
    """Write metrics.csv, table1.csv and phases.json into ``run_dir``.

    Everything is computed before the first file is written, so a failure
    leaves no partial output behind.
    """
    products = analyze_run(run_dir, layers)
    for name, text in products.items():
        (Path(run_dir) / name).write_text(text)
    return {name: Path(run_dir) / name for name in products}
