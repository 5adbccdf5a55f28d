"""Invariant audit of a run: projection residuals, decomposition reconstruction,
and the dominance ratio of the feature-alignment update."""

from dataclasses import dataclass, field

import numpy as np

from ..decomp import (direction_from_gram, next_layer_split, project_lemma1, project_lemma2,
                      rank1_gram, theorem1_decompose)
from ..linalg import frobenius_norm
from ..metrics import dominance_check
from .analyze import _Cache, _gates, load_run

PROJECTION_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-8
ORTHOGONALITY_TOL = 1e-8


@dataclass
class VerifyReport:
    lines: list = field(default_factory=list)
    failures: int = 0

    @property
    def ok(self):
        return self.failures == 0

    def check(self, name, value, tol):
        good = bool(value <= tol)
        self.failures += not good
        self.lines.append(f"{'ok  ' if good else 'FAIL'} {name}: {value:.3e} (tol {tol:.0e})")

    def note(self, text):
        self.lines.append(f"info {text}")


def _audit_epochs(epochs):
    picks = {epochs[0], epochs[len(epochs) // 2], epochs[-1]}
    return sorted(picks)


def run_verify(run_dir, max_samples=16):
    run = load_run(run_dir)
    cfg = run.config
    spec = run.spec
    lr = cfg.learning_rate
    cache = _Cache(run)
    report = VerifyReport()
    for epoch in _audit_epochs(run.record_epochs):
        rec = cache.record(epoch)
        weights = cache.weights(epoch).weights
        for layer in cfg.instrumented_layers():
            tag = f"epoch {epoch} layer {layer}"
            delta = rec[f"delta{layer}"]
            prev = cache.feature(epoch, layer - 1)
            try:
                c = direction_from_gram(rank1_gram(delta, prev, lr)).vector
            except ValueError:
                report.note(f"{tag}: all weight changes are zero, skipped")
                continue
            agg = rec[f"dW{layer}"]
            p1 = project_lemma1(agg, c)
            scale = max(frobenius_norm(agg), np.finfo(float).tiny)
            report.check(f"{tag} lemma1 residual.C", np.abs(p1.residual @ c).max() / scale,
                         PROJECTION_TOL)
            pyth = abs(frobenius_norm(np.outer(c, p1.coeffs)) ** 2
                       + frobenius_norm(p1.residual) ** 2 - scale ** 2) / scale ** 2
            report.check(f"{tag} lemma1 norm split", pyth, PROJECTION_TOL)
            w = weights[layer - 1]
            p2 = project_lemma2(w, c)
            report.check(f"{tag} lemma2 residual.C",
                         np.abs(p2.residual @ c).max() / frobenius_norm(w), PROJECTION_TOL)
            kept, ignored = dominance_check(p2.coeffs, c, p2.residual, delta)
            ratio = kept / ignored if ignored > 0 else float("inf")
            report.note(f"{tag} dominance kept/ignored = {ratio:.3f}")

            if layer + 1 > spec.num_layers or spec.normalization != "none":
                continue
            d_next = rec[f"delta{layer + 1}"]
            f_l = rec[f"F{layer}"]
            try:
                c_next = direction_from_gram(rank1_gram(d_next, f_l, lr)).vector
            except ValueError:
                continue
            split = next_layer_split(weights[layer], c_next)
            gate = _gates(spec, rec[f"open{layer}"])
            live = [j for j in range(f_l.shape[0]) if np.any(f_l[j])][:max_samples]
            worst, ortho = 0.0, 0.0
            for j in live:
                dw = -lr * np.outer(delta[j], prev[j])
                dec = theorem1_decompose(dw, weights[layer], c_next,
                                         -lr * np.outer(d_next[j], f_l[j]), f_l[j], prev[j],
                                         gate[j], split=split)
                if frobenius_norm(dw) > 0:
                    worst = max(worst, dec.reconstruction_error)
                ortho = max(ortho, dec.max_orthogonality)
            if live:
                report.check(f"{tag} decomposition reconstruction", worst, RECONSTRUCTION_TOL)
                report.check(f"{tag} residual components orthogonal to C", ortho,
                             ORTHOGONALITY_TOL)
    if spec.normalization != "none":
        report.note("normalised network: the per-sample decomposition identity does not apply")
    return report
