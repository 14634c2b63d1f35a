"""Batch command-line front end.

Subcommands: simulate, kde, fit, embed, test-groups, test-dims, coarsen,
report.  Exit codes: 0 success, 2 usage/config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import ccmx, kernels
from .config import RunConfig, apply_overrides, build_system, parse_config
from .errors import (CCEmbedError, ConfigurationError, DataError,
                     GeometryError, NumericalError)
from .inference import (GroupLabels, bh_fdr, holm_correction, mmd_test,
                        per_dimension_tests)
from .kde import heat_coefficients, kde_estimate, load_field, save_field
from .pointprocess import (random_latent_model, read_endpoints,
                           sample_intensity, sample_pattern, write_endpoints)
from .reduced_rank import (SvdFactors, _fit_tensor, ResidualTensor, embed,
                           load_fit, save_fit, variance_explained_trace)
from .subnetwork import (coarsen, octant_parcellation, read_parcellation,
                         top_edges, write_adjacency, write_edges,
                         write_parcellation)


def _atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig().validate()
    return apply_overrides(cfg, args.set or [])


def _config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    sys_basis, grid = build_system(cfg)
    model = random_latent_model(
        sys_basis, cfg.model_components, cfg.model_rho_scale,
        cfg.model_rho_decay, cfg.model_mean_level, cfg.baseline_rate,
        seed=[cfg.seed, 1])
    patterns, all_scores, subject_ids = [], [], []
    for i in range(cfg.n_subjects):
        sid = f"subj{i:04d}"
        scores, intensity = sample_intensity(model, seed=[cfg.seed, 2, i])
        pattern = sample_pattern(intensity, cfg.expected_count,
                                 seed=[cfg.seed, 3, i], subject_id=sid)
        patterns.append(pattern)
        all_scores.append([float(z) for z in scores])
        subject_ids.append(sid)
    write_endpoints(args.out, patterns)
    truth = {
        "subject_ids": subject_ids,
        "scores": all_scores,
        "score_variances": [float(r) for r in model.score_variances],
        "baseline_rate": cfg.baseline_rate,
        "seed": cfg.seed,
        "config": _config_dict(cfg),
        "basis_id": sys_basis.basis_id,
    }
    _atomic_write_text(args.truth, json.dumps(truth, indent=1, sort_keys=True))
    ccmx.write_ccmx(args.truth + ".components.ccmx", model.components)
    print(f"simulate: wrote {sum(p.n_pairs for p in patterns)} pairs "
          f"for {cfg.n_subjects} subjects -> {args.out}")
    return 0


def _kde_fields(cfg: RunConfig, sys_basis, grid, patterns):
    """Per-subject KDE fields in input order, worker count independent."""
    coeffs = heat_coefficients(cfg.bandwidth)

    def one(pattern):
        return kde_estimate(pattern, cfg.bandwidth, grid,
                            count_scale=cfg.count_scale, coeffs=coeffs)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(one, patterns))
    return [one(p) for p in patterns]


def cmd_kde(args) -> int:
    cfg = _load_config(args)
    sys_basis, grid = build_system(cfg)
    patterns = read_endpoints(args.endpoints)
    if not patterns:
        raise DataError("no subjects in the endpoint file")
    os.makedirs(args.out, exist_ok=True)
    subjects = []
    for pattern in patterns:
        field = _kde_fields(cfg, sys_basis, grid, [pattern])[0]
        save_field(field, os.path.join(args.out, pattern.subject_id))
        subjects.append(pattern.subject_id)
    manifest = {"subjects": subjects, "grid_id": grid.grid_id,
                "bandwidth": cfg.bandwidth, "count_scale": cfg.count_scale,
                "config": _config_dict(cfg)}
    _atomic_write_text(os.path.join(args.out, "manifest.json"),
                       json.dumps(manifest, indent=1, sort_keys=True))
    print(f"kde: wrote {len(subjects)} fields -> {args.out}")
    return 0


def _compressed_slices(cfg, sys_basis, grid, svd, args):
    """Stream subjects into compressed slices (uncentered)."""
    w = grid.weight
    if args.endpoints:
        patterns = read_endpoints(args.endpoints)
        if not patterns:
            raise DataError("no subjects in the endpoint file")
        coeffs = heat_coefficients(cfg.bandwidth)

        def one(pattern):
            field = kde_estimate(pattern, cfg.bandwidth, grid,
                                 count_scale=cfg.count_scale, coeffs=coeffs)
            g = svd.U.T @ (w * field.values) @ svd.U
            return (g + g.T) / 2.0

        ids = [p.subject_id for p in patterns]
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                slices = list(pool.map(one, patterns))
        else:
            slices = [one(p) for p in patterns]
        return ids, slices
    with open(os.path.join(args.fields, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest["grid_id"] != grid.grid_id:
        raise DataError("field grid does not match the configured grid")
    ids, slices = [], []
    for sid in manifest["subjects"]:
        field = load_field(os.path.join(args.fields, sid))
        g = svd.U.T @ (w * field.values) @ svd.U
        slices.append((g + g.T) / 2.0)
        ids.append(sid)
    return ids, slices


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    if bool(args.endpoints) == bool(args.fields):
        raise ConfigurationError("give exactly one of --endpoints / --fields")
    sys_basis, grid = build_system(cfg)
    svd = SvdFactors.from_matrix(np.sqrt(grid.weight) * sys_basis.Phi)
    ids, slices = _compressed_slices(cfg, sys_basis, grid, svd, args)
    if len(slices) < 2:
        raise DataError("need at least two subjects to center and fit")
    mean_slice = np.zeros_like(slices[0])
    for g in slices:
        mean_slice += g
    mean_slice /= len(slices)
    G0 = ResidualTensor(np.array([g - mean_slice for g in slices]), step=0)
    basis, scores, diag = _fit_tensor(
        G0, svd, sys_basis.Q, ids, cfg.K, cfg.alpha1, cfg.alpha2,
        cfg.ao_tol, cfg.ao_max_iter, seed=cfg.seed,
        basis_ref=sys_basis.basis_id)
    meta = {"config": _config_dict(cfg), "kernel_backend": kernels.BACKEND}
    save_fit(args.out, basis, scores, diag, meta, mean_slice=mean_slice)
    ve = variance_explained_trace(diag)
    print(f"fit: K={basis.K} variance_explained={ve[-1]:.6f} -> {args.out}")
    return 0


def _rebuild_system(meta):
    cfg = RunConfig(**meta["config"]).validate()
    sys_basis, grid = build_system(cfg)
    if sys_basis.basis_id != meta.get("basis_ref", sys_basis.basis_id):
        raise DataError("rebuilt basis does not match the fit "
                        "(configuration drift?)")
    return cfg, sys_basis, grid


def cmd_embed(args) -> int:
    basis, scores, meta, mean_slice = load_fit(args.fit)
    cfg, sys_basis, grid = _rebuild_system(meta)
    svd = SvdFactors.from_matrix(np.sqrt(grid.weight) * sys_basis.Phi)
    with open(os.path.join(args.fields, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest["grid_id"] != grid.grid_id:
        raise DataError("field grid does not match the fit grid")
    rows = []
    for sid in manifest["subjects"]:
        field = load_field(os.path.join(args.fields, sid))
        s = embed(field, basis, sys_basis, svd=svd, mean_slice=mean_slice)
        rows.append([sid] + [repr(float(x)) for x in s])
    header = ["subject_id"] + [f"s{k}" for k in range(basis.K)]
    text = ",".join(header) + "\n" + "\n".join(",".join(r) for r in rows) + "\n"
    _atomic_write_text(args.out, text)
    print(f"embed: wrote scores for {len(rows)} subjects -> {args.out}")
    return 0


def _read_labels(path, subject_ids):
    mapping = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0] == "subject_id":
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected subject_id,label")
            try:
                mapping[row[0]] = int(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad label") from exc
    missing = [sid for sid in subject_ids if sid not in mapping]
    if missing:
        raise DataError(f"labels missing for subjects: {missing[:5]}")
    return np.array([mapping[sid] for sid in subject_ids], dtype=np.int8)


def _write_results(prefix, rows) -> None:
    header = ["trait", "statistic", "p", "p_adjusted", "rejected",
              "neg_log10_p"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join([
            r["trait"], repr(r["statistic"]), repr(r["p"]),
            repr(r["p_adjusted"]), str(int(r["rejected"])),
            repr(r["neg_log10_p"])]))
    _atomic_write_text(prefix + ".csv", "\n".join(lines) + "\n")
    _atomic_write_text(prefix + ".json", json.dumps(rows, indent=1))


def cmd_test_groups(args) -> int:
    cfg = _load_config(args)
    _, scores, _, _ = load_fit(args.fit)
    labels = GroupLabels(_read_labels(args.labels, scores.subject_ids))
    result = mmd_test(scores, labels, n_perm=cfg.n_perm, seed=cfg.seed,
                      kernel=args.kernel)
    rows = [{
        "trait": "group_difference",
        "statistic": result.statistic,
        "p": result.p_value,
        "p_adjusted": result.p_value,
        "rejected": bool(result.p_value <= cfg.alpha_level),
        "neg_log10_p": float(-np.log10(result.p_value)),
    }]
    _write_results(args.out, rows)
    print(f"test-groups: MMD^2={result.statistic:.6g} p={result.p_value:.4g}")
    return 0


def cmd_test_dims(args) -> int:
    cfg = _load_config(args)
    _, scores, _, _ = load_fit(args.fit)
    labels = GroupLabels(_read_labels(args.labels, scores.subject_ids))
    results = per_dimension_tests(scores, labels, n_perm=cfg.n_perm,
                                  seed=cfg.seed)
    p = np.array([r.p_value for r in results])
    if args.correction == "holm":
        reject, adjusted = holm_correction(p, cfg.alpha_level)
    else:
        reject, adjusted = bh_fdr(p, cfg.alpha_level)
    rows = []
    for k, r in enumerate(results):
        rows.append({
            "trait": f"dim_{k:03d}",
            "statistic": r.statistic,
            "p": r.p_value,
            "p_adjusted": float(adjusted[k]),
            "rejected": bool(reject[k]),
            "neg_log10_p": float(-np.log10(r.p_value)),
        })
    _write_results(args.out, rows)
    print(f"test-dims: {int(reject.sum())} of {len(rows)} dimensions "
          f"significant ({args.correction}, level {cfg.alpha_level})")
    return 0


def cmd_coarsen(args) -> int:
    cfg = _load_config(args)
    basis, _, meta, _ = load_fit(args.fit)
    _, sys_basis, grid = _rebuild_system(meta)
    try:
        ks = [int(x) for x in args.ks.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigurationError(f"bad --ks list: {exc}") from exc
    if not ks or any(not 0 <= k < basis.K for k in ks):
        raise ConfigurationError(f"--ks must select dimensions in [0, {basis.K})")
    if args.parcellation == "octant16":
        parc = octant_parcellation(grid)
    else:
        parc = read_parcellation(args.parcellation, grid)
    A, names, _ = coarsen(ks, basis.C, sys_basis, parc)
    edges = top_edges(A, cfg.edge_fraction)
    write_adjacency(args.out + ".adjacency.csv", A, names)
    write_edges(args.out + ".edges.csv", edges, names)
    print(f"coarsen: {len(names)} parcels, kept {len(edges)} edges")
    return 0


def _svg_polyline(values, width=480, height=240, margin=30) -> str:
    values = np.asarray(values, dtype=np.float64)
    top = values.max() if values.size and values.max() > 0 else 1.0
    xs = np.linspace(margin, width - margin, values.size)
    ys = height - margin - (values / top) * (height - 2 * margin)
    pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}"><rect width="100%" height="100%" '
            f'fill="white"/><polyline points="{pts}" fill="none" '
            f'stroke="black" stroke-width="1.5"/></svg>\n')


def cmd_report(args) -> int:
    _, _, meta, _ = load_fit(args.fit)
    residual = meta["diagnostics"]["residual_norms"]
    r0 = residual[0] if residual[0] > 0 else 1.0
    ve = [1.0 - (r / r0) ** 2 for r in residual]
    summary = {
        "K": meta["K"],
        "residual_norms": residual,
        "variance_explained": ve,
        "residual_ratio": meta.get("residual_ratio"),
    }
    lines = ["k,residual_norm,variance_explained"]
    for k, (r, v) in enumerate(zip(residual, ve)):
        lines.append(f"{k},{r!r},{v!r}")
    if args.tests:
        with open(args.tests) as fh:
            rows = json.load(fh)
        summary["tests"] = rows
        lines.append("")
        lines.append("trait,p,p_adjusted,neg_log10_p,rejected")
        for r in rows:
            lines.append(f"{r['trait']},{r['p']!r},{r['p_adjusted']!r},"
                         f"{r['neg_log10_p']!r},{int(r['rejected'])}")
    _atomic_write_text(args.out + ".json",
                       json.dumps(summary, indent=1, sort_keys=True))
    _atomic_write_text(args.out + ".csv", "\n".join(lines) + "\n")
    if args.svg:
        _atomic_write_text(args.out + ".svg", _svg_polyline(residual))
    print(f"report: variance explained {ve[-1]:.6f} at K={meta['K']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccembed",
        description="Continuous-connectivity embedding pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")

    p = sub.add_parser("simulate", help="generate synthetic endpoint pairs")
    common(p)
    p.add_argument("--out", required=True, help="endpoint CSV path")
    p.add_argument("--truth", required=True, help="ground-truth JSON path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kde", help="estimate per-subject fields")
    common(p)
    p.add_argument("--endpoints", required=True)
    p.add_argument("--out", required=True, help="output field directory")
    p.set_defaults(func=cmd_kde)

    p = sub.add_parser("fit", help="learn the reduced-rank basis")
    common(p)
    p.add_argument("--endpoints", help="endpoint CSV input")
    p.add_argument("--fields", help="field directory input")
    p.add_argument("--out", required=True, help="fit output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("embed", help="score new fields with a learned basis")
    common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--fields", required=True)
    p.add_argument("--out", required=True, help="scores CSV path")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("test-groups", help="MMD permutation test")
    common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--labels", required=True, help="subject_id,label CSV")
    p.add_argument("--kernel", default="gaussian",
                   choices=["gaussian", "energy"])
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_test_groups)

    p = sub.add_parser("test-dims", help="per-dimension permutation tests")
    common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--correction", default="holm", choices=["holm", "bh"])
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_test_dims)

    p = sub.add_parser("coarsen", help="parcel-coarsened support adjacency")
    common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--ks", required=True,
                   help="comma-separated component indices")
    p.add_argument("--parcellation", default="octant16",
                   help="parcellation CSV, or 'octant16' for the synthetic atlas")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_coarsen)

    p = sub.add_parser("report", help="summarize a fit directory")
    p.add_argument("--fit", required=True)
    p.add_argument("--tests", help="test results JSON to include")
    p.add_argument("--svg", action="store_true",
                   help="also write a residual-trace SVG")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-parcellation",
                       help="write the synthetic octant parcellation CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_parcellation)
    return parser


def cmd_export_parcellation(args) -> int:
    cfg = _load_config(args)
    _, grid = build_system(cfg)
    write_parcellation(args.out, octant_parcellation(grid))
    print(f"export-parcellation: wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 2
    except (DataError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except CCEmbedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
