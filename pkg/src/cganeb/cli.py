"""Command-line pipeline: simulate, fit-nb, train-cgan, eb, screen, report.

Exit status is 0 on success, 1 for invalid input and 2 for numerical
failures.  Every command computes its results before writing any file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cgan, data, eb, metrics, nbglm, screening, simgen

log = logging.getLogger("cganeb")

SEED_ENV = "CGANEB_SEED"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class UsageError(ValueError):
    pass


def _default_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _require_seed(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if seed is None:
        raise UsageError(f"--seed is required (or set {SEED_ENV})")
    return seed


def _distinct_paths(inputs, outputs) -> None:
    outs = [Path(p).resolve() for p in outputs if p]
    if len(set(outs)) != len(outs):
        raise UsageError("output paths must be distinct")
    ins = {Path(p).resolve() for p in inputs if p}
    clash = ins.intersection(outs)
    if clash:
        raise UsageError(f"output would overwrite input {sorted(clash)[0]}")


def _table(args) -> data.SiteTable:
    schema = data.load_schema(args.schema) if getattr(args, "schema", None) else None
    return data.load_sites(args.data, schema)


def _load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None
    kind = doc.get("kind")
    if kind == "nb":
        return nbglm.NbModel.from_dict(doc)
    if kind == "cgan":
        return cgan.CganModel.from_dict(doc)
    raise UsageError(f"{path}: unknown model kind {kind!r}")


def _write_text(path, text) -> None:
    Path(path).write_text(text, encoding="utf-8")


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args) -> None:
    seed = _require_seed(args)
    _distinct_paths([], [args.out, args.truth])
    cfg = simgen.SimConfig(n_sites=args.n, alpha=args.alpha, seed=seed,
                           shoulder_corr=args.shoulder_corr or None,
                           period_scale=args.period_scale)
    table, truth = simgen.generate_sites(cfg)
    data.save_sites(table, args.out)
    if args.truth:
        truth.save(args.truth)
    log.info("wrote %d sites to %s", len(table), args.out)


def nb_summary(model: nbglm.NbModel) -> str:
    rows = [("Variable", "Coefficient", "SE", "p-value")]
    for name, b, s, p in zip(model.columns, model.beta, model.se, model.p_values):
        rows.append((name, f"{b:.4g}", f"{s:.2g}", f"{p:.2f}"))
    a_se = "na" if np.isnan(model.alpha_se) else f"{model.alpha_se:.2g}"
    rows.append(("alpha", f"{model.alpha:.4g}", a_se, ""))
    f = model.fit
    for name, v in (("Deviance", f.deviance), ("Pearson chi2", f.pearson_chi2),
                    ("Log-likelihood", f.log_likelihood), ("AIC", f.aic), ("BIC", f.bic)):
        rows.append((name, f"{v:.4g}", "na", "na"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    return "\n".join(lines) + "\n"


def cmd_fit_nb(args) -> None:
    _distinct_paths([args.data, args.schema], [args.out])
    table = _table(args)
    form = data.ModelForm(linear_features=tuple(args.features), aadt_mode=args.aadt_mode)
    x, y = data.split_design(table, args.period, form)
    model = nbglm.fit_nb(x, y, dispersion=args.dispersion.replace("-", "_"), form=form)
    model.save(args.out)
    sys.stdout.write(nb_summary(model))


def _train_config(args, seed) -> cgan.TrainConfig:
    return cgan.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr_g=args.lr_g,
                            lr_d=args.lr_d, decay_g=args.decay_g, decay_d=args.decay_d, seed=seed)


def cmd_train_cgan(args) -> None:
    seed = _require_seed(args)
    _distinct_paths([args.data, args.schema], [args.out, args.log])
    table = _table(args)
    config = _train_config(args, seed)

    def progress(epoch, tlog):
        if epoch % 100 == 0 or epoch == config.epochs:
            log.info("epoch %d: real %.4f fake %.4f gen %.4f", epoch, tlog.real_loss[-1],
                     tlog.fake_loss[-1], tlog.gen_loss[-1])

    model = cgan.train(table, args.period, config, progress)
    model.save(args.out)
    if args.log:
        model.log.to_csv(args.log)


def cmd_eb(args) -> None:
    seed = args.seed if args.seed is not None else (_default_seed() or 0)
    _distinct_paths([args.data, args.schema, args.model], [args.out])
    table = _table(args)
    model = _load_model(args.model)
    want = {"nb": nbglm.NbModel, "cgan": cgan.CganModel}[args.method]
    if not isinstance(model, want):
        raise UsageError(f"--method {args.method} does not match the model in {args.model}")
    estimates = eb.eb_table(model, table, args.period, m=args.m, seed=seed,
                            on_degenerate=args.on_degenerate)
    eb.save_eb(estimates, args.out)


def cmd_screen(args) -> None:
    inputs = [args.data, args.schema] + [p for _, a, b in args.method for p in (a, b)]
    _distinct_paths(inputs, [args.out, args.text])
    table = _table(args)
    methods = {}
    for name, p1, p2 in args.method:
        if name in methods:
            raise UsageError(f"method {name!r} given twice")
        methods[name] = (eb.load_eb(p1), eb.load_eb(p2))
    report = screening.compare(methods, table, args.thresholds, baseline=args.baseline)
    text = report.to_text()
    if args.out:
        report.to_csv(args.out)
    if args.text:
        _write_text(args.text, text)
    sys.stdout.write(text)


def _top_table(name, ranking, table, est_by, years, k=10) -> str:
    rec = {r.site_id: r for r in table.records}
    heads = ["Rank", "Site", "Count", "L"]
    for m in est_by:
        heads += [f"{m} pred", f"{m}", f"{m}/yr"]
    rows = [heads]
    for e in ranking.entries[:k]:
        row = [str(e.rank), e.site_id, str(int(est_by[name][e.site_id].observed)),
               f"{rec[e.site_id].length_mi:.2f}"]
        for m in est_by:
            x = est_by[m][e.site_id]
            row += [f"{x.prediction:.1f}", f"{x.eb:.1f}", f"{x.eb / years:.2f}"]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(heads))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows) + "\n"


def cmd_report(args) -> None:
    seed = args.seed if args.seed is not None else (_default_seed() or 0)
    out = Path(args.out_dir)
    table = _table(args)
    nb_model = _load_model(args.nb_model)
    cg_model = _load_model(args.cgan_model)
    if not isinstance(nb_model, nbglm.NbModel) or not isinstance(cg_model, cgan.CganModel):
        raise UsageError("--nb-model must be an NB model and --cgan-model a CGAN model")
    p1, p2 = table.period_ids[:2]

    estimates = {}
    for period in (p1, p2):
        estimates[("NB-EB", period)] = eb.eb_table(nb_model, table, period)
        estimates[("CGAN-EB", period)] = eb.eb_table(cg_model, table, period, m=args.m, seed=seed,
                                                     on_degenerate="flag")
    methods = {m: (estimates[(m, p1)], estimates[(m, p2)]) for m in ("NB-EB", "CGAN-EB")}
    report = screening.compare(methods, table, args.thresholds)

    metric_rows = []
    for label, period in (("fit", p1), ("predict", p2)):
        y = table.counts(period)
        for m, short in (("NB-EB", "NB"), ("CGAN-EB", "CGAN")):
            pred = np.array([e.prediction for e in estimates[(m, period)]])
            metric_rows.append((label, period, short, metrics.evaluate(y, pred)))

    corr = data.correlation_matrix(table)
    # all inputs parsed and every result computed: now write
    out.mkdir(parents=True, exist_ok=True)
    for (m, period), est in estimates.items():
        eb.save_eb(est, out / f"eb_{m.split('-')[0].lower()}_{period.lower()}.csv")
    report.to_csv(out / "screening.csv")
    corr.to_csv(out / "correlation.csv")
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "period", "model", "mae", "mape", "r2", "n_used", "n_excluded"])
        for label, period, short, r in metric_rows:
            w.writerow([label, period, short, repr(r.mae), repr(r.mape), repr(r.r2), r.n_used, r.n_excluded])

    parts = [f"Sites: {len(table)}  periods: {p1}, {p2}  CGAN samples per site: {args.m}\n",
             "\nNB model coefficients\n", nb_summary(nb_model),
             "\nFit (P1) and prediction (P2) accuracy\n"]
    lines = [("Data", "Criterion", "NB", "CGAN", "CGAN improvement")]
    for label in ("fit", "predict"):
        nb_r = next(r for lab, _, s, r in metric_rows if lab == label and s == "NB")
        cg_r = next(r for lab, _, s, r in metric_rows if lab == label and s == "CGAN")
        for crit, better_high in (("mape", False), ("mae", False), ("r2", True)):
            a, b = getattr(nb_r, crit), getattr(cg_r, crit)
            imp = screening.improvement("SCT" if better_high else "PDT", a, b)
            lines.append((label, crit.upper(), f"{a:.3g}", f"{b:.3g}", screening._pct(imp)))
    widths = [max(len(r[i]) for r in lines) for i in range(5)]
    parts.append("\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in lines) + "\n")
    est_by = {m: {e.site_id: e for e in estimates[(m, p1)]} for m in ("CGAN-EB", "NB-EB")}
    for m in ("CGAN-EB", "NB-EB"):
        ranking = screening.rank_sites(estimates[(m, p1)], table, m, p1)
        parts.append(f"\nTop 10 hotspots by {m}, {p1}\n")
        parts.append(_top_table(m, ranking, table, est_by, args.period_years))
    parts.append("\nScreening consistency tests\n")
    parts.append(report.to_text())
    _write_text(out / "report.txt", "".join(parts))
    sys.stdout.write("".join(parts))


# -- parser ----------------------------------------------------------------------------

def _add_data(p):
    p.add_argument("--data", required=True, help="site CSV")
    p.add_argument("--schema", help="JSON column mapping (default: canonical columns)")


def _add_period(p):
    p.add_argument("--period", default="P1", help="period id (default: P1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cganeb", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic site table and its true means")
    p.add_argument("--n", type=int, default=3085, help="number of sites (default: 3085)")
    p.add_argument("--seed", type=int, help=f"random seed (default: ${SEED_ENV})")
    p.add_argument("--alpha", type=float, default=simgen.DEFAULT_ALPHA, help="true NB dispersion (default: 0.836)")
    p.add_argument("--shoulder-corr", type=float, default=0.8,
                   help="correlation within each shoulder pair; 0 for none (default: 0.8)")
    p.add_argument("--period-scale", type=float, default=1.0,
                   help="multiplier from exp(linear predictor) to expected crashes per period (default: 1)")
    p.add_argument("--out", required=True, help="site CSV to write")
    p.add_argument("--truth", help="true-mean CSV to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-nb", parents=[common], help="fit the NB safety performance function")
    _add_data(p)
    _add_period(p)
    p.add_argument("--features", nargs="*", default=["rsw2", "mw"],
                   help="untransformed covariates besides ln(L) and ln(F) (default: rsw2 mw)")
    p.add_argument("--aadt-mode", choices=["period", "mean"], default="period",
                   help="period AADT or all-period mean (default: period)")
    p.add_argument("--dispersion", choices=["ml", "aux-ols"], default="ml",
                   help="dispersion estimate: aux-OLS alternation refined by profile ML, or aux-OLS only (default: ml)")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.set_defaults(func=cmd_fit_nb)

    p = sub.add_parser("train-cgan", parents=[common], help="train the conditional GAN")
    _add_data(p)
    _add_period(p)
    p.add_argument("--seed", type=int, help=f"random seed (default: ${SEED_ENV})")
    p.add_argument("--epochs", type=int, default=1000, help="training epochs (default: 1000)")
    p.add_argument("--batch-size", type=int, default=100, help="batch size (default: 100)")
    p.add_argument("--lr-g", type=float, default=0.001, help="generator learning rate (default: 0.001)")
    p.add_argument("--lr-d", type=float, default=0.001, help="discriminator learning rate (default: 0.001)")
    p.add_argument("--decay-g", type=float, default=0.001, help="generator learning-rate decay (default: 0.001)")
    p.add_argument("--decay-d", type=float, default=0.0, help="discriminator learning-rate decay (default: 0.0)")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--log", help="training-log CSV to write")
    p.set_defaults(func=cmd_train_cgan)

    p = sub.add_parser("eb", parents=[common], help="empirical-Bayes estimates for one period")
    _add_data(p)
    _add_period(p)
    p.add_argument("--model", required=True, help="NB or CGAN model JSON")
    p.add_argument("--method", choices=["nb", "cgan"], required=True, help="which EB estimator")
    p.add_argument("--m", type=int, default=cgan.DEFAULT_M, help="CGAN samples per site (default: 500)")
    p.add_argument("--seed", type=int, help=f"sampling seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--on-degenerate", choices=["flag", "raise"], default="flag",
                   help="zero generator mean: flag and keep the observed count, or fail (default: flag)")
    p.add_argument("--out", required=True, help="EB CSV to write")
    p.set_defaults(func=cmd_eb)

    p = sub.add_parser("screen", parents=[common], help="rank sites and score consistency tests")
    _add_data(p)
    p.add_argument("--method", nargs=3, action="append", required=True,
                   metavar=("NAME", "EB_P1", "EB_P2"), help="method name and its EB CSVs; repeatable")
    p.add_argument("--baseline", help="method improvements are measured against (default: first)")
    p.add_argument("--thresholds", type=float, nargs="+", default=list(screening.THRESHOLDS),
                   help="top fractions of sites (default: 0.025 0.05 0.075 0.1)")
    p.add_argument("--out", help="report CSV to write")
    p.add_argument("--text", help="aligned text report to write")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("report", parents=[common], help="coefficients, accuracy, top hotspots and screening tests")
    _add_data(p)
    p.add_argument("--nb-model", required=True)
    p.add_argument("--cgan-model", required=True)
    p.add_argument("--m", type=int, default=cgan.DEFAULT_M, help="CGAN samples per site (default: 500)")
    p.add_argument("--seed", type=int, help=f"sampling seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--thresholds", type=float, nargs="+", default=list(screening.THRESHOLDS))
    p.add_argument("--period-years", type=float, default=3.0, help="years per period for per-year columns")
    p.add_argument("--out-dir", required=True, help="directory for report files")
    p.set_defaults(func=cmd_report)
    return parser


NUMERICAL_ERRORS = (nbglm.FitError, cgan.TrainingError, eb.DegenerateEstimateError,
                    FloatingPointError, OverflowError, np.linalg.LinAlgError)
INVALID_ERRORS = (UsageError, data.DataError, screening.ScreeningError, ValueError, KeyError,
                  OSError, json.JSONDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"cganeb {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except INVALID_ERRORS as exc:
        print(f"cganeb {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
