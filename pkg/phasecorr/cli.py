import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from pydantic import ValidationError as PydanticValidationError

from phasecorr import __version__
from phasecorr.activation import witness_report, witness_scan
from phasecorr.config import (CANONICAL, DEFAULT_CUTOFF, DEFAULT_ENSEMBLES,
                              DEFAULT_GRID, DEFAULT_N_BINS,
                              DEFAULT_TOMO_BATCHES)
from phasecorr.core.errors import PhaseCorrError, ValidationError
from phasecorr.core.monitor import configure_logging
from phasecorr.dataset_utils import (read_dataset, read_embedded_config,
                                     write_dataset, write_json, write_table)
from phasecorr.filterkernel import build_pattern_table
from phasecorr.gaussian_sim import (AsymmetricSource, PhaseNoiseModel,
                                    SqueezingSpec, bin_phases,
                                    sample_asymmetric, sample_dataset)
from phasecorr.processors.quasiprob import (ensemble_stats, grid_axis,
                                            normalization_check,
                                            pomega_oracle, significance,
                                            width_scan)
from phasecorr.processors.tomography import (coherence_with_errors,
                                             monte_carlo_errors,
                                             offdiagonal_histogram,
                                             project_psd, reconstruct_dm)

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "tomo", "pomega", "scan-width", "witness", "oracle")


class RunConfig(BaseModel):
    """Every parameter that determines a command's output; embedded in each output file."""
    command: Literal["simulate", "tomo", "pomega", "scan-width", "witness", "oracle"]
    seed: int = Field(0, ge=0)
    format: Literal["csv", "json"] = "csv"
    # squeezing source
    squeeze_db: Optional[float] = None
    r: Optional[float] = Field(None, ge=0.0)
    detected: bool = False
    eta: float = Field(CANONICAL["eta"], ge=0.0, le=1.0)
    theta: float = 0.0
    excess_noise: float = Field(0.0, ge=0.0)
    r2: Optional[float] = Field(None, ge=0.0)
    relative_phase: float = float(np.pi / 2)
    noise: Literal["none", "uniform", "band_limited"] = "none"
    noise_sigma: float = Field(0.0, ge=0.0)
    correlation_time: float = Field(1.0, gt=0.0)
    n: int = Field(10 ** 6, ge=1)
    # analysis
    data: Optional[str] = None
    cutoff: int = Field(DEFAULT_CUTOFF, ge=1)
    bins: int = Field(DEFAULT_N_BINS, ge=1)
    batches: int = Field(DEFAULT_TOMO_BATCHES, ge=2)
    mc_reps: int = Field(0, ge=0)
    psd: bool = False
    w: float = Field(CANONICAL["w"], gt=0.0)
    w_list: Optional[List[float]] = None
    grid: Tuple[float, float, float] = DEFAULT_GRID
    ensembles: int = Field(DEFAULT_ENSEMBLES, ge=2)
    oracle: bool = False
    # activation
    p: float = Field(0.5, ge=0.0, lt=1.0)
    scan_p: Optional[List[float]] = None

    def squeezing(self) -> SqueezingSpec:
        if self.r is not None:
            return SqueezingSpec(r=self.r, theta=self.theta, eta=self.eta, excess_noise=self.excess_noise)
        db = CANONICAL["squeeze_db"] if self.squeeze_db is None else self.squeeze_db
        spec = SqueezingSpec.from_db(db, eta=self.eta, theta=self.theta, detected=self.detected)
        return spec.model_copy(update={"excess_noise": self.excess_noise})

    def noise_model(self) -> PhaseNoiseModel:
        return PhaseNoiseModel(kind=self.noise, sigma=self.noise_sigma, correlation_time=self.correlation_time)

    def embedded(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _count(text: str) -> int:
    """Record counts such as 1e7."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value.is_integer() or value < 1:
        raise argparse.ArgumentTypeError(f"not a positive integer: {text!r}")
    return int(value)


def _range(text: str) -> List[float]:
    """Inclusive range start:stop:step."""
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 12) for i in range(n)]


def _grid(text: str) -> Tuple[float, float, float]:
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    return start, stop, step


def _source_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--squeeze-db', dest='squeeze_db', type=float,
                       help=f'Squeezing in dB (default: {CANONICAL["squeeze_db"]})')
    group.add_argument('--r', type=float, help='Squeezing magnitude r')
    parser.add_argument('--detected', action='store_true',
                        help='Interpret --squeeze-db as the detected level')
    parser.add_argument('--eta', type=float, help=f'Quantum efficiency per mode (default: {CANONICAL["eta"]})')
    parser.add_argument('--theta', type=float, help='Squeezing phase in radians')
    parser.add_argument('--excess-noise', dest='excess_noise', type=float,
                        help='Uncorrelated excess quadrature variance per mode')


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument('--seed', type=int, help='Random seed (default: 0)')
    common.add_argument('--out', type=Path, help='Output directory (default: current directory)')
    common.add_argument('--threads', type=int, help='Worker threads; results do not depend on it')
    common.add_argument('--format', choices=['csv', 'json'], help='Table format (default: csv)')
    common.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')
    common.add_argument('--config', type=Path, help='Rerun the configuration embedded in an output file')

    parser = argparse.ArgumentParser(description='Phase-randomized two-mode squeezed vacuum toolkit',
                                     parents=[common])
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command')

    simulate = subparsers.add_parser('simulate', parents=[common], argument_default=argparse.SUPPRESS,
                                     help='Simulate a homodyne dataset')
    _source_arguments(simulate)
    simulate.add_argument('--noise', choices=['none', 'uniform', 'band_limited'], help='Phase noise model')
    simulate.add_argument('--noise-sigma', dest='noise_sigma', type=float, help='Band-limited noise std (rad)')
    simulate.add_argument('--correlation-time', dest='correlation_time', type=float,
                          help='Band-limited noise correlation time in records')
    simulate.add_argument('--n', type=_count, help='Record count, e.g. 1e7')
    simulate.add_argument('--r2', type=float, help='Second source squeezing; enables the two-source model')
    simulate.add_argument('--relative-phase', dest='relative_phase', type=float,
                          help='Relative phase of the two sources (default: pi/2)')

    tomo = subparsers.add_parser('tomo', parents=[common], argument_default=argparse.SUPPRESS,
                                 help='Reconstruct the photon-number density matrix')
    tomo.add_argument('--data', type=str, help='PQDS dataset')
    tomo.add_argument('--cutoff', type=int, help=f'Fock cutoff per mode (default: {DEFAULT_CUTOFF})')
    tomo.add_argument('--bins', type=int, help=f'Phase bins per mode (default: {DEFAULT_N_BINS})')
    tomo.add_argument('--batches', type=int, help=f'Batches for error bars (default: {DEFAULT_TOMO_BATCHES})')
    tomo.add_argument('--mc-reps', dest='mc_reps', type=int, help='Monte Carlo repetitions (>= 20)')
    tomo.add_argument('--psd', action='store_true', help='Also write the PSD-projected estimate')

    pomega = subparsers.add_parser('pomega', parents=[common], argument_default=argparse.SUPPRESS,
                                   help='Sample the regularized P function')
    pomega.add_argument('--data', type=str, help='PQDS dataset')
    pomega.add_argument('--w', type=float, help=f'Width parameter (default: {CANONICAL["w"]})')
    pomega.add_argument('--grid', type=_grid, help='Radial grid start:stop:step (default: 0:3:0.1)')
    pomega.add_argument('--ensembles', type=int, help=f'Ensembles for sigma_N (default: {DEFAULT_ENSEMBLES})')
    pomega.add_argument('--oracle', action='store_true', help='Add the deterministic oracle column')

    scan = subparsers.add_parser('scan-width', parents=[common], argument_default=argparse.SUPPRESS,
                                 help='Significance as a function of the width parameter')
    scan.add_argument('--data', type=str, help='PQDS dataset')
    scan.add_argument('--w', dest='w_list', type=_range, help='Widths start:stop:step (default: 1.0:1.8:0.1)')
    scan.add_argument('--grid', type=_grid, help='Radial grid start:stop:step')
    scan.add_argument('--ensembles', type=int, help='Ensembles for sigma_N')

    witness = subparsers.add_parser('witness', parents=[common], argument_default=argparse.SUPPRESS,
                                    help='Entanglement witness of the activated state')
    witness.add_argument('--p', type=float, help='Photon-number ratio (default: 0.5)')
    witness.add_argument('--cutoff', type=int, help='Fock cutoff per mode')
    witness.add_argument('--scan-p', dest='scan_p', type=_range, help='Scan p over start:stop:step')

    oracle = subparsers.add_parser('oracle', parents=[common], argument_default=argparse.SUPPRESS,
                                   help='Deterministic P_Omega surface for uniform randomization')
    _source_arguments(oracle)
    oracle.add_argument('--w', type=float, help='Width parameter')
    oracle.add_argument('--grid', type=_grid, help='Radial grid start:stop:step')

    return parser.parse_args(argv)


RUNTIME_OPTIONS = ("out", "threads", "verbose", "config")


def build_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig from parsed arguments, starting from an embedded configuration when --config is given."""
    given = {k: v for k, v in vars(args).items() if k not in RUNTIME_OPTIONS and v is not None}
    base: Dict[str, Any] = {}
    if getattr(args, "config", None):
        base = read_embedded_config(args.config)
        if given.get("command") and given["command"] != base.get("command"):
            raise ValidationError(f"--config holds a {base.get('command')!r} run, not {given['command']!r}")
    elif not given.get("command"):
        raise ValidationError(f"A command is required: one of {', '.join(COMMANDS)}")
    if given.get("command") == "oracle" and "noise" not in given and "noise" not in base:
        given["noise"] = "uniform"
    base.update(given)
    return RunConfig.model_validate(base)


def _dataset(config: RunConfig):
    if not config.data:
        raise ValidationError(f"{config.command} needs --data")
    return read_dataset(config.data)


def cmd_simulate(config: RunConfig, out: Path, threads: Optional[int]) -> Path:
    noise = config.noise_model()
    if config.r2 is not None:
        spec = config.squeezing()
        source = AsymmetricSource(r1=spec.r, r2=config.r2, relative_phase=config.relative_phase, eta=config.eta)
        ds = sample_asymmetric(source, noise, config.n, seed=config.seed, threads=threads)
    else:
        ds = sample_dataset(config.squeezing(), noise, config.n, seed=config.seed, threads=threads)
    path = write_dataset(out / "dataset.pqds", ds, config.embedded())
    print(f"Records: {len(ds)}")
    print(f"Var x_A = {ds.x_a.var():.4f}, Var x_B = {ds.x_b.var():.4f} (vacuum = 1)")
    return path


def cmd_tomo(config: RunConfig, out: Path, threads: Optional[int]) -> Path:
    ds = _dataset(config)
    est = reconstruct_dm(bin_phases(ds, config.bins), config.cutoff, config.batches, threads=threads)
    sigma_re, sigma_im = est.sigma_re, est.sigma_im
    payload: Dict[str, Any] = {"estimate": json.loads(est.to_json())}
    reference = None
    if config.mc_reps:
        if not isinstance(ds.spec, SqueezingSpec):
            raise ValidationError("Monte Carlo errors need a dataset simulated from a two-mode squeezing spec")
        reference = monte_carlo_errors(ds.spec, ds.noise, len(ds), config.mc_reps, config.cutoff,
                                       seed=config.seed, n_bins=config.bins, threads=threads)
        sigma_re, sigma_im = reference.sigma_re, reference.sigma_im
        payload["monte_carlo"] = {
            "reps": config.mc_reps,
            "coherence_mean": reference.coherence_mean,
            "coherence_std": reference.coherence_std,
            "sigma_re": sigma_re.reshape(-1).tolist(),
            "sigma_im": sigma_im.reshape(-1).tolist(),
        }
    coherence, sigma_c = coherence_with_errors(est, sigma_re, sigma_im, seed=config.seed)
    payload["coherence"] = coherence
    payload["sigma_coherence"] = sigma_c
    if config.psd:
        payload["estimate_psd"] = json.loads(project_psd(est).to_json())
    path = write_json(out / "density_matrix", payload, config.embedded())

    histogram = offdiagonal_histogram(est, sigma_re, sigma_im, reference)
    write_table(out / "histogram", ["bin_lo", "bin_hi", "count_exp", "count_mc"], histogram.rows(),
                config.embedded(), config.format)
    print(f"Coherence C = {coherence:.4f} +- {sigma_c:.4f}")
    print(f"Off-diagonal KS p-value: {histogram.ks_pvalue:.3f}")
    return path


def cmd_pomega(config: RunConfig, out: Path, threads: Optional[int]) -> Path:
    ds = _dataset(config)
    axis = grid_axis(*config.grid)
    table = build_pattern_table(config.w)
    stats = ensemble_stats(ds, axis, axis, config.w, table, config.ensembles, threads)
    report = significance(stats)
    normalization = normalization_check(stats)
    columns = ["a", "b", "P", "sigma_N", "z"]
    rows = stats.rows()
    if config.oracle:
        if not isinstance(ds.spec, SqueezingSpec):
            raise ValidationError("The oracle needs a dataset simulated from a two-mode squeezing spec")
        reference = pomega_oracle(ds.spec, ds.noise, axis, axis, config.w)
        columns.append("oracle")
        rows = [row + (float(o),) for row, o in zip(rows, reference.p.ravel())]
    write_table(out / "grid", columns, rows, config.embedded(), config.format)
    summary = report.summary()
    summary.update({"normalization": normalization, "n_total": stats.metadata["n_total"],
                    "n_ensembles": stats.metadata["n_ensembles"], "dropped": stats.metadata["dropped"]})
    path = write_json(out / "significance", summary, config.embedded())
    i, j = stats.index_of(report.a_star, report.b_star)
    print(f"Sigma = {report.significance:.2f} at (a, b) = ({report.a_star}, {report.b_star}), "
          f"P = {stats.p[i, j]:.4e} +- {stats.sigma[i, j]:.1e}")
    print(f"Normalization: {normalization:.4f}")
    return path


def cmd_scan_width(config: RunConfig, out: Path, threads: Optional[int]) -> Path:
    ds = _dataset(config)
    axis = grid_axis(*config.grid)
    widths = config.w_list or _range("1.0:1.8:0.1")
    result = width_scan(ds, axis, axis, widths, n_ensembles=config.ensembles, threads=threads)
    path = write_table(out / "scan", ["w", "Sigma", "minP", "a_star", "b_star"], result.rows(),
                       config.embedded(), config.format)
    best = result.best()
    if best is not None:
        print(f"Best width w = {best.w} with Sigma = {best.significance:.2f}")
    for entry in result.entries:
        if entry.error:
            logger.warning(f"w={entry.w} failed: {entry.error}")
    return path


def cmd_witness(config: RunConfig, out: Path, threads: Optional[int]) -> Path:
    if config.scan_p:
        reports = witness_scan(config.scan_p, config.cutoff)
        columns = ["p", "cutoff", "witness_numeric", "witness_analytic", "pt_min_eigenvalue"]
        rows = [tuple(r.model_dump()[c] for c in columns) for r in reports]
        best = min(reports, key=lambda r: r.witness_numeric)
        print(f"Strongest violation {best.witness_numeric:.6f} at p = {best.p}")
        return write_table(out / "witness_scan", columns, rows, config.embedded(), config.format)
    report = witness_report(config.p, config.cutoff)
    print(f"Witness: numeric {report.witness_numeric:.12f}, analytic {report.witness_analytic:.12f}")
    print(f"Partial-transpose minimum eigenvalue: {report.pt_min_eigenvalue:.6e}")
    return write_json(out / "witness", report.model_dump(), config.embedded())


def cmd_oracle(config: RunConfig, out: Path, threads: Optional[int]) -> Path:
    axis = grid_axis(*config.grid)
    surface = pomega_oracle(config.squeezing(), config.noise_model(), axis, axis, config.w)
    i, j = np.unravel_index(int(np.argmin(surface.p)), surface.p.shape)
    print(f"Oracle minimum {surface.p[i, j]:.4e} at (a, b) = ({surface.a[i]}, {surface.b[j]})")
    return write_table(out / "oracle", ["a", "b", "P"], surface.rows(), config.embedded(), config.format)


HANDLERS = {
    "simulate": cmd_simulate,
    "tomo": cmd_tomo,
    "pomega": cmd_pomega,
    "scan-width": cmd_scan_width,
    "witness": cmd_witness,
    "oracle": cmd_oracle,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_arguments(argv)
    verbose = getattr(args, "verbose", False)
    configure_logging(verbose)

    try:
        config = build_config(args)
        out = Path(getattr(args, "out", None) or ".")
        out.mkdir(parents=True, exist_ok=True)
        logger.info(f"Running {config.command} with seed {config.seed}")
        path = HANDLERS[config.command](config, out, getattr(args, "threads", None))
        logger.info(f"Wrote {path}")
    except KeyboardInterrupt:
        logger.info("Interrupted by user.")
        return 130
    except PhaseCorrError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=verbose)
        return e.exit_code
    except PydanticValidationError as e:
        logger.error(f"Invalid parameters: {e}", exc_info=verbose)
        return 2
    except OSError as e:
        logger.error(f"I/O error: {e}", exc_info=verbose)
        return 3
    except ValueError as e:
        logger.error(f"Invalid value: {e}", exc_info=verbose)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
