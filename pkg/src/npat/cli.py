"""Command-line surface: forward, reconstruct, vc, doi, audit."""
from __future__ import annotations

import argparse
import logging
import sys
import zlib
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import APP_NAME, APP_VERSION, CFL_MAX, EXIT_CONFIG, EXIT_OK
from .errors import GeometryMismatch, NpatError
from .exporter import (
    ReportExporter,
    read_manifest,
    write_audit_csv,
    write_log_csv,
    write_manifest,
    write_vc_csv,
)
from .fieldfile import FieldFile, render_pgm
from .geometry import domain_of_influence, travel_times
from .operators import (
    StatePair,
    Traces,
    balance_orders,
    energy_audit,
    energy_norm,
    lambda_op,
    reflect_pat_trace,
)
from .phantoms import pat_even_data
from .rays import check_visibility, visibility_heatmap
from .reconstruct import reconstruct_neumann_series, reconstruct_nudging
from .runconfig import RunConfig, RunSetup
from .wavesolver import BoundaryMode, Direction, Interval, solve

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the config code so exit 2 always means a numerical failure."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


class Run:
    """Output directory bookkeeping shared by the commands."""

    def __init__(self, config: RunConfig, out: Optional[Path]):
        self.config = config
        self.out = Path(out) if out is not None else config.output.directory
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: Dict[str, str] = {}
        self.ranges: Dict[str, List[float]] = {}

    def wants(self, fmt: str) -> bool:
        return fmt in self.config.output.formats

    def _crc(self, path: Path) -> None:
        self.files[path.name] = f"{zlib.crc32(path.read_bytes()):08x}"

    def field(self, name: str, ff: FieldFile, always: bool = False) -> Path:
        path = self.out / f"{name}.npf"
        if always or self.wants("field"):
            ff.write(path)
            self._crc(path)
        return path

    def pgm(self, name: str, values: np.ndarray) -> None:
        if self.wants("pgm"):
            path = self.out / f"{name}.pgm"
            self.ranges[name] = list(render_pgm(values, path))
            self._crc(path)

    def csv(self, path: Path) -> None:
        self._crc(path)

    def manifest(self, command: str, entries: dict) -> Path:
        doc = dict(entries)
        doc.update(command=command, files=self.files, pgm_ranges=self.ranges,
                   config_dir=str(self.config.base_dir.resolve()))
        return write_manifest(self.out / "manifest.json", self.config.text, doc)


def _solver_constants(setup: RunSetup) -> dict:
    cfg = setup.prop.config(Direction.FORWARD, BoundaryMode.NEUMANN, Interval.PLUS)
    g = setup.geometry
    return {
        "dt": cfg.dt,
        "n_steps": cfg.n_steps,
        "cfl": cfg.cfl,
        "cfl_requested": cfg.cfl_requested,
        "cfl_max": CFL_MAX,
        "T": setup.prop.T,
        "h": g.grid.h,
        "cmax": g.speed.cmax,
        "cmin": g.speed.cmin,
        "geometry": g.signature(),
        "region_size": setup.region.size,
        "causal_clearance": None if setup.clearance == float("inf") else setup.clearance,
    }


# ---- commands

def cmd_forward(config: RunConfig, args) -> int:
    setup = config.prepare(args.threads)
    run = Run(config, args.out)
    V0, prop = setup.phantom, setup.prop
    if config.phantom.pat:
        pat_even_data(V0)
        _, plus = solve(V0, prop.config(Direction.FORWARD, BoundaryMode.NEUMANN, Interval.PLUS),
                        setup.geometry)
        traces = Traces(plus, reflect_pat_trace(plus))
    else:
        traces = lambda_op(V0, prop)

    run.field("phantom_u0", FieldFile.field(V0.u0), always=True)
    run.field("phantom_u1", FieldFile.field(V0.u1), always=True)
    run.field("trace_plus", FieldFile.trace(traces.plus), always=True)
    run.field("trace_minus", FieldFile.trace(traces.minus), always=True)
    run.field("region", FieldFile.mask(setup.region.mask), always=True)
    run.pgm("phantom_u0", V0.u0)

    norm = energy_norm(V0)
    consts = _solver_constants(setup)
    consts.update(pat=config.phantom.pat, phantom_energy_norm=float(norm))
    run.manifest("forward", consts)
    if run.wants("pdf"):
        ReportExporter("Forward run", _flat(consts)).export_pdf(run.out / "report.pdf")
    log.info("forward: ||V0||* = %.6e, %d measurement node(s), %d step(s)", norm,
             traces.plus.values.shape[1], traces.plus.n_steps)
    return EXIT_OK


def _load_data(data_dir: Path, setup: RunSetup) -> Traces:
    manifest = read_manifest(data_dir / "manifest.json")
    recorded = manifest.get("geometry")
    current = setup.geometry.signature()
    if recorded != current:
        raise GeometryMismatch(f"data in {data_dir} was recorded on {recorded}, config builds {current}")
    if abs(manifest.get("dt", -1.0) - setup.prop.dt) > 1e-12 * setup.prop.dt:
        raise GeometryMismatch(f"data dt={manifest.get('dt')} differs from solver dt={setup.prop.dt}")
    plus = FieldFile.read(data_dir / "trace_plus.npf").to_trace()
    minus = FieldFile.read(data_dir / "trace_minus.npf").to_trace()
    return Traces(plus, minus)


def cmd_reconstruct(config: RunConfig, args) -> int:
    setup = config.prepare(args.threads)
    run = Run(config, args.out)
    data_dir = Path(args.data) if args.data else run.out
    data = _load_data(data_dir, setup)
    it = config.iteration
    truth = setup.phantom if it.use_truth else None
    stride = args.stride if args.stride is not None else it.stride

    def on_iterate(j: int, U: StatePair) -> None:
        if stride and j % stride == 0:
            run.field(f"iterate_{j:04d}_u0", FieldFile.field(U.u0))

    if it.method == "nudging":
        U, clog = reconstruct_nudging(data, setup.region, it.j_max, setup.prop, truth,
                                      stop_ratio=it.stop_ratio, on_iterate=on_iterate)
    else:
        U, clog = reconstruct_neumann_series(data, setup.region, it.j_max, setup.prop, truth,
                                             on_iterate=on_iterate)

    run.field("estimate_u0", FieldFile.field(U.u0), always=True)
    run.field("estimate_u1", FieldFile.field(U.u1), always=True)
    run.pgm("estimate_u0", U.u0)
    # log.csv carries wall time, so it stays out of the manifest checksums
    write_log_csv(run.out / "log.csv", clog)

    consts = _solver_constants(setup)
    consts.update(method=it.method, iterations=clog.iterations, rate=clog.rate, r2=clog.r2,
                  final_error=clog.records[-1].error, final_update=clog.records[-1].update)
    run.manifest("reconstruct", consts)
    if run.wants("pdf"):
        ReportExporter(f"Reconstruction ({it.method})", _flat(consts)).export_pdf(
            run.out / "report.pdf", clog)
    log.info("reconstruct: %d iteration(s), rate %s", clog.iterations,
             "n/a" if clog.rate is None else f"{clog.rate:.6f}")
    return EXIT_OK


def cmd_vc(config: RunConfig, args) -> int:
    setup = config.prepare(args.threads)
    run = Run(config, args.out)
    r = config.rays
    report = check_visibility(setup.region, config.time.T, r.n_dirs, setup.geometry, r.tangency,
                              args.threads)
    run.csv(write_vc_csv(run.out / "vc.csv", report))
    stride = args.stride if args.stride is not None else r.heatmap_stride
    heat = visibility_heatmap(config.time.T, r.n_dirs, setup.geometry, stride, r.tangency, args.threads)
    run.field("heatmap", FieldFile.field(heat), always=True)
    run.pgm("heatmap", heat)
    worst = report.worst_case()
    consts = _solver_constants(setup)
    consts.update(vc_pass=report.passed, vc_fraction=report.fraction, n_dirs=r.n_dirs,
                  tangency=r.tangency, min_cos_margin=report.min_cos_margin, outcomes=report.counts(),
                  worst_case=None if worst is None else
                  {"x": worst[0][0], "y": worst[0][1], "dir_index": worst[1], "outcome": worst[2].name.lower()})
    run.manifest("vc", consts)
    if run.wants("pdf"):
        ReportExporter("Visibility check", _flat(consts)).export_pdf(run.out / "report.pdf")
    print(f"pass={'true' if report.passed else 'false'} fraction={report.fraction:.6f}")
    return EXIT_OK


def cmd_doi(config: RunConfig, args) -> int:
    setup = config.prepare(args.threads)
    run = Run(config, args.out)
    times = travel_times(setup.geometry)
    doi = domain_of_influence(setup.geometry, config.time.T)
    run.field("travel_time", FieldFile.field(times), always=True)
    run.field("doi", FieldFile.mask(doi.mask), always=True)
    run.pgm("travel_time", times)
    inside = not (setup.region - doi).size
    consts = _solver_constants(setup)
    consts.update(doi_size=doi.size, region_inside_doi=inside, max_travel_time=float(times.max()))
    run.manifest("doi", consts)
    print(f"doi_nodes={doi.size} region_inside={'true' if inside else 'false'}")
    return EXIT_OK


def cmd_audit(config: RunConfig, args) -> int:
    resolutions = config.audit.resolutions or (config.geometry.h,)
    run = Run(config, args.out)
    audits = []
    for h in resolutions:
        setup = config.with_h(h).prepare(args.threads)
        audit = energy_audit(setup.phantom, setup.prop)
        audits.append(audit)
        run.csv(write_audit_csv(run.out / f"audit_h{h:g}.csv", audit.rows()))
    orders = balance_orders(audits)
    run.manifest("audit", {
        "resolutions": list(resolutions),
        "residuals": [a.final_residual for a in audits],
        "orders": orders,
    })
    for a in audits:
        print(f"h={a.h:g} residual={a.final_residual:.6e}")
    if orders:
        print("order=" + ",".join(f"{o:.3f}" for o in orders))
    return EXIT_OK


def _flat(consts: dict) -> dict:
    out = {}
    for key, value in consts.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                out[f"{key}.{sub}"] = v
        else:
            out[key] = value
    return out


COMMANDS = {
    "forward": cmd_forward,
    "reconstruct": cmd_reconstruct,
    "vc": cmd_vc,
    "doi": cmd_doi,
    "audit": cmd_audit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=APP_NAME, description="Back-and-forth nudging toolkit for 2D photoacoustic tomography.")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="INI run config or a manifest.json")
        p.add_argument("--out", type=Path, help="output directory (default: [output] directory)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--stride", type=int, default=None,
                       help="iterate stride (reconstruct) or heatmap stride (vc)")
        if name == "reconstruct":
            p.add_argument("--data", type=Path, help="directory of a forward run (default: --out)")
        verbosity = p.add_mutually_exclusive_group()
        verbosity.add_argument("-v", "--verbose", action="store_true")
        verbosity.add_argument("-q", "--quiet", action="store_true")
    return parser


def _setup_logging(args) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args)
    try:
        config = RunConfig.load(args.config)
        return COMMANDS[args.command](config, args)
    except NpatError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
