"""
Command-line front end.

Subcommands: ingest, fit-additive, fit-mixture, allocate, simulate, report, pipeline.
Exit codes: 0 success, 2 usage or configuration error, 3 estimation failure.
The output directory defaults to ``$TEAMPROD_OUTPUT_DIR`` (or ``teamprod-out``) and
every run writes ``manifest.json`` with the seed, a hash of the resolved settings and
library versions.
"""
import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .additive import EstimationError, fit_additive
from .allocation import AllocationError, AllocationProblem, allocation_matrix, nearest_even, solve_allocation
from .hypergraph import (Hypergraph, HypergraphError, filter_min_productions, load_teams,
                         net_year_effects)
from .identification import IdentificationError
from .mixture import (MixtureConfig, MixtureError, MixtureModel, fit_mixture, type_proxies,
                      ProxyError, FamilyError)
from .report import dumps, emit_bundle, matrix_long_csv, canonical
from .simulate import SimulationError, get_design, run_monte_carlo, MixtureEstimator

OUTPUT_ENV = 'TEAMPROD_OUTPUT_DIR'


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _versions():
    import scipy
    return {'teamprod': __version__, 'numpy': np.__version__, 'scipy': scipy.__version__,
            'python': platform.python_version()}


def _settings_hash(settings):
    text = json.dumps(canonical(settings), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _out_dir(args):
    d = getattr(args, 'out', None) or os.environ.get(OUTPUT_ENV) or 'teamprod-out'
    return Path(d)


def _manifest_meta(command, settings):
    return {'command': command, 'seed': settings.get('seed'), 'config_hash': _settings_hash(settings),
            'settings': settings, 'versions': _versions()}


def _load(path, n_max=3):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f'input file {path} does not exist')
    if p.suffix == '.json':
        return Hypergraph.from_json(p.read_text())
    return load_teams(p, n_max=n_max)


def _prepare(settings):
    h = _load(settings['input'], settings.get('n_max', 3))
    if settings.get('reference_year') is not None:
        h = net_year_effects(h, int(settings['reference_year']), settings.get('netting', 'multiplicative'))
    m = settings.get('min_productions')
    if m:
        h = filter_min_productions(h, int(m))
    return h


def _write_manifest_only(out, command, settings, files):
    out.mkdir(parents=True, exist_ok=True)
    man = {'files': files, 'meta': _manifest_meta(command, settings)}
    (out / 'manifest.json').write_text(dumps(man))


# ---------------------------------------------------------------- subcommands

def cmd_ingest(args, settings):
    h = _prepare(settings)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / 'hypergraph.json').write_text(h.to_json())
    emit_bundle(out, h=h, meta=dict(_manifest_meta('ingest', settings), n_dropped=h.n_dropped))
    print(f'{h.N} workers, {h.J} teams ({h.n_dropped} oversized teams dropped) -> {out}')


def cmd_fit_additive(args, settings):
    h = _prepare(settings)
    fit, dec = fit_additive(h, settings['spec'], hutchinson_draws=settings['hutchinson_draws'],
                            seed=settings['seed'])
    out = _out_dir(args)
    emit_bundle(out, additive=(fit, dec), meta=_manifest_meta('fit-additive', settings))
    print(dec.to_json())


def _mixture_settings(settings):
    return MixtureConfig(restarts=settings['restarts'], tol=settings['tol'], seed=settings['seed'],
                         max_iter=settings['max_iter'])


def cmd_fit_mixture(args, settings):
    h = _prepare(settings)
    model, state = fit_mixture(h, settings['k'], settings['family'], settings['variant'],
                               _mixture_settings(settings))
    out = _out_dir(args)
    emit_bundle(out, h=h.restrict_sizes({1, 2}), mixtures={settings['k']: (model, state)},
                meta=_manifest_meta('fit-mixture', settings))
    print(f'K={model.K} elbo={state.elbo:.6g} converged={state.converged} -> {out}')


def _read_posteriors(path, K):
    with open(path, newline='') as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ConfigError(f'{path} has no rows')
    try:
        q = np.array([[float(r[f'q{k + 1}']) for k in range(K)] for r in rows])
        n1 = np.array([float(r.get('n_solo', 0) or 0) for r in rows])
        n2 = np.array([float(r.get('n_pair', 0) or 0) for r in rows])
    except (KeyError, ValueError) as e:
        raise ConfigError(f'{path}: cannot read posterior columns ({e})') from None
    return q, n1, n2


def cmd_allocate(args, settings):
    rec = json.loads(Path(settings['model']).read_text())
    rec = rec.get('model', rec)
    model = MixtureModel.from_dict(rec)
    q, n1, n2 = _read_posteriors(settings['posteriors'], model.K)
    mu1, mu2 = model.implied_means()
    p = AllocationProblem(mu1, mu2, np.floor(q.T @ n1 + 0.5), nearest_even(q.T @ n2))
    sol = solve_allocation(p)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    text = matrix_long_csv(allocation_matrix(sol))
    (out / f'matrix_allocation_K{model.K}.csv').write_text(text)
    diag = dict(sol.to_dict(), T1=p.T1, T2=p.T2, budgets='q-weighted counts; pair slots nearest even, ties up')
    (out / f'allocation_K{model.K}.json').write_text(dumps(diag))
    for name in (f'matrix_allocation_K{model.K}.csv', f'allocation_K{model.K}.json'):
        t = (out / name).read_text()
        files[name] = {'sha256': hashlib.sha256(t.encode()).hexdigest(), 'bytes': len(t.encode())}
    _write_manifest_only(out, 'allocate', settings, files)
    print(dumps(diag))


def cmd_simulate(args, settings):
    try:
        design = get_design(settings['design'], settings['reps'], settings['seed'])
    except SimulationError as e:
        raise ConfigError(str(e)) from None
    est = MixtureEstimator(design.truth.K, design.truth.family, restarts=settings['restarts'],
                           tol=settings['tol'])
    rep = run_monte_carlo(design, est, n_jobs=settings['threads'])
    text = rep.to_csv()
    out = Path(settings['out_file']) if settings.get('out_file') else _out_dir(args) / 'montecarlo.csv'
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    files = {out.name: {'sha256': hashlib.sha256(text.encode()).hexdigest(), 'bytes': len(text.encode())}}
    _write_manifest_only(out.parent, 'simulate', settings, files)
    print(text, end='')


def cmd_report(args, settings):
    h = _prepare(settings)
    proxies = None
    try:
        proxies = type_proxies(h, settings['bins'], settings['min_solo'])
        proxies.matrices(h)
    except ProxyError as e:
        warnings.warn(f'type proxies skipped: {e}')
        proxies = None
    emit_bundle(_out_dir(args), h=h, proxies=proxies, meta=_manifest_meta('report', settings))
    print(f'report written to {_out_dir(args)}')


def cmd_pipeline(args, settings):
    h = _prepare(settings)
    out = _out_dir(args)
    additive = None
    if settings.get('additive', True):
        additive = fit_additive(h, settings['spec'], hutchinson_draws=settings['hutchinson_draws'],
                                seed=settings['seed'])
    mixtures, allocations = {}, {}
    from .allocation import budgets_from_fit
    for K in settings['k_list']:
        cfg = _mixture_settings(settings)
        model, state = fit_mixture(h, K, settings['family'], settings['variant'], cfg)
        mixtures[K] = (model, state)
        h12 = h.restrict_sizes({1, 2})
        if any(t.size == 2 for t in h12.teams):
            sol = solve_allocation(budgets_from_fit(model, state, h12))
            if sol.tau2.sum() > 0:
                allocations[K] = sol
    proxies = None
    try:
        proxies = type_proxies(h, settings['bins'], settings['min_solo'])
        proxies.matrices(h)
    except ProxyError:
        proxies = None
    h12 = h.restrict_sizes({1, 2}) if mixtures else h
    emit_bundle(out, h=h12 if mixtures else h, additive=additive, mixtures=mixtures,
                allocations=allocations, proxies=proxies, meta=_manifest_meta('pipeline', settings))
    if mixtures:
        # descriptives over every team size, not only the mixture sample
        from .report import descriptive_stats, table_csv
        (out / 'descriptives_all_sizes.csv').write_text(table_csv(descriptive_stats(h)))
    print(f'pipeline finished -> {out}')


# ---------------------------------------------------------------- argument handling

DEFAULTS = {
    'n_max': 3, 'min_productions': None, 'reference_year': None, 'netting': 'multiplicative',
    'spec': 'levels', 'hutchinson_draws': 1000, 'seed': 0,
    'k': 2, 'family': 'lognormal', 'variant': 'independent', 'restarts': 10, 'tol': 1e-3,
    'max_iter': 2000, 'bins': 4, 'min_solo': 5, 'threads': 1, 'reps': 100, 'design': 'panelA2',
}

CONFIG_KEYS = set(DEFAULTS) | {'input', 'out', 'k_list', 'additive', 'model', 'posteriors'}


def _read_config(path):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, 'rb') as f:
            cfg = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f'config file {path} not found') from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'config file {path}: {e}') from None
    cfg = {k.replace('-', '_'): v for k, v in cfg.items()}
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f'unknown config keys: {sorted(unknown)}')
    return cfg


def build_parser():
    p = _Parser(prog='teamprod', description='Worker contributions to team output.')
    p.add_argument('--version', action='version', version=__version__)
    sub = p.add_subparsers(dest='command', parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument('--config', help='TOML file with settings (command-line flags win)')
        sp.add_argument('--out', help=f'output directory (default ${OUTPUT_ENV} or ./teamprod-out)')
        sp.add_argument('--seed', type=int)
        sp.add_argument('--threads', type=int)
        if data:
            sp.add_argument('--input', help='team file (CSV) or hypergraph JSON')
            sp.add_argument('--n-max', type=int)
            sp.add_argument('--min-productions', type=int)
            sp.add_argument('--reference-year', type=int)
            sp.add_argument('--netting', choices=['multiplicative', 'poisson', 'poisson-with-age'])

    common(sub.add_parser('ingest', help='read, net and filter team data'))
    sp = sub.add_parser('fit-additive', help='additive fixed-effects model')
    common(sp)
    sp.add_argument('--spec', choices=['levels', 'logs', 'ranks'])
    sp.add_argument('--hutchinson-draws', type=int)

    def mixture_flags(sp):
        sp.add_argument('--k', type=int)
        sp.add_argument('--family', choices=['lognormal', 'negbin'])
        sp.add_argument('--variant', choices=['independent', 'correlated', 'joint'])
        sp.add_argument('--restarts', type=int)
        sp.add_argument('--tol', type=float)
        sp.add_argument('--max-iter', type=int)

    sp = sub.add_parser('fit-mixture', help='discrete-type model by variational EM')
    common(sp)
    mixture_flags(sp)
    sp = sub.add_parser('allocate', help='output-maximising allocation from a fitted model')
    common(sp, data=False)
    sp.add_argument('--model', help='mixture JSON written by fit-mixture')
    sp.add_argument('--posteriors', help='posteriors CSV written by fit-mixture')
    sp = sub.add_parser('simulate', help='Monte Carlo run of a named design')
    common(sp, data=False)
    sp.add_argument('--design')
    sp.add_argument('--reps', type=int)
    sp.add_argument('--restarts', type=int)
    sp.add_argument('--tol', type=float)
    sp = sub.add_parser('report', help='descriptive tables and type-proxy matrices')
    common(sp)
    sp.add_argument('--bins', type=int)
    sp.add_argument('--min-solo', type=int)
    sp = sub.add_parser('pipeline', help='full analysis from one config')
    common(sp)
    sp.add_argument('--spec', choices=['levels', 'logs', 'ranks'])
    sp.add_argument('--hutchinson-draws', type=int)
    mixture_flags(sp)
    return p


def resolve(args):
    settings = dict(DEFAULTS)
    if getattr(args, 'config', None):
        settings.update(_read_config(args.config))
    for k, v in vars(args).items():
        if k in ('command', 'config') or v is None:
            continue
        settings[k] = v
    if args.command == 'simulate' and getattr(args, 'out', None) and args.out.endswith('.csv'):
        settings['out_file'] = args.out
        args.out = None
    if 'k_list' not in settings:
        settings['k_list'] = [settings['k']]
    if args.command in ('ingest', 'fit-additive', 'fit-mixture', 'report', 'pipeline') and not settings.get('input'):
        raise ConfigError('--input (or input in the config) is required')
    if args.command == 'allocate' and not (settings.get('model') and settings.get('posteriors')):
        raise ConfigError('allocate needs --model and --posteriors')
    if settings['threads'] < 1:
        raise ConfigError('--threads must be positive')
    settings.pop('out', None)
    return settings


COMMANDS = {'ingest': cmd_ingest, 'fit-additive': cmd_fit_additive, 'fit-mixture': cmd_fit_mixture,
            'allocate': cmd_allocate, 'simulate': cmd_simulate, 'report': cmd_report,
            'pipeline': cmd_pipeline}

ESTIMATION_ERRORS = (EstimationError, IdentificationError, MixtureError, AllocationError,
                     SimulationError, FamilyError, np.linalg.LinAlgError)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return 2
        settings = resolve(args)
        if settings['threads']:
            for var in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
                os.environ.setdefault(var, str(settings['threads']))
        COMMANDS[args.command](args, settings)
    except ConfigError as e:
        print(f'teamprod: configuration error: {e}', file=sys.stderr)
        return 2
    except (HypergraphError, ) as e:
        print(f'teamprod: [ingest] {e}', file=sys.stderr)
        return 2
    except ESTIMATION_ERRORS as e:
        stage = getattr(e, 'stage', None)
        msg = str(e) if stage else f'[{args.command}] {e}'
        print(f'teamprod: estimation failed: {msg}', file=sys.stderr)
        return 3
    except SystemExit as e:
        return int(e.code or 0)
    return 0


if __name__ == '__main__':
    sys.exit(main())
