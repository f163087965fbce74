"""Command line entry point ``treeminer``.

Exit codes: 0 ok, 2 bound violated, 3 invariant violated, 4 bad input.
"""

from __future__ import annotations

import csv
import json
import math
import sys

import click

from . import acte, cte, game, harness, ltt
from .oracle import Checker
from .potential import InvariantViolation, PotentialParams
from .tree import TreeError, load_tree

OK, BOUND, INVARIANT, INPUT = 0, 2, 3, 4

seed_option = click.option("--seed", type=int, envvar="TREEMINER_SEED", default=0, show_default=True,
                           help="Random seed (default from TREEMINER_SEED).")


def _emit(obj) -> None:
    click.echo(json.dumps(obj, sort_keys=True))


class InputError(click.ClickException):
    exit_code = INPUT


def _open_out(path):
    return open(path, "w") if path else None


@click.group()
def cli():
    """Tree-mining game, collective exploration and layered traversal."""


# ---------------------------------------------------------------- simulate
@cli.command()
@click.option("--adversary", default="random", show_default=True,
              help="random, deepest or script:<file>.")
@click.option("--mode", type=click.Choice(["ctm", "tm"]), default="ctm", show_default=True)
@click.option("--k", type=int, default=4, show_default=True)
@click.option("--steps", type=int, default=500, show_default=True)
@seed_option
@click.option("--check", is_flag=True, help="Verify the master inequality and bounds after every event.")
@click.option("--trace", type=click.Path(dir_okay=False), help="Write the JSONL event log here.")
def simulate(adversary, mode, k, steps, seed, check, trace):
    """Play the mining game against an adversary."""
    if k < 2:
        raise InputError("k must be at least 2")
    script = None
    if adversary.startswith("script:"):
        try:
            with open(adversary[7:]) as fh:
                script = game.parse_script(fh.read())
        except (OSError, ValueError) as e:
            raise InputError(str(e))
    elif adversary not in ("random", "deepest"):
        raise InputError(f"unknown adversary {adversary!r}")
    out = _open_out(trace)
    try:
        if mode == "tm":
            if script is not None and any(not isinstance(m, tuple) for m in script):
                raise InputError("discrete scripts take T lines only")
            adv = {"random": lambda: game.RandomTmAdversary(seed),
                   "deepest": game.DeepestTmAdversary}.get(adversary, lambda: game.ScriptAdversary(script))()
            st = game.TmState.initial(k)
            rep = game.run_tm(st, adv, steps, out)
            _emit(rep)
            if rep["error"]:
                click.echo(f"illegal move: {rep['error']}", err=True)
                return INPUT
            return INVARIANT if rep["violations"] else OK
        if script is not None and any(isinstance(m, tuple) for m in script):
            raise InputError("T lines belong to --mode tm")
        adv = {"random": lambda: game.RandomAdversary(seed),
               "deepest": game.DeepestAdversary}.get(adversary, lambda: game.ScriptAdversary(script))()
        st = game.GameState.initial(k, snapshots=bool(trace))
        checker = Checker(st.params, out) if check else None
        try:
            st, rep = game.run_adversary(st, adv, steps, checker, out)
        except InvariantViolation as e:
            click.echo(f"invariant violated: {e}", err=True)
            return INVARIANT
    finally:
        if out:
            out.close()
    _emit({"events": rep.events, "cost": rep.cost, "bound": rep.bound, "bound_ok": rep.bound_ok,
           "check_failures": rep.check_failures, "error": rep.error})
    if rep.error:
        click.echo(f"illegal move: {rep.error}", err=True)
        return INPUT
    if not rep.bound_ok:
        return BOUND
    return INVARIANT if rep.check_failures else OK


# ---------------------------------------------------------------- explore
def _tree_from(tree, family, n, depth, seed):
    if tree:
        try:
            return load_tree(tree)
        except (OSError, TreeError, ValueError) as e:
            raise InputError(str(e))
    if not family:
        raise InputError("give --tree or --family")
    try:
        return harness.gen_tree(family, n, depth, seed)
    except ValueError as e:
        raise InputError(str(e))


@cli.command()
@click.option("--mode", type=click.Choice(["acte", "cte"]), default="acte", show_default=True)
@click.option("--tree", type=click.Path(dir_okay=False), help="Tree file (`tree n root` then `id parent len`).")
@click.option("--family", type=click.Choice(harness.FAMILIES), help="Generate the tree instead.")
@click.option("--n", type=int, default=100, show_default=True)
@click.option("--depth", "depth", type=int, default=20, show_default=True)
@click.option("--k", type=int, default=4, show_default=True)
@click.option("--scheduler", type=click.Choice(sorted(acte.SCHEDULERS)), default="roundrobin", show_default=True)
@seed_option
@click.option("--sqrt-k", is_flag=True, help="CTE with floor(sqrt k) active robots.")
@click.option("--trace", type=click.Path(dir_okay=False), help="Write the robot trace as JSONL.")
def explore(mode, tree, family, n, depth, k, scheduler, seed, sqrt_k, trace):
    """Explore a tree with k robots; prints one CSV row."""
    if k < 1:
        raise InputError("k must be positive")
    t = _tree_from(tree, family, n, depth, seed)
    if any(abs(d - 1.0) > 1e-12 for d in t.length.values()):
        raise InputError("exploration needs unit edge lengths")
    w = csv.writer(sys.stdout, lineterminator="\n")
    if mode == "cte":
        active = max(1, math.isqrt(k)) if sqrt_k else k
        res = acte.run_acte(t, active, "roundrobin", record=bool(trace), stop_when_explored=True)
        c = cte.cte_from_acte(res, k)
        c.bound = cte.cte_bound(res.n, active, res.D)
        ratio = c.runtime / (res.n / k + res.D) if res.n > 1 else 0.0
        w.writerow(["n", "D", "k", "runtime", "bound", "ratio"])
        w.writerow([res.n, res.D, k, c.runtime, c.bound, f"{ratio:.6f}"])
        bad_bound = not c.ok
    else:
        res = acte.run_acte(t, k, scheduler, seed=seed, record=bool(trace))
        w.writerow(["n", "D", "k", "scheduler", "moves", "bound", "margin", "tm_cost", "ctm_cost"])
        w.writerow([res.n, res.D, k, scheduler, res.moves, res.bound, res.bound - res.moves,
                    res.tm_cost, res.ctm_cost])
        bad_bound = res.moves > res.bound
    if trace:
        with open(trace, "w") as fh:
            for ev in res.trace:
                fh.write(json.dumps(ev) + "\n")
    if bad_bound:
        return BOUND
    return INVARIANT if res.violations else OK


# ---------------------------------------------------------------- traverse
@cli.command()
@click.option("--instance", type=click.Path(dir_okay=False), help="Layered tree file.")
@click.option("--model", type=click.Choice(["unit", "average"]), help="Generate the instance instead.")
@click.option("--w", type=int, default=4, show_default=True)
@click.option("--N", "N", type=int, default=20, show_default=True)
@click.option("--k", "kk", default="auto", show_default=True, help="Robots, or auto for max(2, floor(sqrt w)).")
@click.option("--samples", type=int, default=0, show_default=True, help="Monte Carlo rounded searchers.")
@seed_option
def traverse(instance, model, w, N, kk, samples, seed):
    """Layered traversal: fractional cost, bound and optional rounding."""
    if instance:
        try:
            lt = ltt.load_layered(instance)
        except (OSError, TreeError) as e:
            raise InputError(str(e))
    elif model:
        gen = ltt.gen_unit_layered if model == "unit" else ltt.gen_average_case
        try:
            lt = gen(w, N, seed)
        except ValueError as e:
            raise InputError(str(e))
    else:
        raise InputError("give --instance or --model")
    if kk == "auto":
        k = ltt.tune_k(lt)
    else:
        try:
            k = int(kk)
        except ValueError:
            raise InputError(f"--k must be an integer or auto, got {kk!r}")
        if k < 2:
            raise InputError("k must be at least 2")
    res = ltt.fractional_traverse(lt, k)
    out = {"w": res.w, "N": res.N, "L": res.L, "D": res.D, "k": k, "cost": res.cost,
           "moves_over_k": res.moves_over_k, "bound": res.bound, "dfs": ltt.layered_dfs(lt),
           "violations": len(res.violations)}
    if samples > 0:
        out["monte_carlo"] = ltt.monte_carlo(res, samples, seed)
    _emit(out)
    if res.cost > res.bound or res.moves_over_k > res.bound:
        return BOUND
    return INVARIANT if res.violations else OK


# ---------------------------------------------------------------- bench
def _ints(s):
    try:
        return tuple(int(v) for v in s.split(",") if v)
    except ValueError:
        raise InputError(f"expected comma separated integers, got {s!r}")


@cli.command()
@click.option("--families", default=",".join(harness.FAMILIES), show_default=True)
@click.option("--ns", default="100,1000,10000", show_default=True)
@click.option("--Ds", "ds", default="5,20,100", show_default=True)
@click.option("--ks", default="2,4,8", show_default=True)
@click.option("--seeds", type=int, default=10, show_default=True)
@click.option("--schedulers", default="roundrobin,random,lopsided", show_default=True)
@seed_option
@click.option("--out", type=click.Path(dir_okay=False), help="CSV file (default stdout).")
@click.option("--timing", is_flag=True, help="Fill the wall-time column (breaks byte identity).")
def bench(families, ns, ds, ks, seeds, schedulers, seed, out, timing):
    """Sweep the exploration suite and emit CSV with bounds and margins."""
    fams = tuple(f for f in families.split(",") if f)
    for f in fams:
        if f not in harness.FAMILIES:
            raise InputError(f"unknown family {f!r}")
    scheds = tuple(s for s in schedulers.split(",") if s)
    for s in scheds:
        if s not in acte.SCHEDULERS:
            raise InputError(f"unknown scheduler {s!r}")
    cfg = harness.SuiteConfig(fams, _ints(ns), _ints(ds), _ints(ks), seeds, scheds, seed)
    fh = open(out, "w") if out else sys.stdout
    try:
        bad = harness.write_csv(harness.bench_rows(cfg, timing), fh)
    finally:
        if out:
            fh.close()
    return BOUND if bad else OK


# ---------------------------------------------------------------- check
@cli.command()
@click.argument("trace", type=click.Path(dir_okay=False))
def check(trace):
    """Re-verify every snapshot of a `simulate --trace` log."""
    try:
        with open(trace) as fh:
            rep = harness.check_all(fh)
    except (OSError, ValueError) as e:
        raise InputError(str(e))
    _emit({"events": rep.events, "ok": rep.ok, "first_violation": rep.first_violation, "reason": rep.reason})
    return OK if rep.ok else INVARIANT


# ---------------------------------------------------------------- gen
@cli.group()
def gen():
    """Write generated instances to stdout."""


@gen.command("tree")
@click.option("--family", type=click.Choice(harness.FAMILIES), required=True)
@click.option("--n", type=int, required=True)
@click.option("--depth", "depth", type=int, required=True)
@seed_option
def gen_tree_cmd(family, n, depth, seed):
    try:
        t = harness.gen_tree(family, n, depth, seed)
    except ValueError as e:
        raise InputError(str(e))
    click.echo(t.dumps(), nl=False)
    return OK


@gen.command("layered")
@click.option("--model", type=click.Choice(["unit", "average"]), default="average", show_default=True)
@click.option("--w", type=int, required=True)
@click.option("--N", "N", type=int, required=True)
@seed_option
def gen_layered_cmd(model, w, N, seed):
    gen_ = ltt.gen_unit_layered if model == "unit" else ltt.gen_average_case
    try:
        lt = gen_(w, N, seed)
    except ValueError as e:
        raise InputError(str(e))
    click.echo(lt.dumps(), nl=False)
    return OK


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="treeminer", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return INPUT
    return rv or OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
