"""Tree-mining games, collective tree exploration and layered tree traversal."""

from .tree import RootedTree, DiscreteConfig, FractionalConfig, ot_cost, ot_coupling, ot_plan
from .potential import PotentialParams, potential, tension, settle, fork_delta
from .oracle import solve_fractional, Checker
from .game import GameState, TmState, ctm_apply, tm_step, run_adversary
from .acte import run_acte, acte_bound
from .cte import run_cte, cte_bound, dfs_baseline
from .ltt import LayeredTree, fractional_traverse, rounded_traverse, tune_k
from .harness import gen_tree

__version__ = "0.1.0"
