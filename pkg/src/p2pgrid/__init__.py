"""Microgrid retail clearing with peer-to-peer energy trading between end-users."""
from .clearing import centralized_solve, dg_update, dual_update, mcs_update, run_tatonnement
from .costs import TABLE_2, EmissionRow, EmissionTable, QuadraticCost, best_response, cost_eval, \
    cost_marginal, erb_rate, erb_value
from .engine import SimResult, fairness_index, par, run_day, schedule_storage, settlement, soc_step
from .p2p import Trade, alpha_coeff, price_update, quantity_update, run_auction
from .scenario import AgentSpec, McsSpec, Scenario, SolverParams, StorageSpec, \
    build_bipartite_graph, default_paper_scenario, load_scenario, read_scenario, validate

__version__ = "0.1.0"
