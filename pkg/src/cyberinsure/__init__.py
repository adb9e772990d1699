"""Self-defense investment and insurance contract models for networked users."""

from .model import (Contract, DomainError, InvestmentCostFunction, MarketParams, NumericalFailure,
                    PiecewiseInsuranceUtility, RiskFamily, RiskFunction, UtilityFamily,
                    UtilityFunction, expected_final_wealth, expected_wealth, joint_loss_prob,
                    risk_prob)
from .invest import (Boundary, ComparisonReport, EquilibriumSet, InvestmentSolution,
                     compare_cases, solve_case1, solve_case2, solve_case3, solve_partialA,
                     solve_partialB, solve_uninsured_game)
from .contracts import (ContractSolution, Objective, evaluate_contract, numeric_contract_argmax,
                        profit_contract, welfare_contract, welfare_gap)
from .asym import (AsymSolution, RiskClassPair, blended_risk, fair_contracts,
                   solve_no_info, solve_post_contract_info, solve_pre_contract_info,
                   user_best_investment, value_of_information_post)
from .oracle import McReport, foc_residual, grid_argmax, monte_carlo_wealth

__version__ = "0.1.0"
