"""Audits of whether elicited probabilities are the beliefs behind an agent's choices."""
from .agents import AgentSpec, run_episode
from .audits import (ci_test, lie_oracle_triples, lie_test, monotone_pairwise_test,
                     predictive_sufficiency_test, prompt_consistency)
from .bayesnet import BayesNet, eliminate, layered_network
from .core import ActionLabel, Dataset, DecisionRecord, load_records, dump_records, validate_dataset
from .runner import AuditConfig, run_audit

__version__ = "0.1.0"
