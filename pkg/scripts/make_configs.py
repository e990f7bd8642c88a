"""Regenerate the example network and agent files under configs/."""
from pathlib import Path

from beliefaudit import agents
from beliefaudit.bayesnet import layered_network

OUT = Path(__file__).resolve().parent.parent / "configs"


def main() -> None:
    OUT.mkdir(exist_ok=True)
    layered_network(seed=0).save(OUT / "net_layered.json")
    agents.truthful_logit().save(OUT / "agent_truthful.json")
    agents.constant_reporter().save(OUT / "agent_constant.json")
    agents.theta_leaky().save(OUT / "agent_theta_leaky.json")
    agents.rank_flipper().save(OUT / "agent_rank_flip.json")
    print(f"wrote configs to {OUT}")


if __name__ == "__main__":
    main()
