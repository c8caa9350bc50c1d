#!/usr/bin/env python3
"""Walk through the three-vertex toy instance and print every loss."""
import numpy as np

from cilo.fixtures import ex1
from cilo.geometry import lp_minimize
from cilo.losses import beta_bounds, cilo_loss, regret, slo_loss, spo_plus_loss, target_loss
from cilo.optimize import GDConfig, train_cilo
from cilo.smoothing import prox_pair


def main():
    fx = ex1()
    W, data = fx.W, fx.data
    b = beta_bounds(data, W)
    print(f"true cost {data.C[0]}  beta range [{b.beta_min:g}, {b.beta_max:g}]  budget {fx.beta:g}")
    for name, theta in (("theta1", fx.theta1), ("theta2", fx.theta2)):
        w = lp_minimize(data.predict_all(theta)[0], W).point
        print(
            f"{name} {theta}: decision {w}  target {target_loss(theta, data, W).value:g}  "
            f"cilo {cilo_loss(theta, fx.beta, data, W).value:g}  spo+ {spo_plus_loss(theta, data, W).value:g}  "
            f"slo {slo_loss(theta, data).value:g}"
        )
    pair = prox_pair(np.zeros(3), fx.beta, data, W, tol=1e-12)
    print(f"prox at 0: plain {np.round(pair.theta_plain, 6)}  budgeted {np.round(pair.theta_budget, 6)}")
    res = train_cilo(data, data, W, [fx.beta], GDConfig(max_iters=200))
    print(f"trained: theta {np.round(res.theta, 4)}  regret {regret(res.theta, data, W):.2e}  phase {res.phase}")


if __name__ == "__main__":
    main()
