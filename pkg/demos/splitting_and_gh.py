"""Splitting maps and Gromov-Hausdorff estimates.

A flat ball admits an exact splitting map, so its Gram and Hessian defects
sit at roundoff.  On the sphere the same construction picks up curvature.
The GH estimates compare balls with Euclidean balls.
"""

from katolab import constructions, convergence, generators


def main():
    for label, sp, r in (
        ("flat torus N=64", generators.generate_space("flat_torus", N=64), 0.1),
        ("sphere level 4", generators.generate_space("icosphere", level=4), 0.4),
    ):
        seeds = constructions.seed_coordinates(sp, 0, 2)
        smap = constructions.build_splitting_map(sp, None, 0, r, seeds)
        m = smap.metrics
        gh = convergence.ball_gh_to_euclidean(sp, 0, r, m_samples=80)
        print(f"{label}: eps_gram {m['eps_gram']:.1e}, eps_hess {m['eps_hess']:.1e}, "
              f"GH to Euclidean ball <= {gh.upper / r:.3f} r")

    X = generators.cycle(6).distance
    Y = generators.cycle(7).distance
    est = convergence.gh_distance_small(X, Y)
    print(f"cycles of 6 and 7 unit edges: d_GH = {est.upper:.3f} ({est.method})")


if __name__ == "__main__":
    main()
