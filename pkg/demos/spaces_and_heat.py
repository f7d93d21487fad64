"""Tour of the built-in spaces: size, curvature and the heat semigroup."""

import numpy as np

from katolab import generators, geometry, heat

SPACES = {
    "flat torus": ("flat_torus", {"N": 24}),
    "round sphere": ("icosphere", {"level": 3}),
    "ellipsoid": ("ellipsoid", {"a": 1.0, "b": 0.8, "c": 0.6, "level": 3}),
    "dumbbell": ("dumbbell", {"level": 3}),
    "cycle": ("cycle", {"N": 64, "circumference": 2 * np.pi}),
    "cone": ("cone_graph", {"angle": 1.5 * np.pi, "N": 10}),
}


def main():
    print(f"{'space':14s} {'verts':>6s} {'n':>2s} {'measure':>8s} {'min K':>8s} {'lambda_1':>9s} {'mass err':>9s}")
    for label, (name, params) in SPACES.items():
        sp = generators.generate_space(name, **params)
        K = geometry.gaussian_curvature(sp.mesh).min() if sp.mesh is not None else np.nan
        h = heat.heat_handle(sp, m=None if sp.vertex_count <= heat.DENSE_LIMIT else 12)
        lam1 = h.spectral.eigenvalues[1]
        t = 0.01 * sp.diameter**2
        err = abs(heat.stochastic_mass(h, t, 0) - 1.0)
        print(f"{label:14s} {sp.vertex_count:6d} {sp.n:2d} {sp.total_measure:8.4f} {K:8.3f} {lam1:9.4f} {err:9.1e}")
    # on the unit sphere lambda_1 = 2 and on the 2 pi cycle lambda_1 = 1


if __name__ == "__main__":
    main()
