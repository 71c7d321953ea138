"""
Counting the Scott-Vogelius pressure space.  Singular vertices (where all
edges lie on two lines) remove one pressure degree of freedom each; the
count is checked against the numerical rank of the global divergence
matrix, and the discrete inf-sup constant is estimated for several degrees.
"""
from svscip.analysis import global_div_rank, infsup_estimate
from svscip.mesh import classify_vertices, gen_crisscross, gen_square_diagonal, pressure_space_dim

meshes = {
    "two triangles": gen_square_diagonal(),
    "criss-cross 1x1": gen_crisscross(1, 1),
    "criss-cross 2x2": gen_crisscross(2, 2),
    "criss-cross 2x2, right side free": gen_crisscross(2, 2, neumann_sides=("right",)),
}

for name, mesh in meshes.items():
    cls = classify_vertices(mesh)
    print(f"{name}: {mesh.n_triangles} triangles, singular interior vertices "
          f"{list(cls.singular_interior)}")
    for p in (4, 5, 6):
        print(f"  p={p}: predicted dim {pressure_space_dim(mesh, p, cls):4d}, "
              f"divergence rank {global_div_rank(mesh, p):4d}")

mesh = meshes["criss-cross 1x1"]
betas = [infsup_estimate(mesh, p) for p in range(4, 9)]
print("inf-sup estimates on the 1x1 criss-cross, p = 4..8:", " ".join(f"{b:.3f}" for b in betas))
