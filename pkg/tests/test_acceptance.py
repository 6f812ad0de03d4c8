"""Release gate: one test per acceptance criterion.

Every test prints a `criterion N ... PASS/FAIL` line on the unbuffered
terminal stream, so a run emits a one-line verdict per criterion even with
output capture on.  Tolerances and time budgets are asserted inside the
tests themselves.
"""

import functools
import sys
import time

import numpy as np

from ccsolid.hexmesh import HexMesh, OPPOSITE_CORNER, vertex_star
from ccsolid.iga import (Assembly, BoundaryConditions, DirichletSpec,
                         LoadSpec, Material, density_factors,
                         element_stiffness_elastic, element_stiffness_heat,
                         solve_system, subelement_stiffness,
                         subelement_stiffness_heat)
from ccsolid.spline import (approximation_error, build_spline_model,
                            fully_regular_cells, regular_box_model,
                            regular_vertex_mask)
from ccsolid.subdivision import (limit_point, limit_points, limit_weights,
                                 local_subdivision_matrix)
from ccsolid.topopt import (BesoConfig, SensitivityFilter, density_adjacency,
                            density_field, filter_sensitivities, optimize,
                            sensitivities)
from meshes import icosa_split, lattice, tet_split

BIG = 1e9


def _emit(line):
    print(line, file=sys.__stdout__, flush=True)


def criterion(num, name):
    """Decorator printing the per-criterion verdict line."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException:
                _emit("criterion %2d (%s): FAIL" % (num, name))
                raise
            dt = time.perf_counter() - t0
            _emit("criterion %2d (%s): PASS [%.2f s]%s"
                  % (num, name, dt, "  " + detail if detail else ""))
        return wrapper
    return deco


# ---------------------------------------------------------------------------
# 1: the regular 27x27 subdivision matrix reproduces every printed weight


def _assert_row(row, expected, tol=1e-15):
    want = np.sort(np.concatenate([np.full(c, v) for v, c in expected]))
    got = np.sort(row)
    assert got.shape == want.shape
    assert np.abs(got - want).max() <= tol


@criterion(1, "regular subdivision matrix")
def test_criterion_01_regular_matrix_entries():
    t0 = time.perf_counter()
    mesh, vid = lattice(2, 2, 2)
    S = local_subdivision_matrix(mesh, vid[(1, 1, 1)])
    assert S.shape == (27, 27)
    _assert_row(S[0], [(27 / 64, 1), (9 / 128, 6), (3 / 256, 12),
                       (1 / 512, 8)])
    for j in range(1, 7):
        _assert_row(S[j], [(9 / 32, 2), (3 / 64, 8), (1 / 128, 8), (0.0, 9)])
    for j in range(7, 19):
        _assert_row(S[j], [(3 / 16, 4), (1 / 32, 8), (0.0, 15)])
    for j in range(19, 27):
        _assert_row(S[j], [(1 / 8, 8), (0.0, 19)])
    assert time.perf_counter() - t0 < 1.0
    return "all 10 printed weights to 1e-15"


# ---------------------------------------------------------------------------
# 2: affine invariance and the dominant left eigenvector


@criterion(2, "eigen-structure")
def test_criterion_02_eigen_structure():
    cases = []
    mesh, vid = lattice(4, 4, 4)
    cases.append(mesh)
    for build in (tet_split, icosa_split):
        cases.append(build()[0])
    checked = 0
    for mesh in cases:
        for v in np.flatnonzero(~mesh.boundary_vertex_mask):
            S = local_subdivision_matrix(mesh, v)
            assert np.abs(S.sum(axis=1) - 1.0).max() <= 1e-14
            ev = np.sort(np.abs(np.linalg.eigvals(S)))[::-1]
            assert abs(ev[0] - 1.0) <= 1e-12
            assert ev[1] < 1.0 - 1e-6  # dominant eigenvalue simple
            l = limit_weights(vertex_star(mesh, v)).vector
            assert np.abs(l @ S - l).max() <= 1e-12
            checked += 1
    assert checked == 27 + 1 + 1
    return "%d interior vertices over 3 meshes" % checked


# ---------------------------------------------------------------------------
# 3: the limit formula against brute-force matrix powers


def _star_order(mesh, v):
    star = vertex_star(mesh, v)
    order = [v]
    for e in star.edges:
        a, b = mesh.edges[e]
        order.append(int(b) if a == v else int(a))
    for f in star.faces:
        cyc = mesh.face_cycles[f].tolist()
        order.append(cyc[(cyc.index(v) + 2) % 4])
    for c in star.cells:
        cell = mesh.cells[c].tolist()
        order.append(cell[OPPOSITE_CORNER[cell.index(v)]])
    return order


@criterion(3, "limit point oracle")
def test_criterion_03_limit_vs_power_iteration():
    t0 = time.perf_counter()
    mesh, vid = lattice(4, 4, 4)
    v = vid[(2, 2, 2)]
    ring = _star_order(mesh, v)
    S30 = np.linalg.matrix_power(local_subdivision_matrix(mesh, v), 30)
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        verts = mesh.vertices + rng.uniform(-0.3, 0.3, mesh.vertices.shape)
        jittered = HexMesh(verts, mesh.cells)
        diag = np.linalg.norm(verts.max(axis=0) - verts.min(axis=0))
        err = np.linalg.norm(limit_point(jittered, v) - S30[0] @ verts[ring])
        assert err <= 1e-9 * diag
        worst = max(worst, err / diag)
    assert time.perf_counter() - t0 < 5.0
    return "worst error %.1e of bbox diagonal" % worst


# ---------------------------------------------------------------------------
# 4: regular cells carry the exact B-spline geometry


def _bez1d(P):
    """Cubic Bezier ordinates of the middle span of 4 uniform B-spline
    control values, applied along the first axis."""
    return np.stack([(P[0] + 4.0 * P[1] + P[2]) / 6.0,
                     (2.0 * P[1] + P[2]) / 3.0,
                     (P[1] + 2.0 * P[2]) / 3.0,
                     (P[1] + 4.0 * P[2] + P[3]) / 6.0])


def _bspline_net(block):
    out = block
    for ax in range(3):
        out = np.moveaxis(_bez1d(np.moveaxis(out, ax, 0)), 0, ax)
    return out


@criterion(4, "regular Bezier exactness")
def test_criterion_04_regular_nets_match_bspline_conversion():
    mesh, vid = lattice(4, 4, 4)
    model = build_spline_model(mesh)
    regular = fully_regular_cells(mesh)
    assert regular.sum() == 8  # the 2x2x2 central block
    grid = np.empty((5, 5, 5, 3))
    for (i, j, k), p in vid.items():
        grid[i, j, k] = mesh.vertices[p]
    base = {int(mesh.cells[c, 0]): c for c in range(mesh.num_cells)}
    corner = {p: ijk for ijk, p in vid.items()}
    for c in np.flatnonzero(regular):
        i, j, k = corner[int(mesh.cells[c, 0])]
        oracle = _bspline_net(grid[i - 1:i + 3, j - 1:j + 3, k - 1:k + 3])
        net = model.bezier_volume(c).points
        assert np.abs(net - oracle).max() <= 1e-12
    stats = approximation_error(mesh, model, depth=2)
    reg_max = stats.distances[stats.regular_interior].max()
    assert stats.regular_interior.any()
    assert reg_max <= 1e-12
    return "8 nets entrywise, depth-2 regular samples %.1e" % reg_max


# ---------------------------------------------------------------------------
# 5: corner control points interpolate the limit solid


@criterion(5, "corner interpolation")
def test_criterion_05_corners_equal_limit_points():
    mesh, _ = lattice(4, 4, 4)
    model = build_spline_model(mesh)
    lim, _bnd = limit_points(mesh)
    mask = regular_vertex_mask(mesh)
    assert mask.sum() == 27
    gap = np.abs(model.points[:mesh.num_vertices][mask] - lim[mask]).max()
    assert gap <= 1e-14
    notes = []
    rng = np.random.default_rng(3)
    for build, tag in ((tet_split, "valence 4"), (icosa_split, "valence 12")):
        m, vid = build()
        # symmetric stars hide the gap, so perturb the geometry
        m = HexMesh(m.vertices + rng.uniform(-0.05, 0.05, m.vertices.shape),
                    m.cells)
        v = vid[("c",)]
        d = np.linalg.norm(build_spline_model(m).points[v] - limit_point(m, v))
        notes.append("%s gap %.3e" % (tag, d))
    # extraordinary corners do not interpolate; report the gap
    _emit("criterion  5 diagnostic: extraordinary %s" % ", ".join(notes))
    return "regular gap %.1e" % gap


# ---------------------------------------------------------------------------
# 6: classical patch tests


def _interior_basis_mask(mesh, model):
    """Control points whose basis functions vanish on the model boundary:
    points attached to interior vertices/edges/faces plus all cell points."""
    nv, ne, nf = mesh.num_vertices, mesh.num_edges, mesh.num_faces
    free = np.ones(model.num_control_points, dtype=bool)
    free[:nv] = ~mesh.boundary_vertex_mask
    free[nv:nv + 2 * ne] = np.repeat(~mesh.boundary_edge_mask, 2)
    free[nv + 2 * ne:nv + 2 * ne + 4 * nf] = \
        np.repeat(~mesh.boundary_face_mask, 4)
    return free


def _dense(asm, K_cells):
    K = np.zeros((asm.ndof, asm.ndof))
    for c in range(asm.num_cells):
        K[np.ix_(asm.dofmap[c], asm.dofmap[c])] += K_cells[c]
    return K


def _patch_solve(asm, free, exact):
    """Pin the boundary-coupled dofs to the exact coefficients, solve the
    rest, and return the largest deviation from the exact field."""
    K = _dense(asm, asm.aggregate(np.ones((asm.num_cells, asm.nsub))))
    F = np.flatnonzero(free)
    P = np.flatnonzero(~free)
    u = exact.copy()
    u[F] = np.linalg.solve(K[np.ix_(F, F)], -K[np.ix_(F, P)] @ exact[P])
    return np.abs(u - exact).max()


@criterion(6, "patch tests")
def test_criterion_06_patch_tests():
    mesh, _ = lattice(3, 3, 3)
    model = build_spline_model(mesh)
    free = _interior_basis_mask(mesh, model)
    mat = Material(1.0, 0.3)

    # degree-8 integrands (adjugate times basis gradient): order >= 5 exact
    t0 = time.perf_counter()
    heat = Assembly(model, "heat", quad_order=6)
    err_h = _patch_solve(heat, free, model.points[:, 0].copy())
    assert err_h <= 1e-10
    assert time.perf_counter() - t0 < 10.0

    t0 = time.perf_counter()
    elastic = Assembly(model, "elasticity", mat, quad_order=6)
    A = np.array([[0.2, 0.1, 0.0], [0.05, -0.1, 0.15], [0.0, 0.1, 0.3]])
    exact = (model.points @ A.T + [0.3, -0.2, 0.1]).reshape(-1)
    err_e = _patch_solve(elastic, np.repeat(free, 3), exact)
    assert err_e <= 1e-9
    assert time.perf_counter() - t0 < 10.0

    t0 = time.perf_counter()
    vol = model.bezier_volume(0)  # a curved corner patch
    K = element_stiffness_elastic(vol, mat)
    assert np.abs(K - K.T).max() <= 1e-12 * np.abs(K).max()
    w = np.linalg.eigvalsh(K)
    assert (np.abs(w) <= 1e-9 * w[-1]).sum() == 6
    X = vol.points.reshape(64, 3)
    modes = [np.tile(np.eye(3)[d], 64) for d in range(3)]
    for a, b in ((0, 1), (0, 2), (1, 2)):
        W = np.zeros((3, 3))
        W[a, b], W[b, a] = 1.0, -1.0
        modes.append((X @ W.T).reshape(-1))
    for r in modes:
        assert np.linalg.norm(K @ r) <= 1e-9 * w[-1] * np.linalg.norm(r)
    assert time.perf_counter() - t0 < 10.0
    return "T=x %.1e, linear elastic %.1e, 6 rigid modes" % (err_h, err_e)


# ---------------------------------------------------------------------------
# 7: sensitivities against central differences


class _Rho:
    version = 0

    def __init__(self, level, rho):
        self.level = level
        self.rho = np.asarray(rho, dtype=float)


@criterion(7, "sensitivity finite differences")
def test_criterion_07_sensitivities_match_finite_differences():
    model = regular_box_model((1, 1, 1))
    mat = Material(1.0, 0.3, p=3.0, mu_min=1e-7)
    bcs = BoundaryConditions(
        dirichlet=[DirichletSpec((-BIG, -BIG, -BIG), (0.5, BIG, BIG),
                                 (0, 1, 2))],
        loads=[LoadSpec((0.5, -BIG, -BIG), (BIG, BIG, BIG), (0, 0, -1.0))])
    asm = Assembly(model, "elasticity", mat, level=1)
    rng = np.random.default_rng(11)
    rho = 0.3 + 0.7 * rng.random((1, 8))

    def compliance(r):
        K = asm.aggregate(density_factors(_Rho(1, r), mat))
        return solve_system(asm, K, bcs, method="dense").compliance

    K = asm.aggregate(density_factors(_Rho(1, rho), mat))
    sol = solve_system(asm, K, bcs, method="dense")
    alpha = sensitivities(sol, asm, _Rho(1, rho))
    h = 1e-6
    worst = 0.0
    for i in range(8):
        dp, dm = rho.copy(), rho.copy()
        dp.flat[i] += h
        dm.flat[i] -= h
        fd = -(compliance(dp) - compliance(dm)) / (2 * h)
        worst = max(worst, abs(alpha[i] - fd) / abs(fd))
    assert worst <= 1e-5
    # the simplified derivative drops the (1 - mu_min) chain factor
    alpha_pe = sensitivities(sol, asm, _Rho(1, rho),
                             paper_exact_sensitivity=True)
    drift = np.abs(alpha_pe / alpha - 1.0).max()
    assert np.isclose(drift, mat.mu_min / (1 - mat.mu_min), rtol=1e-6)
    _emit("criterion  7 diagnostic: paper_exact_sensitivity relative "
          "drift %.3e (= mu_min/(1-mu_min))" % drift)
    return "8 densities, worst relative error %.1e" % worst


# ---------------------------------------------------------------------------
# 8: dyadic sub-element integration is consistent


@criterion(8, "multi-resolution additivity")
def test_criterion_08_subelement_additivity():
    model = regular_box_model((2, 1, 1))
    mat = Material(2.0, 0.25)
    vol = model.bezier_volume(1)
    parent = element_stiffness_elastic(vol, mat)
    total = np.zeros_like(parent)
    for i in range(2):
        for j in range(2):
            for k in range(2):
                total += subelement_stiffness(vol, 1, (i, j, k), mat)
    rel = np.linalg.norm(total - parent) / np.linalg.norm(parent)
    assert rel <= 1e-10

    parent_h = element_stiffness_heat(vol)
    total_h = sum(subelement_stiffness_heat(vol, 1, (i, j, k))
                  for i in range(2) for j in range(2) for k in range(2))
    rel_h = np.linalg.norm(total_h - parent_h) / np.linalg.norm(parent_h)
    assert rel_h <= 1e-10

    # level 0 must be the single-resolution assembly, bit for bit
    asm = Assembly(model, "elasticity", mat, level=0)
    K0 = asm.aggregate(np.ones((model.num_cells, 1)))
    singles = np.stack([element_stiffness_elastic(model.bezier_volume(c), mat)
                        for c in range(model.num_cells)])
    assert np.array_equal(K0, singles)
    return "relative Frobenius %.1e (elastic) %.1e (heat), s=0 bitwise" \
        % (rel, rel_h)


# ---------------------------------------------------------------------------
# 9: the full cantilever optimization run


@criterion(9, "beso cantilever run")
def test_criterion_09_beso_cantilever(tmp_path):
    mesh, _ = lattice(4, 2, 2)
    bcs = BoundaryConditions(
        dirichlet=[DirichletSpec((-BIG, -BIG, -BIG), (0.125, BIG, BIG),
                                 (0, 1, 2))],
        loads=[LoadSpec((4.0 - 0.125, -BIG, -BIG), (BIG, BIG, BIG),
                        (0.0, 0.0, -1.0))])
    # the 92k-dof system needs ~36 warm solves inside the time budget, so
    # the run uses the heavier solver stack: two-level preconditioning,
    # float32 matvec, a compliance-scale tolerance and a softer kill floor
    # (the checks below depend on none of those knobs)
    cfg = BesoConfig(v_star=0.5, er=0.02, level=1, max_iterations=60,
                     rtol=2e-3, precond="twolevel", single_precision=True)
    rec = []

    def cb(state, sol):
        rec.append((state.iteration, state.target_volume,
                    state.density.retained_volume,
                    state.density.alive.reshape(-1).copy(), sol.compliance))

    out = tmp_path / "run"
    t0 = time.perf_counter()
    dens, hist = optimize(mesh, cfg, Material(1.0, 0.3, mu_min=1e-2), bcs,
                          subdivide=2, out_dir=str(out), callback=cb)
    wall = time.perf_counter() - t0
    assert wall < 120.0

    assert dens.rho.shape == (1024, 8)
    total = dens.total_volume
    maxvol = dens.volumes.max()
    prev_alive = np.ones(dens.num_elements, dtype=bool)
    for k, target, retained, alive, comp in rec:
        sched = max(0.5, 0.98 ** k) * total
        assert np.isclose(target, sched, rtol=1e-12)
        # retained volume stays within one density-element of the schedule
        assert retained <= target * (1.0 + 1e-12)
        assert target - retained <= maxvol * (1.0 + 1e-12)
        assert np.isfinite(comp)
        assert not (alive & ~prev_alive).any()  # deletion only
        prev_alive = alive
    assert abs(dens.volume_fraction - 0.5) <= maxvol / total
    assert np.isfinite(hist[-1][1])

    lines = (out / "history.csv").read_text().splitlines()
    assert lines[0] == "iter,compliance,volume_fraction,killed_count"
    assert len(lines) == len(hist) + 1
    for row, line in zip(hist, lines[1:]):
        it, comp, frac, killed = line.split(",")
        assert int(it) == row[0] and int(killed) == row[3]
        assert np.isclose(float(comp), row[1], rtol=1e-15)
        assert np.isclose(float(frac), row[2], rtol=1e-15)
    return "%d iterations in %.0f s, final fraction %.4f, compliance %.4g" \
        % (len(hist), wall, dens.volume_fraction, hist[-1][1])


# ---------------------------------------------------------------------------
# 10: the sensitivity filter


@criterion(10, "sensitivity filter")
def test_criterion_10_filter_properties():
    centroids = np.array([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5], [2.5, 0.5, 0.5]])
    adjacency = [np.array([1]), np.array([0, 2]), np.array([1])]
    ahat = filter_sensitivities(np.array([0.0, 1.0, 0.0]), centroids,
                                adjacency)
    assert ahat[1] == 0.5  # exact: weights (1, 2, 1) around the middle
    assert np.allclose(ahat, [1 / 3.0, 0.5, 1 / 3.0])

    mesh, _ = lattice(3, 3, 3)
    model = build_spline_model(mesh)
    dens = density_field(model, 1)
    filt = SensitivityFilter(dens.centroids, density_adjacency(mesh, 1))
    rng = np.random.default_rng(23)
    n = dens.num_elements
    for _ in range(1000):
        a = rng.standard_normal(n) * 10.0 ** rng.integers(-3, 4)
        ah = filt.apply(a)
        assert ah.min() >= a.min() - 1e-12 * max(1.0, abs(a.min()))
        assert ah.max() <= a.max() + 1e-12 * max(1.0, abs(a.max()))
        c = float(10 ** rng.uniform(-3, 3))
        assert np.argmin(filt.apply(c * a)) == np.argmin(ah)
    return "hand example exact, %d random vectors" % 1000
