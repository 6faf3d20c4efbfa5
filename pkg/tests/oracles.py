"""Independent reference constructions shared by several test modules."""
import numpy as np

from makoop.benchmark import ScaleConfig, SnapshotDataset
from makoop.dictionary import DictionarySpec


def identity_dictionaries(hier=False, n_agents=2):
    out = []
    for _ in range(n_agents):
        d = {"x": DictionarySpec(2, 0), "u": DictionarySpec(1, 0)}
        if hier:
            d["y"] = DictionarySpec(2, 0)
            d["w"] = DictionarySpec(1, 0)
        out.append(d)
    return out


def random_contraction(rng, n, rho):
    A = rng.standard_normal((n, n))
    return A * (rho / max(abs(np.linalg.eigvals(A))))


def flat_truth(rng, coupling=0.3):
    """Two agents, 2 states and 1 control each, in the structured K form."""
    K = {
        "Kxx": [[random_contraction(rng, 2, 0.8), coupling * rng.standard_normal((2, 2))],
                [coupling * rng.standard_normal((2, 2)), random_contraction(rng, 2, 0.7)]],
        "Kxu": [rng.standard_normal((2, 1)), rng.standard_normal((2, 1))],
    }
    return K


def flat_step(K, x, u):
    """Literal per-agent nested update on stacked raw states ``(N, 4)`` and controls ``(N, 2)``."""
    xs = [x[:, 0:2], x[:, 2:4]]
    out = []
    for i in range(2):
        j = 1 - i
        inp = xs[j] @ K["Kxx"][i][j].T + u[:, i:i + 1] @ K["Kxu"][i].T
        out.append((xs[i] - inp) @ K["Kxx"][i][i].T + inp)
    return np.hstack(out)


def flat_dataset(rng, K, n=400):
    x0 = rng.uniform(-1, 1, (n, 4))
    u = rng.uniform(-1, 1, (n, 2))
    return SnapshotDataset("flat", x0, u, flat_step(K, x0, u), ScaleConfig(), seed=0)


def hier_truth(rng, coupling=0.3):
    """Two-scale truth. Spectral radii and the fast-from-slow gain are kept
    moderate so the slow regressors (x and the window average of y) are not
    close to collinear; otherwise the default ridge bias is amplified past
    1e-6 when the structured blocks are factored out."""
    K = flat_truth(rng, coupling)
    K["Kxx"][0][0] = random_contraction(rng, 2, 0.6)
    K["Kxx"][1][1] = random_contraction(rng, 2, 0.5)
    K["Kxu"] = [np.zeros((2, 1)), np.zeros((2, 1))]
    K.update({
        "Kxy": [0.3 * rng.standard_normal((2, 2)) for _ in range(2)],
        "Kxw": [np.zeros((2, 1)) for _ in range(2)],
        "Kyy": [random_contraction(rng, 2, 0.5) for _ in range(2)],
        "Kyx": [0.5 * rng.standard_normal((2, 2)) for _ in range(2)],
        "Kyu": [rng.standard_normal((2, 1)) for _ in range(2)],
        "Kww": [np.array([[0.5]]), np.array([[-0.4]])],
        "Kwx": [np.zeros((1, 2)) for _ in range(2)],
        "Kwy": [rng.standard_normal((1, 2)) for _ in range(2)],
        "Kwu": [rng.standard_normal((1, 1)) for _ in range(2)],
    })
    return K


HIER_X = [slice(0, 2), slice(5, 7)]
HIER_Y = [slice(2, 4), slice(7, 9)]
HIER_W = [slice(4, 5), slice(9, 10)]


def hier_dataset(rng, K, n=300, m=2, half_width=2.0):
    """Exact two-scale lifted-linear data with identity lifts in the benchmark's raw layout.

    The data are linear, so the sampling box is arbitrary; a wider box shrinks
    the relative weight of the default ridge term.
    """
    s0 = rng.uniform(-half_width, half_width, (n, 10))
    u = rng.uniform(-half_width, half_width, (n, 2))
    fast = np.empty((n, m + 1, 10))
    fast[:, 0] = s0
    s1 = s0.copy()
    sum_y = [np.zeros((n, 2)) for _ in range(2)]
    for i in range(2):
        x, ui = s0[:, HIER_X[i]], u[:, i:i + 1]
        y, w = s0[:, HIER_Y[i]].copy(), s0[:, HIER_W[i]].copy()
        fy = x @ K["Kyx"][i].T + ui @ K["Kyu"][i].T
        for k in range(m):
            sum_y[i] += y
            fw = x @ K["Kwx"][i].T + y @ K["Kwy"][i].T + ui @ K["Kwu"][i].T
            y, w = (y - fy) @ K["Kyy"][i].T + fy, (w - fw) @ K["Kww"][i].T + fw
            fast[:, k + 1, HIER_Y[i]] = y
            fast[:, k + 1, HIER_W[i]] = w
        fast[:, 1:, HIER_X[i]] = x[:, None, :]
        s1[:, HIER_Y[i]] = y
        s1[:, HIER_W[i]] = w
    for i in range(2):
        j = 1 - i
        x = s0[:, HIER_X[i]]
        inp = s0[:, HIER_X[j]] @ K["Kxx"][i][j].T + (sum_y[i] / m) @ K["Kxy"][i].T
        s1[:, HIER_X[i]] = (x - inp) @ K["Kxx"][i][i].T + inp
    return SnapshotDataset("hier", s0, u, s1, ScaleConfig(0.1, m), seed=0, fast=fast)


def enumerate_lcp(M, q):
    """All complementary bases of a small LCP; returns every solution found."""
    n = len(q)
    sols = []
    for mask in range(2 ** n):
        act = np.array([(mask >> k) & 1 for k in range(n)], dtype=bool)  # z_k > 0 allowed
        z = np.zeros(n)
        if act.any():
            try:
                z[act] = np.linalg.solve(M[np.ix_(act, act)], -q[act])
            except np.linalg.LinAlgError:
                continue
        w = M @ z + q
        if np.all(z >= -1e-12) and np.all(w >= -1e-10):
            sols.append(z)
    return sols


def scalar_hier_model(n_agents=1, **blocks):
    """Hierarchical model with 1-dim identity lifts everywhere; unspecified blocks are zero."""
    from makoop.dictionary import DictionarySpec
    from makoop.koopman import HIER_BLOCKS, StructuredKoopman

    d = [{g: DictionarySpec(1, 0) for g in ("x", "u", "y", "w")} for _ in range(n_agents)]

    def val(name, i):
        v = blocks.get(name, 0.0)
        v = v[i] if isinstance(v, (list, tuple)) else v
        return np.array([[float(v)]])

    Kxx = [[val("Kxx" if i == j else "Kxx_cross", i) for j in range(n_agents)] for i in range(n_agents)]
    kw = {name: [val(name, i) for i in range(n_agents)] for name in HIER_BLOCKS}
    return StructuredKoopman("hier", d, Kxx, [np.zeros((1, 1))] * n_agents, **kw)


def random_hier_model(rng, sizes=(3, 2, 2), n_agents=2, rho=0.8):
    """Random stable hierarchical model with identity lifts of the given ``(x, y, w)`` sizes."""
    from makoop.dictionary import DictionarySpec
    from makoop.koopman import StructuredKoopman

    nx, ny, nw = sizes
    d = [{"x": DictionarySpec(nx, 0), "u": DictionarySpec(1, 0), "y": DictionarySpec(ny, 0),
          "w": DictionarySpec(nw, 0)} for _ in range(n_agents)]
    Kxx = [[random_contraction(rng, nx, rho) if i == j else 0.2 * rng.standard_normal((nx, nx))
            for j in range(n_agents)] for i in range(n_agents)]
    g = lambda r, c, s=0.5: [s * rng.standard_normal((r, c)) for _ in range(n_agents)]  # noqa: E731
    return StructuredKoopman(
        "hier", d, Kxx, [np.zeros((nx, 1))] * n_agents,
        Kxy=g(nx, ny), Kxw=g(nx, nw), Kyy=[random_contraction(rng, ny, rho) for _ in range(n_agents)],
        Kyx=g(ny, nx), Kyu=g(ny, 1), Kww=[random_contraction(rng, nw, rho) for _ in range(n_agents)],
        Kwx=g(nw, nx), Kwy=g(nw, ny), Kwu=g(nw, 1))


def scalar_game(a=(0.9, 0.8), c=(0.3, -0.2), b=(1.0, 0.5), x0=(1.0, -0.7), horizon=10,
                x_bounds=(-10.0, 10.0), u_bounds=(-10.0, 10.0), r=(1.0, 1.0)):
    """Two agents with one state and one control each; stage cost ``x_i^2 + r_i u_i^2``.

    ``c[i]`` is the effective coupling ``(1 - a_i) K_ij`` as it appears in the combined matrix.
    """
    from makoop.control import ControlProblem, CostModel
    from makoop.koopman import CombinedSystem

    A = np.array([[a[0], c[0]], [c[1], a[1]]])
    B = np.diag(b).astype(float)
    sys_ = CombinedSystem(A, B, [slice(0, 1), slice(1, 2)], [slice(0, 1), slice(1, 2)])
    costs = [CostModel(np.eye(1), np.zeros((1, 1)), r[i] * np.eye(1), np.zeros(1), np.zeros(1)) for i in range(2)]
    return ControlProblem(sys_, costs, np.array(x0, dtype=float), horizon, bounded=[[0], [0]],
                          x_bounds=x_bounds, u_bounds=u_bounds)


def best_response_iteration(a, c, b, x0, horizon, r=(1.0, 1.0), tol=1e-14, max_iter=10_000):
    """Gauss-Seidel best responses for the unconstrained scalar game.

    Agent ``i`` minimises ``sum_{t<T} x_i,t^2 + r_i u_i,t^2`` with the rival's
    state trajectory held fixed. Returns controls ``(T, 2)`` and states ``(T + 1, 2)``.
    """
    T = horizon
    X = np.zeros((T + 1, 2))
    X[0] = x0
    U = np.zeros((T, 2))

    def roll(i, u, xj):
        x = np.empty(T + 1)
        x[0] = x0[i]
        for t in range(T):
            x[t + 1] = a[i] * x[t] + c[i] * xj[t] + b[i] * u[t]
        return x

    for i in range(2):
        X[:, i] = roll(i, U[:, i], X[:, 1 - i])
    for _ in range(max_iter):
        change = 0.0
        for i in range(2):
            xj = X[:, 1 - i]
            base = roll(i, np.zeros(T), xj)  # affine part
            Phi = np.column_stack([roll(i, np.eye(T)[k], np.zeros(T + 1)) - roll(i, np.zeros(T), np.zeros(T + 1))
                                   for k in range(T)])
            S = slice(1, T)  # x_0 is fixed and x_T carries no cost
            Hm = Phi[S].T @ Phi[S] + r[i] * np.eye(T)
            u = np.linalg.solve(Hm, -Phi[S].T @ base[S])
            change = max(change, np.max(np.abs(u - U[:, i])))
            U[:, i] = u
            X[:, i] = base + Phi @ u
        if change < tol:
            return U, X
    raise RuntimeError("best-response iteration did not converge")
